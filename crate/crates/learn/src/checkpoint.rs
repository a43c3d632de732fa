//! Binary checkpoint format for [`Mlp`] parameters.
//!
//! Layout, all integers little-endian:
//!
//! | bytes | content |
//! |-------|---------|
//! | 8     | format tag `MMPOSNN\0` |
//! | 4     | format version (u32, currently 1) |
//! | 1     | output activation (0 linear, 1 tanh) |
//! | 4     | number of widths L (u32) |
//! | 4·L   | layer widths (u32 each) |
//! | 8     | parameter count P (u64) |
//! | 8·P   | parameters as f64, layer by layer: weight (row-major, in × out) then bias |

use std::io::{Read, Write};
use std::path::Path;

use crate::error::{Error, Result};
use crate::mlp::{Mlp, MlpSpec, OutputActivation};
use ndarray::Array2;

pub const FORMAT_TAG: &[u8; 8] = b"MMPOSNN\0";
pub const FORMAT_VERSION: u32 = 1;

fn bad(msg: impl Into<String>) -> Error {
    Error::Checkpoint(msg.into())
}

pub fn write_mlp<W: Write>(mut w: W, net: &Mlp) -> Result<()> {
    let spec = net.spec();
    w.write_all(FORMAT_TAG)?;
    w.write_all(&FORMAT_VERSION.to_le_bytes())?;
    w.write_all(&[spec.output_activation().code()])?;
    w.write_all(&(spec.widths().len() as u32).to_le_bytes())?;
    for &width in spec.widths() {
        w.write_all(&(width as u32).to_le_bytes())?;
    }
    w.write_all(&(spec.n_params() as u64).to_le_bytes())?;
    for p in net.params() {
        for v in p.iter() {
            w.write_all(&v.to_le_bytes())?;
        }
    }
    Ok(())
}

fn read_array<const N: usize, R: Read>(r: &mut R) -> Result<[u8; N]> {
    let mut buf = [0u8; N];
    r.read_exact(&mut buf)
        .map_err(|e| bad(format!("truncated checkpoint: {e}")))?;
    Ok(buf)
}

pub fn read_mlp<R: Read>(mut r: R) -> Result<Mlp> {
    let tag: [u8; 8] = read_array(&mut r)?;
    if &tag != FORMAT_TAG {
        return Err(bad("not a network checkpoint (bad format tag)"));
    }
    let version = u32::from_le_bytes(read_array(&mut r)?);
    if version != FORMAT_VERSION {
        return Err(bad(format!("unsupported checkpoint version {version}, expected {FORMAT_VERSION}")));
    }
    let [code] = read_array::<1, _>(&mut r)?;
    let activation = OutputActivation::from_code(code).ok_or_else(|| bad(format!("unknown activation code {code}")))?;
    let n_widths = u32::from_le_bytes(read_array(&mut r)?) as usize;
    if !(2..=1024).contains(&n_widths) {
        return Err(bad(format!("implausible layer count {n_widths}")));
    }
    let widths = (0..n_widths)
        .map(|_| Ok(u32::from_le_bytes(read_array(&mut r)?) as usize))
        .collect::<Result<Vec<_>>>()?;
    let spec = MlpSpec::from_widths(widths, activation).map_err(|e| bad(e.to_string()))?;
    let count = u64::from_le_bytes(read_array(&mut r)?);
    if count != spec.n_params() as u64 {
        return Err(bad(format!("parameter count {count} does not match widths ({})", spec.n_params())));
    }
    let mut params = Vec::new();
    for shape in spec.param_shapes() {
        let mut values = Vec::with_capacity(shape.0 * shape.1);
        for _ in 0..shape.0 * shape.1 {
            values.push(f64::from_le_bytes(read_array(&mut r)?));
        }
        params.push(Array2::from_shape_vec(shape, values).expect("sized above"));
    }
    let mut rest = [0u8; 1];
    if r.read(&mut rest)? != 0 {
        return Err(bad("trailing bytes after parameters"));
    }
    Mlp::from_params(spec, params)
}

pub fn save_mlp(path: &Path, net: &Mlp) -> Result<()> {
    let file = std::fs::File::create(path)?;
    let mut w = std::io::BufWriter::new(file);
    write_mlp(&mut w, net)?;
    w.flush()?;
    Ok(())
}

pub fn load_mlp(path: &Path) -> Result<Mlp> {
    let file = std::fs::File::open(path)?;
    read_mlp(std::io::BufReader::new(file))
}

/// Loads a checkpoint and checks it has the expected layer plan.
pub fn load_mlp_expecting(path: &Path, expected: &MlpSpec) -> Result<Mlp> {
    let net = load_mlp(path)?;
    if net.spec() != expected {
        return Err(bad(format!(
            "{}: layer widths {:?} ({:?}) do not match expected {:?} ({:?})",
            path.display(),
            net.spec().widths(),
            net.spec().output_activation(),
            expected.widths(),
            expected.output_activation()
        )));
    }
    Ok(net)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn sample() -> Mlp {
        let spec = MlpSpec::new(3, &[4, 5], 2, OutputActivation::Tanh).unwrap();
        spec.init(&mut ChaCha8Rng::seed_from_u64(9))
    }

    #[test]
    fn header_layout() {
        let mut buf = Vec::new();
        write_mlp(&mut buf, &sample()).unwrap();
        assert_eq!(&buf[..8], FORMAT_TAG);
        assert_eq!(u32::from_le_bytes(buf[8..12].try_into().unwrap()), 1);
        assert_eq!(buf[12], 1);
        assert_eq!(u32::from_le_bytes(buf[13..17].try_into().unwrap()), 4);
        let header = 8 + 4 + 1 + 4 + 16 + 8;
        assert_eq!(buf.len(), header + 8 * sample().spec().n_params());
        let first = f64::from_le_bytes(buf[header..header + 8].try_into().unwrap());
        assert_eq!(first, sample().params()[0][[0, 0]]);
    }

    #[test]
    fn version_mismatch_is_rejected() {
        let mut buf = Vec::new();
        write_mlp(&mut buf, &sample()).unwrap();
        buf[8] = 2;
        let err = read_mlp(&buf[..]).unwrap_err();
        assert!(err.to_string().contains("version"));
    }

    #[test]
    fn truncation_and_trailing_bytes_are_rejected() {
        let mut buf = Vec::new();
        write_mlp(&mut buf, &sample()).unwrap();
        assert!(read_mlp(&buf[..buf.len() - 1]).is_err());
        buf.push(0);
        assert!(read_mlp(&buf[..]).is_err());
    }

    #[test]
    fn expected_spec_is_enforced() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("net.bin");
        save_mlp(&path, &sample()).unwrap();
        assert_eq!(load_mlp_expecting(&path, sample().spec()).unwrap(), sample());
        let other = MlpSpec::new(3, &[4, 6], 2, OutputActivation::Tanh).unwrap();
        assert!(load_mlp_expecting(&path, &other).is_err());
    }
}
