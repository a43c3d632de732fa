//! Pilot observation model `y = alpha (F^T a(theta)) .* s + n`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};
use serde::{Deserialize, Serialize};

use crate::array::ArrayModel;
use crate::{Error, Result};

/// Tolerance on the unit Frobenius norm of a [`PrecoderMatrix`].
pub const PRECODER_NORM_TOL: f64 = 1e-9;

pub fn frobenius_norm(f: ArrayView2<Complex64>) -> f64 {
    f.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// `N_tx x T` precoder with unit Frobenius norm.
#[derive(Debug, Clone, PartialEq)]
pub struct PrecoderMatrix {
    f: Array2<Complex64>,
}

impl PrecoderMatrix {
    /// Scales `f` to unit Frobenius norm.
    pub fn normalized(f: Array2<Complex64>) -> Result<Self> {
        let norm = frobenius_norm(f.view());
        if !(norm > 0.0) || !norm.is_finite() {
            return Err(Error::domain("cannot normalize a zero or non-finite precoder"));
        }
        Ok(Self {
            f: f.mapv(|z| z / norm),
        })
    }

    /// Wraps an already normalized matrix.
    pub fn new(f: Array2<Complex64>) -> Result<Self> {
        let norm = frobenius_norm(f.view());
        if (norm - 1.0).abs() > PRECODER_NORM_TOL {
            return Err(Error::domain(format!("precoder Frobenius norm is {norm}, expected 1")));
        }
        Ok(Self { f })
    }

    pub fn matrix(&self) -> ArrayView2<'_, Complex64> {
        self.f.view()
    }

    pub fn into_matrix(self) -> Array2<Complex64> {
        self.f
    }

    pub fn n_tx(&self) -> usize {
        self.f.nrows()
    }

    pub fn n_transmissions(&self) -> usize {
        self.f.ncols()
    }

    /// Aggregate beampattern `||F^T a(theta)||^2`.
    pub fn aggregate_gain(&self, array: &ArrayModel, theta: f64) -> f64 {
        self.f.t().dot(&array.steering(theta)).iter().map(|z| z.norm_sqr()).sum()
    }
}

/// One BS's received pilot sequence.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub y: Array1<Complex64>,
    pub snr_db: f64,
    pub bs_index: usize,
}

/// Channel gain with unit magnitude and the noise variance implied by the
/// SNR, `sigma^2 = 10^(-SNR/10)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct GainModel {
    pub phase: f64,
    pub snr_db: f64,
}

impl GainModel {
    pub fn new(phase: f64, snr_db: f64) -> Self {
        Self { phase, snr_db }
    }

    /// Uniform phase in `[0, 2 pi)`.
    pub fn draw<R: Rng + ?Sized>(rng: &mut R, snr_db: f64) -> Self {
        Self {
            phase: rng.random_range(0.0..2.0 * PI),
            snr_db,
        }
    }

    pub fn alpha(&self) -> Complex64 {
        Complex64::from_polar(1.0, self.phase)
    }

    pub fn noise_var(&self) -> f64 {
        snr_to_noise_var(self.snr_db)
    }
}

pub fn snr_to_noise_var(snr_db: f64) -> f64 {
    10f64.powf(-snr_db / 10.0)
}

/// Unit pilots.
pub fn unit_pilots(t: usize) -> Array1<Complex64> {
    Array1::from_elem(t, Complex64::new(1.0, 0.0))
}

/// `(F^T a) .* s`.
pub fn noiseless_response(
    f: ArrayView2<Complex64>,
    a: ArrayView1<Complex64>,
    s: ArrayView1<Complex64>,
) -> Result<Array1<Complex64>> {
    if f.nrows() != a.len() || f.ncols() != s.len() {
        return Err(Error::dimension(format!(
            "precoder {:?}, steering {}, pilots {}",
            f.dim(),
            a.len(),
            s.len()
        )));
    }
    if s.iter().any(|z| (z.norm_sqr() - 1.0).abs() > 1e-12) {
        return Err(Error::domain("pilots must have unit modulus"));
    }
    Ok(f.t().dot(&a) * &s)
}

/// Draws circularly-symmetric complex Gaussian noise with variance `var`.
pub fn complex_noise<R: Rng + ?Sized>(rng: &mut R, len: usize, var: f64) -> Array1<Complex64> {
    if var == 0.0 {
        return Array1::zeros(len);
    }
    let normal = Normal::new(0.0, (var / 2.0).sqrt()).expect("finite noise std");
    (0..len)
        .map(|_| Complex64::new(normal.sample(rng), normal.sample(rng)))
        .collect()
}

/// Observation through the true (possibly impaired) array.
pub fn simulate_observation<R: Rng + ?Sized>(
    rng: &mut R,
    f: ArrayView2<Complex64>,
    theta: f64,
    gain: &GainModel,
    array: &ArrayModel,
    s: ArrayView1<Complex64>,
) -> Result<Observation> {
    simulate_with_gain(rng, f, theta, gain.alpha(), gain.noise_var(), array, s, gain.snr_db, 0)
}

#[allow(clippy::too_many_arguments)]
pub(crate) fn simulate_with_gain<R: Rng + ?Sized>(
    rng: &mut R,
    f: ArrayView2<Complex64>,
    theta: f64,
    alpha: Complex64,
    noise_var: f64,
    array: &ArrayModel,
    s: ArrayView1<Complex64>,
    snr_db: f64,
    bs_index: usize,
) -> Result<Observation> {
    let mu = noiseless_response(f, array.steering(theta).view(), s)? * alpha;
    let y = mu + complex_noise(rng, s.len(), noise_var);
    Ok(Observation { y, snr_db, bs_index })
}

/// Inclusive arithmetic SNR grid in dB.
pub fn snr_sweep_grid(start_db: f64, stop_db: f64, step_db: f64) -> Result<Vec<f64>> {
    if !(step_db > 0.0) {
        return Err(Error::domain(format!("SNR step must be positive, got {step_db}")));
    }
    if stop_db < start_db {
        return Err(Error::domain(format!("empty SNR grid {start_db}..{stop_db}")));
    }
    let n = ((stop_db - start_db) / step_db + 1e-9).floor() as usize + 1;
    Ok((0..n).map(|i| start_db + step_db * i as f64).collect())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 10.7e-3;

    #[test]
    fn matched_single_beam_gives_array_gain() {
        let arr = ArrayModel::ideal(32, LAMBDA);
        let a = arr.steering(0.6);
        let norm = a.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        let f = a.mapv(|z| z.conj() / norm).insert_axis(ndarray::Axis(1));
        let r = noiseless_response(f.view(), a.view(), unit_pilots(1).view()).unwrap();
        assert!((r[0] - Complex64::new(32f64.sqrt(), 0.0)).norm() < 1e-12);
        assert!((r[0].re - 5.657).abs() < 1e-3);
    }

    #[test]
    fn zero_precoder_and_unit_pilots() {
        let arr = ArrayModel::ideal(8, LAMBDA);
        let a = arr.steering(0.2);
        let f = Array2::<Complex64>::zeros((8, 4));
        let r = noiseless_response(f.view(), a.view(), unit_pilots(4).view()).unwrap();
        assert!(r.iter().all(|z| *z == Complex64::default()));

        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let f = Array2::from_shape_fn((8, 4), |_| Complex64::new(rng.random(), rng.random()));
        let r = noiseless_response(f.view(), a.view(), unit_pilots(4).view()).unwrap();
        assert_eq!(r, f.t().dot(&a));
    }

    #[test]
    fn dimension_and_pilot_checks() {
        let a = ArrayModel::ideal(8, LAMBDA).steering(0.1);
        let f = Array2::<Complex64>::zeros((7, 4));
        assert!(matches!(
            noiseless_response(f.view(), a.view(), unit_pilots(4).view()),
            Err(Error::Dimension(_))
        ));
        let f = Array2::<Complex64>::zeros((8, 4));
        let s = Array1::from_elem(4, Complex64::new(2.0, 0.0));
        assert!(noiseless_response(f.view(), a.view(), s.view()).is_err());
    }

    #[test]
    fn noiseless_simulation_matches_response() {
        let arr = ArrayModel::ideal(8, LAMBDA);
        let f = PrecoderMatrix::normalized(Array2::from_elem((8, 4), Complex64::new(1.0, -0.5))).unwrap();
        let s = unit_pilots(4);
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let y = simulate_with_gain(&mut rng, f.matrix(), 0.3, Complex64::new(1.0, 0.0), 0.0, &arr, s.view(), 0.0, 0)
            .unwrap();
        let r = noiseless_response(f.matrix(), arr.steering(0.3).view(), s.view()).unwrap();
        assert_eq!(y.y, r);
        let y0 = simulate_with_gain(&mut rng, f.matrix(), 0.3, Complex64::default(), 0.0, &arr, s.view(), 0.0, 0)
            .unwrap();
        assert!(y0.y.iter().all(|z| z.norm() == 0.0));
    }

    #[test]
    fn noise_energy_and_reproducibility() {
        let arr = ArrayModel::ideal(8, LAMBDA);
        let f = PrecoderMatrix::normalized(Array2::from_shape_fn((8, 6), |(i, j)| {
            Complex64::from_polar(1.0, (i * j) as f64 * 0.3)
        }))
        .unwrap();
        let s = unit_pilots(6);
        let gain = GainModel::new(1.1, 3.0);
        let mu = noiseless_response(f.matrix(), arr.steering(0.4).view(), s.view()).unwrap() * gain.alpha();
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let n = 100_000;
        let mut acc = 0.0;
        let mut total = 0.0;
        for _ in 0..n {
            let o = simulate_observation(&mut rng, f.matrix(), 0.4, &gain, &arr, s.view()).unwrap();
            acc += (&o.y - &mu).iter().map(|z| z.norm_sqr()).sum::<f64>();
            total += o.y.iter().map(|z| z.norm_sqr()).sum::<f64>();
        }
        let expected = 6.0 * gain.noise_var();
        assert!((acc / n as f64 / expected - 1.0).abs() < 0.02);
        let signal: f64 = mu.iter().map(|z| z.norm_sqr()).sum();
        assert!((total / n as f64 / (signal + expected) - 1.0).abs() < 0.02);

        let mut r1 = ChaCha8Rng::seed_from_u64(4);
        let mut r2 = ChaCha8Rng::seed_from_u64(4);
        let a = simulate_observation(&mut r1, f.matrix(), 0.4, &gain, &arr, s.view()).unwrap();
        let b = simulate_observation(&mut r2, f.matrix(), 0.4, &gain, &arr, s.view()).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn snr_grid_examples() {
        assert_eq!(
            snr_sweep_grid(-5.0, 30.0, 5.0).unwrap(),
            vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0]
        );
        assert_eq!(snr_sweep_grid(0.0, 0.0, 5.0).unwrap(), vec![0.0]);
        assert!(snr_sweep_grid(5.0, -5.0, 5.0).is_err());
        assert!(snr_sweep_grid(0.0, 5.0, 0.0).is_err());
    }

    #[test]
    fn gain_model_snr_identity() {
        let g = GainModel::new(2.0, 17.0);
        let snr = g.alpha().norm_sqr() / g.noise_var();
        assert!((10.0 * snr.log10() - 17.0).abs() < 1e-12);
    }

    #[test]
    fn precoder_normalization() {
        let f = PrecoderMatrix::normalized(Array2::from_elem((4, 2), Complex64::new(3.0, 4.0))).unwrap();
        assert!((frobenius_norm(f.matrix()) - 1.0).abs() < 1e-15);
        assert!(PrecoderMatrix::normalized(Array2::zeros((4, 2))).is_err());
        assert!(PrecoderMatrix::new(Array2::from_elem((4, 2), Complex64::new(1.0, 0.0))).is_err());
    }
}
