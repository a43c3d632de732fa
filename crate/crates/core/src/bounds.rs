//! Fisher information and Cramér-Rao bounds for AoD and position.
//!
//! The per-BS model is `mu(theta, alpha) = alpha (F^T a(theta)) .* s` in
//! circularly-symmetric white Gaussian noise of variance `sigma^2`, with
//! unknown parameters `(theta, Re alpha, Im alpha)`. The bound is always
//! evaluated with the array that actually generated the data.

use nalgebra::{Matrix2, Matrix3, Vector2};
use ndarray::{Array1, ArrayView1, ArrayView2};
use num_complex::Complex64;

use crate::array::ArrayModel;
use crate::channel::{GainModel, PrecoderMatrix};
use crate::scenario::{aod_gradient, Scenario};
use crate::{Error, Point2, Result};

/// Relative tolerance below which the nuisance-free angular information is
/// treated as zero.
pub const IDENTIFIABILITY_TOL: f64 = 1e-12;

#[derive(Debug, Clone, PartialEq)]
pub struct AodFisher {
    /// FIM over `(theta, Re alpha, Im alpha)`.
    pub fim: Matrix3<f64>,
    pub theta: f64,
    pub sigma2: f64,
}

impl AodFisher {
    /// `[FIM^-1]_{00}`.
    pub fn crb(&self) -> Result<f64> {
        let inv = self
            .fim
            .try_inverse()
            .ok_or_else(|| Error::SingularFisher("AoD FIM is not invertible".into()))?;
        let v = inv[(0, 0)];
        if !(v > 0.0) || !v.is_finite() {
            return Err(Error::SingularFisher(format!("non-positive AoD CRB {v}")));
        }
        Ok(v)
    }
}

/// `b = (F^T a) .* s` and `b_dot = (F^T a_dot) .* s`.
struct Responses {
    b: Array1<Complex64>,
    b_dot: Array1<Complex64>,
}

fn responses(
    f: ArrayView2<Complex64>,
    theta: f64,
    array: &ArrayModel,
    s: ArrayView1<Complex64>,
) -> Result<Responses> {
    if f.nrows() != array.n_tx() || f.ncols() != s.len() {
        return Err(Error::Dimension(format!(
            "precoder {:?} vs array {} / pilots {}",
            f.dim(),
            array.n_tx(),
            s.len()
        )));
    }
    let b = f.t().dot(&array.steering(theta)) * &s;
    let b_dot = f.t().dot(&array.steering_derivative(theta)) * &s;
    Ok(Responses { b, b_dot })
}

fn energy(v: &Array1<Complex64>) -> f64 {
    v.iter().map(|z| z.norm_sqr()).sum()
}

fn inner(u: &Array1<Complex64>, v: &Array1<Complex64>) -> Complex64 {
    u.iter().zip(v).map(|(x, y)| x.conj() * y).sum()
}

impl Responses {
    /// Angular information after eliminating the gain,
    /// `||b_dot||^2 - |b^H b_dot|^2 / ||b||^2`, checked for identifiability.
    fn effective_information(&self) -> Result<f64> {
        let eb = energy(&self.b);
        let ed = energy(&self.b_dot);
        if eb == 0.0 {
            return Err(Error::Unidentifiable(
                "precoder has zero response towards the AoD".into(),
            ));
        }
        let den = ed - inner(&self.b, &self.b_dot).norm_sqr() / eb;
        if !(den >= IDENTIFIABILITY_TOL * ed) || ed == 0.0 {
            return Err(Error::Unidentifiable(format!(
                "angular information {den:e} vanishes relative to {ed:e}"
            )));
        }
        Ok(den)
    }
}

/// Fisher information over `(theta, Re alpha, Im alpha)`.
pub fn aod_fim(
    f: ArrayView2<Complex64>,
    theta: f64,
    alpha: Complex64,
    sigma2: f64,
    array: &ArrayModel,
    s: ArrayView1<Complex64>,
) -> Result<AodFisher> {
    if !(sigma2 > 0.0) {
        return Err(Error::Domain(format!("noise variance must be positive, got {sigma2}")));
    }
    let r = responses(f, theta, array, s)?;
    if energy(&r.b) == 0.0 && energy(&r.b_dot) == 0.0 {
        return Err(Error::Unidentifiable("degenerate precoder: no response and no derivative".into()));
    }
    let j = Complex64::new(0.0, 1.0);
    let grads = [r.b_dot.mapv(|z| z * alpha), r.b.clone(), r.b.mapv(|z| z * j)];
    let scale = 2.0 / sigma2;
    let fim = Matrix3::from_fn(|row, col| scale * inner(&grads[row], &grads[col]).re);
    Ok(AodFisher { fim, theta, sigma2 })
}

/// CRB on the AoD in rad^2, via inversion of the 3x3 FIM.
pub fn aod_crb(
    f: ArrayView2<Complex64>,
    theta: f64,
    alpha: Complex64,
    sigma2: f64,
    array: &ArrayModel,
    s: ArrayView1<Complex64>,
) -> Result<f64> {
    responses(f, theta, array, s)?.effective_information()?;
    aod_fim(f, theta, alpha, sigma2, array, s)?.crb()
}

/// Closed-form CRB `sigma^2 / (2 |alpha|^2) / (||b_dot||^2 - |b^H b_dot|^2 / ||b||^2)`.
pub fn aod_crb_closed_form(
    f: ArrayView2<Complex64>,
    theta: f64,
    alpha: Complex64,
    sigma2: f64,
    array: &ArrayModel,
    s: ArrayView1<Complex64>,
) -> Result<f64> {
    if alpha.norm_sqr() == 0.0 {
        return Err(Error::Unidentifiable("zero channel gain".into()));
    }
    let den = responses(f, theta, array, s)?.effective_information()?;
    Ok(sigma2 / (2.0 * alpha.norm_sqr() * den))
}

/// Position-domain FIM over `(p_1, p_2)`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PositionFisher {
    pub fim: Matrix2<f64>,
}

impl PositionFisher {
    /// Sums rank-one contributions `grad grad^T / crb` of individual bearings.
    pub fn from_bearings(bearings: &[([f64; 2], f64)]) -> Self {
        let fim = bearings.iter().fold(Matrix2::zeros(), |acc, (g, crb)| {
            let g = Vector2::new(g[0], g[1]);
            acc + g * g.transpose() / *crb
        });
        Self { fim }
    }

    pub fn add(&self, other: &PositionFisher) -> PositionFisher {
        PositionFisher {
            fim: self.fim + other.fim,
        }
    }
}

/// Position FIM from the per-BS angular bounds chained through the AoD
/// gradient.
pub fn position_fim(
    scenario: &Scenario,
    precoders: &[PrecoderMatrix],
    p: Point2,
    gains: &[GainModel],
    arrays: &[ArrayModel],
    s: ArrayView1<Complex64>,
) -> Result<PositionFisher> {
    let n = scenario.n_bs();
    if precoders.len() != n || gains.len() != n || arrays.len() != n {
        return Err(Error::Dimension(format!(
            "{n} BSs but {} precoders, {} gains, {} arrays",
            precoders.len(),
            gains.len(),
            arrays.len()
        )));
    }
    let mut bearings = Vec::with_capacity(n);
    for bs in 0..n {
        let theta = scenario.aod(bs, p)?;
        let g = &gains[bs];
        match aod_crb(precoders[bs].matrix(), theta, g.alpha(), g.noise_var(), &arrays[bs], s) {
            Ok(crb) => bearings.push((aod_gradient(p, scenario.bs_positions[bs])?, crb)),
            Err(Error::Unidentifiable(_)) => continue,
            Err(e) => return Err(e),
        }
    }
    if bearings.len() < 2 {
        return Err(Error::SingularFisher(format!(
            "only {} usable bearing(s); position needs two",
            bearings.len()
        )));
    }
    Ok(PositionFisher::from_bearings(&bearings))
}

/// Position error bound `sqrt(trace(FIM^-1))` in meters.
pub fn peb(pf: &PositionFisher) -> Result<f64> {
    let m = pf.fim;
    let det = m.determinant();
    let tr = m.trace();
    if !(det > 1e-12 * tr * tr) {
        return Err(Error::SingularFisher(format!(
            "position FIM is singular (det {det:e}, trace {tr:e})"
        )));
    }
    // trace(M^-1) = trace(M) / det(M) for 2x2.
    Ok((tr / det).sqrt())
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::array::{coupling_matrix, perturb_spacing, CouplingSpec};
    use crate::channel::unit_pilots;
    use ndarray::Array2;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 10.7e-3;

    fn random_case(seed: u64) -> (Array2<Complex64>, f64, Complex64, f64, ArrayModel) {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(4..24);
        let t = rng.random_range(2..12);
        let f = Array2::from_shape_fn((n, t), |_| {
            Complex64::new(rng.random_range(-1.0..1.0), rng.random_range(-1.0..1.0))
        });
        let theta = rng.random_range(-1.3..1.3);
        let alpha = Complex64::from_polar(rng.random_range(0.2..2.0), rng.random_range(0.0..6.28));
        let sigma2 = 10f64.powf(rng.random_range(-3.0..1.0));
        let sigma = rng.random_range(0.0..LAMBDA / 50.0);
        let mut arr = ArrayModel::with_positions(
            perturb_spacing(&mut rng, n, sigma, LAMBDA).unwrap(),
            LAMBDA,
        )
        .unwrap();
        if n > 5 && rng.random_bool(0.5) {
            arr = arr.with_coupling(coupling_matrix(&CouplingSpec::reference(), n).unwrap()).unwrap();
        }
        (f, theta, alpha, sigma2, arr)
    }

    #[test]
    fn gain_block_is_diagonal_response_energy() {
        let (f, theta, alpha, sigma2, arr) = random_case(1);
        let s = unit_pilots(f.ncols());
        let fim = aod_fim(f.view(), theta, alpha, sigma2, &arr, s.view()).unwrap().fim;
        let b = f.t().dot(&arr.steering(theta));
        let expected = 2.0 / sigma2 * energy(&b);
        assert!((fim[(1, 1)] / expected - 1.0).abs() < 1e-12);
        assert!((fim[(2, 2)] / expected - 1.0).abs() < 1e-12);
        assert!(fim[(1, 2)].abs() < 1e-12 * expected);
    }

    #[test]
    fn fim_scales_with_inverse_noise() {
        let (f, theta, alpha, sigma2, arr) = random_case(2);
        let s = unit_pilots(f.ncols());
        let a = aod_fim(f.view(), theta, alpha, sigma2, &arr, s.view()).unwrap().fim;
        let b = aod_fim(f.view(), theta, alpha, 2.0 * sigma2, &arr, s.view()).unwrap().fim;
        assert!((a - 2.0 * b).abs().max() < 1e-12 * a.abs().max());
    }

    #[test]
    fn crb_scales_with_snr() {
        let (f, theta, alpha, _, arr) = random_case(3);
        let s = unit_pilots(f.ncols());
        let c10 = aod_crb(f.view(), theta, alpha, 0.1, &arr, s.view()).unwrap();
        let c20 = aod_crb(f.view(), theta, alpha, 0.01, &arr, s.view()).unwrap();
        assert!((c10 / c20 - 10.0).abs() < 1e-9);
    }

    #[test]
    fn crb_is_phase_invariant() {
        let (f, theta, _, sigma2, arr) = random_case(4);
        let s = unit_pilots(f.ncols());
        let crbs: Vec<f64> = (0..10)
            .map(|k| {
                let alpha = Complex64::from_polar(1.3, 0.6 * k as f64);
                aod_crb(f.view(), theta, alpha, sigma2, &arr, s.view()).unwrap()
            })
            .collect();
        let max = crbs.iter().cloned().fold(f64::MIN, f64::max);
        let min = crbs.iter().cloned().fold(f64::MAX, f64::min);
        assert!((max - min) / min < 1e-10);
    }

    #[test]
    fn degenerate_precoders_are_flagged() {
        let arr = ArrayModel::ideal(8, LAMBDA);
        let s = unit_pilots(3);
        let zero = Array2::<Complex64>::zeros((8, 3));
        let one = Complex64::new(1.0, 0.0);
        assert!(matches!(
            aod_fim(zero.view(), 0.2, one, 0.1, &arr, s.view()),
            Err(Error::Unidentifiable(_))
        ));
        // Identical matched beams in every column: b_dot is parallel to b.
        let a = arr.steering(0.2).mapv(|z| z.conj());
        let f = Array2::from_shape_fn((8, 3), |(k, _)| a[k]);
        let r = aod_crb(f.view(), 0.2, one, 0.1, &arr, s.view());
        assert!(matches!(r, Err(Error::Unidentifiable(_))), "{r:?}");
    }

    #[test]
    fn position_examples() {
        // Orthogonal bearings at equal range r and equal angular CRB c.
        let r: f64 = 4.0;
        let c: f64 = 1e-5;
        let p = [0.0, 0.0];
        let q1 = [-r, 0.0];
        let q2 = [0.0, -r];
        let pf = PositionFisher::from_bearings(&[
            (aod_gradient(p, q1).unwrap(), c),
            (aod_gradient(p, q2).unwrap(), c),
        ]);
        assert!((peb(&pf).unwrap() - (2.0 * c * r * r).sqrt()).abs() < 1e-15);

        let single = PositionFisher::from_bearings(&[(aod_gradient(p, q1).unwrap(), c)]);
        assert!(matches!(peb(&single), Err(Error::SingularFisher(_))));

        let diag = PositionFisher {
            fim: Matrix2::new(1.0 / 4.0, 0.0, 0.0, 1.0 / 9.0),
        };
        assert!((peb(&diag).unwrap() - 13f64.sqrt()).abs() < 1e-14);
    }

    #[test]
    fn mirror_geometry_gives_mirrored_fim() {
        let c = 2e-6;
        let p = [0.0, 5.0];
        let a = PositionFisher::from_bearings(&[
            (aod_gradient(p, [-3.0, 0.0]).unwrap(), c),
            (aod_gradient(p, [3.0, 0.0]).unwrap(), c),
        ]);
        let b = PositionFisher::from_bearings(&[
            (aod_gradient(p, [3.0, 0.0]).unwrap(), c),
            (aod_gradient(p, [-3.0, 0.0]).unwrap(), c),
        ]);
        assert!((a.fim - b.fim).abs().max() < 1e-18);
        // Reflection x -> -x maps the geometry onto itself.
        assert!(a.fim[(0, 1)].abs() < 1e-12 * a.fim[(0, 0)]);
    }

    proptest! {
        #[test]
        fn dual_formulas_agree(seed in any::<u64>()) {
            let (f, theta, alpha, sigma2, arr) = random_case(seed);
            let s = unit_pilots(f.ncols());
            let inv = aod_crb(f.view(), theta, alpha, sigma2, &arr, s.view());
            let closed = aod_crb_closed_form(f.view(), theta, alpha, sigma2, &arr, s.view());
            match (inv, closed) {
                (Ok(a), Ok(b)) => prop_assert!((a - b).abs() / b < 1e-8, "{a} vs {b}"),
                (Err(_), Err(_)) => {}
                (a, b) => prop_assert!(false, "{a:?} vs {b:?}"),
            }
        }

        #[test]
        fn fim_is_symmetric_psd(seed in any::<u64>()) {
            let (f, theta, alpha, sigma2, arr) = random_case(seed);
            let s = unit_pilots(f.ncols());
            let fim = aod_fim(f.view(), theta, alpha, sigma2, &arr, s.view()).unwrap().fim;
            prop_assert!((fim - fim.transpose()).abs().max() <= 1e-12 * fim.abs().max());
            let eig = fim.symmetric_eigenvalues();
            prop_assert!(eig.iter().all(|e| *e >= -1e-9 * fim.abs().max()));
        }

        #[test]
        fn adding_a_bearing_never_increases_peb(g3x in -1.0f64..1.0, g3y in -1.0f64..1.0, c3 in 1e-7f64..1e-3) {
            let base = PositionFisher::from_bearings(&[([0.2, -0.1], 1e-5), ([0.05, 0.15], 3e-5)]);
            let extra = PositionFisher::from_bearings(&[([g3x, g3y], c3)]);
            prop_assert!(peb(&base.add(&extra)).unwrap() <= peb(&base).unwrap() * (1.0 + 1e-12));
        }
    }
}
