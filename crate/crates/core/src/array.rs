//! Uniform linear array models with optional hardware impairments.
//!
//! An [`ArrayModel`] stores element positions along the array axis and an
//! optional mutual-coupling matrix `B`. The steering vector of element `k`
//! is `exp(j 2 pi (x_k / lambda) sin(theta))`; with coupling present the
//! array responds with `B a(theta)`.

use std::f64::consts::PI;

use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::{Error, Result};

/// Mutual-coupling coefficients `[1, c_1, ..., c_M]`.
#[derive(Debug, Clone, PartialEq)]
pub struct CouplingSpec {
    coefficients: Vec<Complex64>,
}

impl CouplingSpec {
    pub fn new(coefficients: Vec<Complex64>) -> Result<Self> {
        match coefficients.first() {
            Some(c0) if *c0 == Complex64::new(1.0, 0.0) => {}
            _ => return Err(Error::domain("coupling vector must start with c_0 = 1")),
        }
        let mags: Vec<f64> = coefficients.iter().map(|c| c.norm()).collect();
        if mags.windows(2).any(|w| !(w[1] < w[0])) || mags.iter().skip(1).any(|m| *m <= 0.0) {
            return Err(Error::domain(format!(
                "coupling magnitudes must strictly decrease inside (0, 1): {mags:?}"
            )));
        }
        Ok(Self { coefficients })
    }

    /// Five-tap coupling vector used for the impairment experiments:
    /// `[1, 0.9 e^{-j pi/3}, 0.75 e^{j pi/4}, 0.55 e^{-j pi/10}, 0.25 e^{-j pi/6}]`.
    pub fn reference() -> Self {
        Self {
            coefficients: vec![
                Complex64::new(1.0, 0.0),
                Complex64::from_polar(0.9, -PI / 3.0),
                Complex64::from_polar(0.75, PI / 4.0),
                Complex64::from_polar(0.55, -PI / 10.0),
                Complex64::from_polar(0.25, -PI / 6.0),
            ],
        }
    }

    pub fn coefficients(&self) -> &[Complex64] {
        &self.coefficients
    }

    /// Coupling bandwidth `M`.
    pub fn bandwidth(&self) -> usize {
        self.coefficients.len() - 1
    }
}

/// Banded symmetric Toeplitz matrix `B[i][j] = c[|i - j|]` for `|i - j| <= M`.
pub fn coupling_matrix(spec: &CouplingSpec, n_tx: usize) -> Result<Array2<Complex64>> {
    let m = spec.bandwidth();
    if m >= n_tx {
        return Err(Error::domain(format!(
            "coupling bandwidth {m} must be below the element count {n_tx}"
        )));
    }
    Ok(toeplitz_band(spec.coefficients(), n_tx))
}

fn toeplitz_band(c: &[Complex64], n: usize) -> Array2<Complex64> {
    Array2::from_shape_fn((n, n), |(i, j)| {
        c.get(i.abs_diff(j)).copied().unwrap_or_default()
    })
}

fn frobenius(b: &Array2<Complex64>) -> f64 {
    b.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt()
}

/// Coupling matrix with exponentially decaying magnitudes `|c_k| = exp(zeta k)`
/// for `k = 0..=M`, phases copied from `reference`, rescaled to the Frobenius
/// norm of the matrix built from `reference`.
pub fn coupling_from_decay(zeta: f64, reference: &CouplingSpec, n_tx: usize) -> Result<Array2<Complex64>> {
    if !(zeta < 0.0) {
        return Err(Error::domain(format!("decay parameter must be negative, got {zeta}")));
    }
    let c: Vec<Complex64> = reference
        .coefficients()
        .iter()
        .enumerate()
        .map(|(k, r)| Complex64::from_polar((zeta * k as f64).exp(), r.arg()))
        .collect();
    let target = frobenius(&coupling_matrix(reference, n_tx)?);
    let raw = toeplitz_band(&c, n_tx);
    let scale = target / frobenius(&raw);
    Ok(raw.mapv(|z| z * scale))
}

/// Draws perturbed element positions: inter-element distances
/// `d_k = lambda/2 + gamma_k`, `gamma_k ~ N(0, sigma^2)`, accumulated from
/// `x_0 = 0`. Non-positive distances are redrawn.
pub fn perturb_spacing<R: Rng + ?Sized>(
    rng: &mut R,
    n_tx: usize,
    sigma: f64,
    wavelength: f64,
) -> Result<Vec<f64>> {
    if !(sigma >= 0.0) || !sigma.is_finite() {
        return Err(Error::domain(format!("spacing std must be non-negative, got {sigma}")));
    }
    let half = wavelength / 2.0;
    let mut positions = Vec::with_capacity(n_tx);
    positions.push(0.0);
    if sigma == 0.0 {
        positions.extend((1..n_tx).map(|k| k as f64 * half));
        return Ok(positions);
    }
    let normal = Normal::new(half, sigma).map_err(|e| Error::domain(e.to_string()))?;
    let mut x = 0.0;
    for _ in 1..n_tx {
        let d = loop {
            let d = normal.sample(rng);
            if d > 0.0 {
                break d;
            }
        };
        x += d;
        positions.push(x);
    }
    Ok(positions)
}

/// Immutable description of a physical (or assumed) array.
#[derive(Debug, Clone, PartialEq)]
pub struct ArrayModel {
    element_positions: Vec<f64>,
    coupling: Option<Array2<Complex64>>,
    wavelength: f64,
    /// `2 pi x_k / lambda`, cached.
    phase_rates: Vec<f64>,
}

impl ArrayModel {
    /// Half-wavelength ULA without coupling.
    pub fn ideal(n_tx: usize, wavelength: f64) -> Self {
        let element_positions: Vec<f64> = (0..n_tx).map(|k| k as f64 * wavelength / 2.0).collect();
        Self {
            element_positions,
            coupling: None,
            wavelength,
            // Exactly pi*k for the nominal geometry.
            phase_rates: (0..n_tx).map(|k| PI * k as f64).collect(),
        }
    }

    pub fn with_positions(element_positions: Vec<f64>, wavelength: f64) -> Result<Self> {
        if element_positions.len() < 2 {
            return Err(Error::domain("an array needs at least two elements"));
        }
        if element_positions[0] != 0.0 {
            return Err(Error::domain("element 0 must sit at the origin"));
        }
        if element_positions.windows(2).any(|w| !(w[1] > w[0])) {
            return Err(Error::domain("element positions must strictly increase"));
        }
        if !(wavelength > 0.0) {
            return Err(Error::domain("wavelength must be positive"));
        }
        let phase_rates = element_positions
            .iter()
            .map(|x| 2.0 * PI * x / wavelength)
            .collect();
        Ok(Self {
            element_positions,
            coupling: None,
            wavelength,
            phase_rates,
        })
    }

    /// Attaches a coupling matrix, which must be square of the array size,
    /// symmetric (plain transpose), Toeplitz and banded.
    pub fn with_coupling(mut self, b: Array2<Complex64>) -> Result<Self> {
        let n = self.n_tx();
        if b.dim() != (n, n) {
            return Err(Error::dimension(format!(
                "coupling matrix is {:?}, array has {n} elements",
                b.dim()
            )));
        }
        check_symmetric_toeplitz(&b)?;
        self.coupling = Some(b);
        Ok(self)
    }

    pub fn n_tx(&self) -> usize {
        self.element_positions.len()
    }

    pub fn wavelength(&self) -> f64 {
        self.wavelength
    }

    pub fn element_positions(&self) -> &[f64] {
        &self.element_positions
    }

    pub fn coupling(&self) -> Option<&Array2<Complex64>> {
        self.coupling.as_ref()
    }

    pub fn is_ideal(&self) -> bool {
        self.coupling.is_none()
            && self
                .element_positions
                .iter()
                .enumerate()
                .all(|(k, x)| *x == k as f64 * self.wavelength / 2.0)
    }

    fn couple(&self, v: Array1<Complex64>) -> Array1<Complex64> {
        match &self.coupling {
            Some(b) => b.dot(&v),
            None => v,
        }
    }

    fn positional_steering(&self, theta: f64) -> Array1<Complex64> {
        let s = theta.sin();
        self.phase_rates
            .iter()
            .map(|w| Complex64::from_polar(1.0, w * s))
            .collect()
    }

    /// Steering vector, including coupling when present.
    pub fn steering(&self, theta: f64) -> Array1<Complex64> {
        self.couple(self.positional_steering(theta))
    }

    /// Analytic derivative of [`Self::steering`] with respect to `theta`.
    pub fn steering_derivative(&self, theta: f64) -> Array1<Complex64> {
        let (s, c) = theta.sin_cos();
        let v = self
            .phase_rates
            .iter()
            .map(|w| Complex64::new(0.0, w * c) * Complex64::from_polar(1.0, w * s))
            .collect();
        self.couple(v)
    }
}

fn check_symmetric_toeplitz(b: &Array2<Complex64>) -> Result<()> {
    let n = b.nrows();
    for i in 0..n {
        for j in 0..n {
            if b[[i, j]] != b[[j, i]] {
                return Err(Error::domain(format!("coupling matrix not symmetric at ({i}, {j})")));
            }
            if i > 0 && j > 0 && b[[i, j]] != b[[i - 1, j - 1]] {
                return Err(Error::domain(format!("coupling matrix not Toeplitz at ({i}, {j})")));
            }
        }
    }
    Ok(())
}

/// Bandwidth of a banded matrix: the largest `|i - j|` with a non-zero entry.
pub fn band_of(b: &Array2<Complex64>) -> usize {
    b.indexed_iter()
        .filter(|(_, z)| **z != Complex64::default())
        .map(|((i, j), _)| i.abs_diff(j))
        .max()
        .unwrap_or(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    const LAMBDA: f64 = 10.7e-3;

    fn fd_steering(model: &ArrayModel, theta: f64) -> Array1<Complex64> {
        let h = 1e-6;
        (model.steering(theta + h) - model.steering(theta - h)).mapv(|z| z / (2.0 * h))
    }

    fn rel_err(a: &Array1<Complex64>, b: &Array1<Complex64>) -> f64 {
        let num: f64 = a.iter().zip(b).map(|(x, y)| (x - y).norm_sqr()).sum::<f64>().sqrt();
        let den: f64 = b.iter().map(|y| y.norm_sqr()).sum::<f64>().sqrt();
        num / den
    }

    #[test]
    fn ideal_steering_examples() {
        let arr = ArrayModel::ideal(32, LAMBDA);
        assert!(arr.steering(0.0).iter().all(|z| *z == Complex64::new(1.0, 0.0)));
        let a = arr.steering(30f64.to_radians());
        assert!((a[1] - Complex64::new(0.0, 1.0)).norm() < 1e-15);
        assert!(arr.is_ideal());
    }

    #[test]
    fn zero_perturbation_is_ideal() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let pos = perturb_spacing(&mut rng, 16, 0.0, LAMBDA).unwrap();
        let expected: Vec<f64> = (0..16).map(|k| k as f64 * LAMBDA / 2.0).collect();
        assert_eq!(pos, expected);
        let arr = ArrayModel::with_positions(pos, LAMBDA).unwrap();
        let ideal = ArrayModel::ideal(16, LAMBDA);
        for theta in [-1.2, -0.3, 0.0, 0.7, 1.5] {
            assert!(rel_err(&arr.steering(theta), &ideal.steering(theta)) < 1e-14);
        }
    }

    #[test]
    fn derivative_examples() {
        let arr = ArrayModel::ideal(8, LAMBDA);
        let d = arr.steering_derivative(0.0);
        for (k, z) in d.iter().enumerate() {
            assert!((z - Complex64::new(0.0, PI * k as f64)).norm() < 1e-12);
        }
        assert_eq!(arr.steering_derivative(0.4)[0], Complex64::new(0.0, 0.0));
    }

    #[test]
    fn negative_sigma_rejected() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        assert!(perturb_spacing(&mut rng, 8, -1e-4, LAMBDA).is_err());
    }

    #[test]
    fn spacing_draw_statistics() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let sigma = LAMBDA / 100.0;
        let n = 100_000;
        let mut diffs = Vec::with_capacity(n);
        while diffs.len() < n {
            let pos = perturb_spacing(&mut rng, 33, sigma, LAMBDA).unwrap();
            diffs.extend(pos.windows(2).map(|w| w[1] - w[0]));
        }
        diffs.truncate(n);
        let mean = diffs.iter().sum::<f64>() / n as f64;
        let var = diffs.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1) as f64;
        assert!((var.sqrt() / sigma - 1.0).abs() < 0.02);
        assert!((mean - LAMBDA / 2.0).abs() < 1e-3 * LAMBDA);
    }

    #[test]
    fn coupling_matrix_examples() {
        let id = coupling_matrix(&CouplingSpec::new(vec![Complex64::new(1.0, 0.0)]).unwrap(), 6).unwrap();
        assert_eq!(id, Array2::eye(6).mapv(|x: f64| Complex64::new(x, 0.0)));

        let b = coupling_matrix(&CouplingSpec::reference(), 32).unwrap();
        assert!((b[[0, 1]] - Complex64::from_polar(0.9, -PI / 3.0)).norm() < 1e-15);
        assert_eq!(b[[0, 5]], Complex64::new(0.0, 0.0));
        assert_eq!(b[[0, 4]], Complex64::from_polar(0.25, -PI / 6.0));
        assert_eq!(band_of(&b), 4);
        assert_eq!(b.t(), b.view());

        assert!(coupling_matrix(&CouplingSpec::reference(), 4).is_err());
    }

    #[test]
    fn invalid_coupling_vectors_rejected() {
        let c = |v: &[f64]| CouplingSpec::new(v.iter().map(|x| Complex64::new(*x, 0.0)).collect());
        assert!(c(&[1.0, 0.5, 0.6]).is_err());
        assert!(c(&[0.9, 0.5]).is_err());
        assert!(c(&[1.0, 1.0]).is_err());
        assert!(c(&[1.0, 0.5, 0.0]).is_err());
        assert!(c(&[]).is_err());
        assert!(c(&[1.0, 0.5, 0.2]).is_ok());
    }

    #[test]
    fn decay_coupling_examples() {
        let reference = CouplingSpec::reference();
        let target = frobenius(&coupling_matrix(&reference, 32).unwrap());
        for zeta in [-0.1, -0.3, -1.0, -3.0] {
            let b = coupling_from_decay(zeta, &reference, 32).unwrap();
            assert!((frobenius(&b) / target - 1.0).abs() < 1e-12);
            assert_eq!(b.t(), b.view());
            assert_eq!(band_of(&b), 4);
            // Phases retained, magnitudes follow the decay law up to the common scale.
            let ratio = b[[0, 1]].norm() / b[[0, 0]].norm();
            assert!((ratio - zeta.exp()).abs() < 1e-12);
            assert!((b[[0, 2]].arg() - PI / 4.0).abs() < 1e-12);
        }
        assert!(((-1f64).exp() - 0.3679).abs() < 1e-4);
        // Strong decay: off-diagonal mass vanishes relative to the diagonal.
        let b = coupling_from_decay(-40.0, &reference, 32).unwrap();
        assert!(b[[0, 1]].norm() / b[[0, 0]].norm() < 1e-15);
        assert!(coupling_from_decay(0.0, &reference, 32).is_err());
        assert!(coupling_from_decay(0.2, &reference, 32).is_err());
    }

    #[test]
    fn coupled_model_validates_matrix() {
        let arr = ArrayModel::ideal(8, LAMBDA);
        let mut b = coupling_matrix(&CouplingSpec::reference(), 8).unwrap();
        assert!(arr.clone().with_coupling(b.clone()).is_ok());
        b[[0, 1]] = Complex64::new(0.3, 0.0);
        assert!(arr.clone().with_coupling(b).is_err());
        assert!(arr.with_coupling(Array2::zeros((4, 4))).is_err());
    }

    #[test]
    fn coupled_steering_is_b_times_a() {
        let b = coupling_matrix(&CouplingSpec::reference(), 16).unwrap();
        let ideal = ArrayModel::ideal(16, LAMBDA);
        let coupled = ideal.clone().with_coupling(b.clone()).unwrap();
        let theta = 0.37;
        let expected = b.dot(&ideal.steering(theta));
        assert!(rel_err(&coupled.steering(theta), &expected) < 1e-15);
        assert!(!coupled.is_ideal());
    }

    fn random_array(seed: u64, coupled: bool) -> ArrayModel {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let n = rng.random_range(6..40);
        let sigma = rng.random_range(0.0..LAMBDA / 30.0);
        let arr = ArrayModel::with_positions(perturb_spacing(&mut rng, n, sigma, LAMBDA).unwrap(), LAMBDA)
            .unwrap();
        if coupled {
            arr.with_coupling(coupling_matrix(&CouplingSpec::reference(), n).unwrap()).unwrap()
        } else {
            arr
        }
    }

    proptest! {
        #[test]
        fn uncoupled_steering_has_unit_modulus(seed in any::<u64>(), theta in -1.5707f64..1.5707) {
            let arr = random_array(seed, false);
            let a = arr.steering(theta);
            let e: f64 = a.iter().map(|z| z.norm_sqr()).sum();
            prop_assert!((e - arr.n_tx() as f64).abs() < 1e-10);
        }

        #[test]
        fn ideal_steering_mirror_symmetry(n in 2usize..64, theta in -1.5707f64..1.5707) {
            let arr = ArrayModel::ideal(n, LAMBDA);
            let a = arr.steering(theta);
            let b = arr.steering(-theta).mapv(|z| z.conj());
            prop_assert!(rel_err(&a, &b) < 1e-12);
        }

        #[test]
        fn derivative_matches_finite_differences(seed in any::<u64>(), coupled in any::<bool>(), theta in -1.45f64..1.45) {
            let arr = random_array(seed, coupled);
            let d = arr.steering_derivative(theta);
            prop_assert!(rel_err(&fd_steering(&arr, theta), &d) < 1e-6);
        }

        #[test]
        fn spacing_draws_strictly_increase(seed in any::<u64>()) {
            let mut rng = ChaCha8Rng::seed_from_u64(seed);
            let pos = perturb_spacing(&mut rng, 32, LAMBDA / 4.0, LAMBDA).unwrap();
            prop_assert!(pos.windows(2).all(|w| w[1] > w[0]));
        }
    }
}
