//! Model-based benchmark: a directional-plus-derivative codebook with a
//! worst-case-CRB power allocation at the transmitter, and maximum-likelihood
//! AoD and position estimation at the receiver.

use nalgebra::{Matrix2, Matrix3, Vector2, Vector3};
use ndarray::{Array1, Array2, ArrayView1, ArrayView2};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::array::ArrayModel;
use crate::bounds::aod_crb;
use crate::channel::{snr_to_noise_var, unit_pilots, Observation, PrecoderMatrix};
use crate::scenario::{aod_from_position, aod_gradient, AngularSector, Rect, Scenario};
use crate::{wrap_angle, Error, Point2, Result};

/// Directional beams towards `T/2` evenly spaced angles of the sector,
/// followed by the derivative beams at the same angles.
///
/// Columns are conjugated steering vectors so that `F^T a(theta)` peaks at
/// the grid angles.
pub fn heuristic_codebook(u: &AngularSector, t: usize, array: &ArrayModel) -> Result<Array2<Complex64>> {
    if t == 0 || t % 2 != 0 {
        return Err(Error::Domain(format!("codebook needs an even, positive T, got {t}")));
    }
    let half = t / 2;
    let grid = u.grid(half);
    let mut f = Array2::zeros((array.n_tx(), t));
    for (g, theta) in grid.iter().enumerate() {
        f.column_mut(g).assign(&array.steering(*theta).mapv(|z| z.conj()));
        f.column_mut(half + g)
            .assign(&array.steering_derivative(*theta).mapv(|z| z.conj()));
    }
    Ok(f)
}

/// Per-column transmit power weights, summing to `T` before the final
/// Frobenius normalization.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocation {
    pub rho: Vec<f64>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PowerAllocationConfig {
    /// Angles of the sector over which the worst case is taken.
    pub grid_size: usize,
    pub iterations: usize,
    /// Random starting points in addition to the uniform allocation.
    pub restarts: usize,
    /// Initial step length, relative to the norm of the iterate.
    pub step: f64,
    pub seed: u64,
}

impl Default for PowerAllocationConfig {
    fn default() -> Self {
        Self {
            grid_size: 10,
            iterations: 500,
            restarts: 5,
            step: 0.3,
            seed: 0,
        }
    }
}

#[derive(Debug, Clone)]
pub struct AllocationOutcome {
    pub allocation: PowerAllocation,
    pub precoder: PrecoderMatrix,
    /// Worst-case CRB (rad^2) over the angle grid at the requested SNR.
    pub worst_case_crb: f64,
    /// Worst-case CRB of the uniform allocation `rho = 1`.
    pub uniform_worst_case_crb: f64,
    /// False when the best run was still improving at the iteration cap.
    pub converged: bool,
}

/// Fisher contributions of the unit-norm codebook columns, per grid angle.
struct ColumnFisher {
    /// `[angle][column]`.
    blocks: Vec<Vec<Matrix3<f64>>>,
}

impl ColumnFisher {
    fn new(h: ArrayView2<Complex64>, angles: &[f64], array: &ArrayModel, sigma2: f64) -> Self {
        let norms: Vec<f64> = h
            .columns()
            .into_iter()
            .map(|c| c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt())
            .collect();
        let j = Complex64::new(0.0, 1.0);
        let blocks = angles
            .iter()
            .map(|theta| {
                let a = array.steering(*theta);
                let ad = array.steering_derivative(*theta);
                h.columns()
                    .into_iter()
                    .zip(&norms)
                    .map(|(col, n)| {
                        if *n == 0.0 {
                            return Matrix3::zeros();
                        }
                        let b = col.dot(&a) / *n;
                        let bd = col.dot(&ad) / *n;
                        let g = [bd, b, j * b];
                        Matrix3::from_fn(|r, c| 2.0 / sigma2 * (g[r].conj() * g[c]).re)
                    })
                    .collect()
            })
            .collect();
        Self { blocks }
    }

    /// Worst-case CRB over the grid and its gradient with respect to the
    /// column power fractions, taken at the active angle.
    fn evaluate(&self, fractions: &[f64]) -> Option<(f64, Vec<f64>)> {
        let mut worst: Option<(f64, Vector3<f64>, usize)> = None;
        for (g, cols) in self.blocks.iter().enumerate() {
            let fim = cols
                .iter()
                .zip(fractions)
                .fold(Matrix3::zeros(), |acc, (m, p)| acc + m * *p);
            let inv = fim.try_inverse()?;
            let crb = inv[(0, 0)];
            if !(crb > 0.0) || !crb.is_finite() {
                return None;
            }
            if worst.is_none_or(|(w, _, _)| crb > w) {
                worst = Some((crb, inv.column(0).into_owned(), g));
            }
        }
        let (crb, v, g) = worst?;
        let grad = self.blocks[g].iter().map(|m| -(v.transpose() * m * v)[0]).collect();
        Some((crb, grad))
    }
}

/// Euclidean projection onto the probability simplex.
fn project_simplex(v: &[f64]) -> Vec<f64> {
    let mut u = v.to_vec();
    u.sort_by(|a, b| b.total_cmp(a));
    let mut cumsum = 0.0;
    let mut tau = 0.0;
    for (i, ui) in u.iter().enumerate() {
        cumsum += ui;
        let t = (cumsum - 1.0) / (i + 1) as f64;
        if ui - t > 0.0 {
            tau = t;
        }
    }
    v.iter().map(|x| (x - tau).max(0.0)).collect()
}

fn norm(v: &[f64]) -> f64 {
    v.iter().map(|x| x * x).sum::<f64>().sqrt()
}

/// Finds the per-column power allocation of a codebook minimizing the
/// worst-case AoD CRB over an angle grid of the sector.
///
/// The search runs projected subgradient descent over the fractions of
/// total power given to each (unit-norm) column, which is a convex problem
/// since the FIM is linear in them; the result is mapped back to the weights
/// `rho` on the raw columns.
pub fn optimize_power_allocation(
    f_heur: ArrayView2<Complex64>,
    u: &AngularSector,
    snr_db: f64,
    array: &ArrayModel,
    cfg: &PowerAllocationConfig,
) -> Result<AllocationOutcome> {
    let t = f_heur.ncols();
    if f_heur.nrows() != array.n_tx() || t == 0 {
        return Err(Error::Dimension(format!(
            "codebook {:?} for a {}-element array",
            f_heur.dim(),
            array.n_tx()
        )));
    }
    if cfg.grid_size == 0 {
        return Err(Error::Domain("power allocation needs a non-empty angle grid".into()));
    }
    let col_energy: Vec<f64> = f_heur
        .columns()
        .into_iter()
        .map(|c| c.iter().map(|z| z.norm_sqr()).sum())
        .collect();
    let fisher = ColumnFisher::new(f_heur, &u.grid(cfg.grid_size), array, snr_to_noise_var(snr_db));

    // rho = 1 on the raw columns, expressed as power fractions.
    let total: f64 = col_energy.iter().sum();
    let uniform: Vec<f64> = col_energy.iter().map(|e| e / total).collect();
    let (uniform_crb, _) = fisher.evaluate(&uniform).ok_or_else(|| {
        Error::Unidentifiable("uniformly allocated codebook cannot resolve the sector".into())
    })?;

    let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
    let mut starts = vec![uniform.clone()];
    for _ in 0..cfg.restarts {
        let raw: Vec<f64> = (0..t)
            .map(|_| {
                let z: f64 = StandardNormal.sample(&mut rng);
                (0.5 * z).exp()
            })
            .collect();
        let s: f64 = raw.iter().sum();
        starts.push(raw.iter().map(|x| x / s).collect());
    }

    let mut best = (uniform_crb, uniform, true);
    for start in starts {
        let mut p = start;
        let mut run_best = f64::INFINITY;
        let mut run_arg = p.clone();
        let mut history = Vec::with_capacity(cfg.iterations);
        for k in 0..cfg.iterations {
            let Some((crb, grad)) = fisher.evaluate(&p) else {
                break;
            };
            if crb < run_best {
                run_best = crb;
                run_arg = p.clone();
            }
            history.push(run_best);
            // Relative subgradient, normalized step with 1/sqrt(k) decay.
            let gn = norm(&grad);
            if gn == 0.0 {
                break;
            }
            let step = cfg.step / ((k + 1) as f64).sqrt() * norm(&p) / gn;
            let moved: Vec<f64> = p.iter().zip(&grad).map(|(x, g)| x - step * g).collect();
            p = project_simplex(&moved);
        }
        let window = (cfg.iterations / 5).max(1);
        let converged = history.len() <= window
            || (history[history.len() - 1 - window] - run_best) <= 1e-4 * run_best;
        if run_best < best.0 {
            best = (run_best, run_arg, converged);
        }
    }

    let (worst_case_crb, fractions, converged) = best;
    let raw_rho: Vec<f64> = fractions
        .iter()
        .zip(&col_energy)
        .map(|(p, e)| if *e > 0.0 { p / e } else { 0.0 })
        .collect();
    let s: f64 = raw_rho.iter().sum();
    let rho: Vec<f64> = raw_rho.iter().map(|r| r * t as f64 / s).collect();
    let precoder = apply_allocation(f_heur, &rho)?;
    Ok(AllocationOutcome {
        allocation: PowerAllocation { rho },
        precoder,
        worst_case_crb,
        uniform_worst_case_crb: uniform_crb,
        converged,
    })
}

/// `[sqrt(rho_1) f_1, ..., sqrt(rho_T) f_T]`, Frobenius-normalized.
pub fn apply_allocation(f_heur: ArrayView2<Complex64>, rho: &[f64]) -> Result<PrecoderMatrix> {
    if rho.len() != f_heur.ncols() || rho.iter().any(|r| *r < 0.0) {
        return Err(Error::Domain("allocation must be non-negative, one entry per column".into()));
    }
    let mut f = f_heur.to_owned();
    for (mut col, r) in f.columns_mut().into_iter().zip(rho) {
        col.mapv_inplace(|z| z * r.sqrt());
    }
    PrecoderMatrix::normalized(f)
}

/// Worst-case CRB of a precoder over `n` grid angles of a sector.
pub fn worst_case_crb(
    f: ArrayView2<Complex64>,
    u: &AngularSector,
    n: usize,
    snr_db: f64,
    array: &ArrayModel,
) -> Result<f64> {
    let s = unit_pilots(f.ncols());
    let sigma2 = snr_to_noise_var(snr_db);
    u.grid(n).into_iter().try_fold(0.0f64, |w, theta| {
        Ok(w.max(aod_crb(f, theta, Complex64::new(1.0, 0.0), sigma2, array, s.view())?))
    })
}

/// Full benchmark transmitter for a sector: codebook plus allocation.
pub fn benchmark_precoder(
    u: &AngularSector,
    t: usize,
    snr_db: f64,
    array: &ArrayModel,
    cfg: &PowerAllocationConfig,
) -> Result<AllocationOutcome> {
    let h = heuristic_codebook(u, t, array)?;
    optimize_power_allocation(h.view(), u, snr_db, array, cfg)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MlGridConfig {
    pub points: usize,
    /// Golden-section termination width in radians.
    pub tol: f64,
}

impl Default for MlGridConfig {
    fn default() -> Self {
        Self { points: 2000, tol: 1e-6 }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AodEstimate {
    pub theta_hat: f64,
    /// CRB at the estimate under the receiver's model, rad^2.
    pub variance: f64,
    pub bs_index: usize,
}

/// Grid-plus-golden-section ML AoD estimator for a fixed precoder and
/// sector. The grid responses are computed once and reused across
/// observations.
#[derive(Debug, Clone)]
pub struct MlAodEstimator {
    f: Array2<Complex64>,
    pilots: Array1<Complex64>,
    sector: AngularSector,
    array: ArrayModel,
    cfg: MlGridConfig,
    grid: Vec<f64>,
    /// Unit-norm `(F^T a(theta_g)) .* s`, or zero where the response vanishes.
    atoms: Vec<Array1<Complex64>>,
}

impl MlAodEstimator {
    pub fn new(
        f: ArrayView2<Complex64>,
        sector: AngularSector,
        array: ArrayModel,
        pilots: ArrayView1<Complex64>,
        cfg: MlGridConfig,
    ) -> Result<Self> {
        if f.nrows() != array.n_tx() || f.ncols() != pilots.len() {
            return Err(Error::Dimension(format!(
                "precoder {:?}, array {}, pilots {}",
                f.dim(),
                array.n_tx(),
                pilots.len()
            )));
        }
        if cfg.points < 2 || !(cfg.tol > 0.0) {
            return Err(Error::Domain("ML grid needs >= 2 points and a positive tolerance".into()));
        }
        let grid = sector.grid(cfg.points);
        let mut est = Self {
            f: f.to_owned(),
            pilots: pilots.to_owned(),
            sector,
            array,
            cfg,
            grid: Vec::new(),
            atoms: Vec::new(),
        };
        est.atoms = grid.iter().map(|theta| est.atom(*theta)).collect();
        if est.atoms.iter().all(|a| a.iter().all(|z| *z == Complex64::default())) {
            return Err(Error::Estimation("precoder has no response over the sector".into()));
        }
        est.grid = grid;
        Ok(est)
    }

    fn atom(&self, theta: f64) -> Array1<Complex64> {
        let c = self.f.t().dot(&self.array.steering(theta)) * &self.pilots;
        let n = c.iter().map(|z| z.norm_sqr()).sum::<f64>().sqrt();
        if n > 0.0 {
            c / Complex64::new(n, 0.0)
        } else {
            c
        }
    }

    fn correlate(y: &Array1<Complex64>, atom: &Array1<Complex64>) -> f64 {
        y.iter().zip(atom).map(|(a, b)| a.conj() * b).sum::<Complex64>().norm_sqr()
    }

    /// `|y^H c(theta)|^2 / ||c(theta)||^2`.
    pub fn metric(&self, y: &Array1<Complex64>, theta: f64) -> f64 {
        Self::correlate(y, &self.atom(theta))
    }

    pub fn sector(&self) -> &AngularSector {
        &self.sector
    }

    pub fn estimate(&self, obs: &Observation) -> Result<AodEstimate> {
        let y = &obs.y;
        if y.len() != self.pilots.len() {
            return Err(Error::Dimension(format!(
                "observation length {} for T = {}",
                y.len(),
                self.pilots.len()
            )));
        }
        let (g_best, m_best) = self
            .atoms
            .iter()
            .map(|a| Self::correlate(y, a))
            .enumerate()
            .fold((0, f64::NEG_INFINITY), |acc, (g, m)| if m > acc.1 { (g, m) } else { acc });
        if !m_best.is_finite() {
            return Err(Error::Estimation("non-finite ML metric".into()));
        }
        let lo = self.grid[g_best.saturating_sub(1)];
        let hi = self.grid[(g_best + 1).min(self.grid.len() - 1)];
        let (theta_ref, m_ref) = golden_section_max(|t| self.metric(y, t), lo, hi, self.cfg.tol);
        let theta_hat = if m_ref >= m_best { theta_ref } else { self.grid[g_best] };
        let variance = aod_crb(
            self.f.view(),
            theta_hat,
            Complex64::new(1.0, 0.0),
            snr_to_noise_var(obs.snr_db),
            &self.array,
            self.pilots.view(),
        )?;
        Ok(AodEstimate {
            theta_hat,
            variance,
            bs_index: obs.bs_index,
        })
    }
}

/// Maximizes `f` on `[a, b]` by golden-section search. Returns the abscissa
/// and value of the best point.
pub fn golden_section_max(f: impl Fn(f64) -> f64, mut a: f64, mut b: f64, tol: f64) -> (f64, f64) {
    let inv_phi = (5f64.sqrt() - 1.0) / 2.0;
    let mut c = b - inv_phi * (b - a);
    let mut d = a + inv_phi * (b - a);
    let mut fc = f(c);
    let mut fd = f(d);
    while (b - a).abs() > tol {
        if fc > fd {
            b = d;
            d = c;
            fd = fc;
            c = b - inv_phi * (b - a);
            fc = f(c);
        } else {
            a = c;
            c = d;
            fc = fd;
            d = a + inv_phi * (b - a);
            fd = f(d);
        }
    }
    let x = 0.5 * (a + b);
    let fx = f(x);
    [(x, fx), (c, fc), (d, fd)]
        .into_iter()
        .fold((x, f64::NEG_INFINITY), |acc, (t, v)| if v > acc.1 { (t, v) } else { acc })
}

/// One-shot ML AoD estimate with unit pilots.
pub fn ml_aod_estimate(
    y: &Observation,
    f: ArrayView2<Complex64>,
    u: &AngularSector,
    array_model: &ArrayModel,
    grid_cfg: &MlGridConfig,
) -> Result<AodEstimate> {
    let s = unit_pilots(f.ncols());
    MlAodEstimator::new(f, *u, array_model.clone(), s.view(), *grid_cfg)?.estimate(y)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionSearchConfig {
    pub nx: usize,
    pub ny: usize,
    pub max_iter: usize,
    /// Gauss-Newton step length (meters) below which refinement stops.
    pub step_tol: f64,
}

impl Default for PositionSearchConfig {
    fn default() -> Self {
        Self {
            nx: 200,
            ny: 200,
            max_iter: 50,
            step_tol: 1e-9,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PositionEstimate {
    pub p: Point2,
    pub cost: f64,
    /// False when Gauss-Newton did not settle; `p` is then the best point seen.
    pub converged: bool,
}

struct Bearing {
    q: Point2,
    psi: f64,
    theta_hat: f64,
    sigma: f64,
}

impl Bearing {
    fn residual(&self, p: Point2) -> Option<f64> {
        let theta = aod_from_position(p, self.q, self.psi).ok()?;
        Some(wrap_angle(self.theta_hat - theta) / self.sigma)
    }
}

fn position_cost(bearings: &[Bearing], p: Point2) -> f64 {
    bearings
        .iter()
        .map(|b| b.residual(p).map_or(f64::INFINITY, |r| 0.5 * r * r))
        .sum()
}

/// Weighted nonlinear least squares on bearings:
/// `sum_i wrap(theta_hat_i - theta_i(p))^2 / (2 sigma_i^2)` over `region`.
pub fn ml_position_estimate(
    estimates: &[AodEstimate],
    scenario: &Scenario,
    region: &Rect,
    cfg: &PositionSearchConfig,
) -> Result<PositionEstimate> {
    if estimates.len() < 2 {
        return Err(Error::Estimation(format!(
            "need at least two AoD estimates, got {}",
            estimates.len()
        )));
    }
    if cfg.nx < 2 || cfg.ny < 2 {
        return Err(Error::Domain("position grid needs at least 2x2 points".into()));
    }
    let bearings = estimates
        .iter()
        .map(|e| {
            if e.bs_index >= scenario.n_bs() {
                return Err(Error::Dimension(format!("unknown BS index {}", e.bs_index)));
            }
            if !(e.variance > 0.0) {
                return Err(Error::Domain(format!("non-positive AoD variance {}", e.variance)));
            }
            Ok(Bearing {
                q: scenario.bs_positions[e.bs_index],
                psi: scenario.bs_orientations[e.bs_index],
                theta_hat: e.theta_hat,
                sigma: e.variance.sqrt(),
            })
        })
        .collect::<Result<Vec<_>>>()?;

    let dx = (region.max[0] - region.min[0]) / (cfg.nx - 1) as f64;
    let dy = (region.max[1] - region.min[1]) / (cfg.ny - 1) as f64;
    let mut best = (region.centroid(), f64::INFINITY);
    for ix in 0..cfg.nx {
        for iy in 0..cfg.ny {
            let p = [region.min[0] + dx * ix as f64, region.min[1] + dy * iy as f64];
            let c = position_cost(&bearings, p);
            if c < best.1 {
                best = (p, c);
            }
        }
    }
    if !best.1.is_finite() {
        return Err(Error::Estimation("position cost is infinite over the region".into()));
    }

    let clamp = |p: Point2| {
        [
            p[0].clamp(region.min[0], region.max[0]),
            p[1].clamp(region.min[1], region.max[1]),
        ]
    };
    let (mut p, mut cost) = best;
    let mut converged = false;
    'outer: for _ in 0..cfg.max_iter {
        let mut jtj = Matrix2::zeros();
        let mut jtr = Vector2::zeros();
        for b in &bearings {
            let (Some(r), Ok(g)) = (b.residual(p), aod_gradient(p, b.q)) else {
                break 'outer;
            };
            // d r / d p = -grad(theta) / sigma
            let jrow = Vector2::new(-g[0], -g[1]) / b.sigma;
            jtj += jrow * jrow.transpose();
            jtr += jrow * r;
        }
        let Some(step) = jtj.try_inverse().map(|inv| -(inv * jtr)) else {
            break;
        };
        let mut scale = 1.0;
        let mut accepted = false;
        for _ in 0..40 {
            let cand = clamp([p[0] + scale * step[0], p[1] + scale * step[1]]);
            let c = position_cost(&bearings, cand);
            if c <= cost {
                let moved = ((cand[0] - p[0]).powi(2) + (cand[1] - p[1]).powi(2)).sqrt();
                p = cand;
                cost = c;
                accepted = true;
                if moved < cfg.step_tol {
                    converged = true;
                    break 'outer;
                }
                break;
            }
            scale *= 0.5;
        }
        if !accepted {
            // No descent along the Gauss-Newton direction: at a minimum up to
            // floating-point resolution.
            converged = true;
            break;
        }
    }
    Ok(PositionEstimate { p, cost, converged })
}
