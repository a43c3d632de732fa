//! Monte-Carlo RMSE of learned and benchmark systems, paired with the
//! bound of the precoder actually transmitted over the true array.

use mmpos_core::array::ArrayModel;
use mmpos_core::baseline::{
    benchmark_precoder, ml_position_estimate, MlAodEstimator, MlGridConfig, PositionSearchConfig,
    PowerAllocationConfig,
};
use mmpos_core::bounds::{aod_crb, peb, position_fim};
use mmpos_core::channel::{simulate_observation, unit_pilots, GainModel, PrecoderMatrix};
use mmpos_core::scenario::{AngularSector, Scenario};
use mmpos_core::{wrap_angle, Point2};
use ndarray::Array2;
use num_complex::Complex64;
use rand::Rng;

use crate::e2e::{observation_features, AodDecoderNet, BeamformerNet, PosDecoderNet};
use crate::error::{shape, Result};

/// Accumulated squared errors of one Monte-Carlo point. Units are rad for
/// AoD and m for position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RmsePoint {
    pub snr_db: f64,
    pub trials: usize,
    sum_sq: f64,
    sum_sq2: f64,
    /// Lower bound on the RMSE (√CRB or PEB).
    pub bound: f64,
}

impl RmsePoint {
    pub fn from_sq_errors(snr_db: f64, sq_errors: &[f64], bound: f64) -> Self {
        Self {
            snr_db,
            trials: sq_errors.len(),
            sum_sq: sq_errors.iter().sum(),
            sum_sq2: sq_errors.iter().map(|e| e * e).sum(),
            bound,
        }
    }

    pub fn mse(&self) -> f64 {
        self.sum_sq / self.trials as f64
    }

    pub fn rmse(&self) -> f64 {
        self.mse().sqrt()
    }

    /// Standard error of the RMSE by the delta method.
    pub fn stderr(&self) -> f64 {
        let n = self.trials as f64;
        if self.trials < 2 || self.sum_sq == 0.0 {
            return 0.0;
        }
        let mean = self.sum_sq / n;
        let var = ((self.sum_sq2 - n * mean * mean) / (n - 1.0)).max(0.0);
        (var / n).sqrt() / (2.0 * mean.sqrt())
    }

    /// Pools points of one SNR, e.g. over impairment draws. The pooled bound
    /// is the root of the trial-weighted mean squared bound.
    pub fn pool(points: &[RmsePoint]) -> Option<RmsePoint> {
        let first = points.first()?;
        let trials: usize = points.iter().map(|p| p.trials).sum();
        let bound_sq = points.iter().map(|p| p.bound * p.bound * p.trials as f64).sum::<f64>() / trials as f64;
        Some(RmsePoint {
            snr_db: first.snr_db,
            trials,
            sum_sq: points.iter().map(|p| p.sum_sq).sum(),
            sum_sq2: points.iter().map(|p| p.sum_sq2).sum(),
            bound: bound_sq.sqrt(),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AodEvalSpec {
    pub sector: AngularSector,
    pub theta: f64,
    pub snr_db: f64,
    pub trials: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct PositionEvalSpec {
    pub p: Point2,
    pub sectors: Vec<AngularSector>,
    pub snr_db: f64,
    pub trials: usize,
}

/// Sectors of the given width centered on each BS's true AoD to `p`.
pub fn centered_sectors(scenario: &Scenario, p: Point2, width: f64) -> Result<Vec<AngularSector>> {
    (0..scenario.n_bs())
        .map(|b| {
            let theta = scenario.aod(b, p)?;
            Ok(AngularSector::new(theta - width / 2.0, theta + width / 2.0)?)
        })
        .collect()
}

fn sqrt_crb(f: &PrecoderMatrix, theta: f64, snr_db: f64, array: &ArrayModel) -> Result<f64> {
    let gain = GainModel::new(0.0, snr_db);
    let s = unit_pilots(f.n_transmissions());
    Ok(aod_crb(f.matrix(), theta, Complex64::new(1.0, 0.0), gain.noise_var(), array, s.view())?.sqrt())
}

fn simulate_features<R: Rng + ?Sized>(
    rng: &mut R,
    precoders: &[&PrecoderMatrix],
    thetas: &[f64],
    arrays: &[ArrayModel],
    snr_db: f64,
    trials: usize,
) -> Result<Array2<f64>> {
    let t = precoders[0].n_transmissions();
    let s = unit_pilots(t);
    let width = 2 * t * precoders.len();
    let mut x = Array2::zeros((trials, width));
    for i in 0..trials {
        let mut row = Vec::with_capacity(width);
        for ((f, &theta), array) in precoders.iter().zip(thetas).zip(arrays) {
            let gain = GainModel::draw(rng, snr_db);
            let obs = simulate_observation(rng, f.matrix(), theta, &gain, array, s.view())?;
            row.extend(observation_features(&obs.y));
        }
        x.row_mut(i).assign(&ndarray::Array1::from(row));
    }
    Ok(x)
}

/// AoD RMSE of a learned transmitter/receiver pair over `true_array`.
pub fn aod_rmse_ae<R: Rng + ?Sized>(
    beamformer: &BeamformerNet,
    decoder: &AodDecoderNet,
    spec: &AodEvalSpec,
    true_array: &ArrayModel,
    rng: &mut R,
) -> Result<RmsePoint> {
    let f = beamformer.precoder_for(&spec.sector)?;
    let x = simulate_features(rng, &[&f], &[spec.theta], std::slice::from_ref(true_array), spec.snr_db, spec.trials)?;
    let est = decoder.decode_features(&x)?;
    let sq: Vec<f64> = est.iter().map(|e| wrap_angle(e - spec.theta).powi(2)).collect();
    let bound = sqrt_crb(&f, spec.theta, spec.snr_db, true_array)?;
    Ok(RmsePoint::from_sq_errors(spec.snr_db, &sq, bound))
}

/// AoD RMSE of the model-based benchmark. The transmitter and the ML
/// receiver are designed for `design_array`; data go through `true_array`.
pub fn aod_rmse_benchmark<R: Rng + ?Sized>(
    spec: &AodEvalSpec,
    t: usize,
    design_array: &ArrayModel,
    true_array: &ArrayModel,
    pa: &PowerAllocationConfig,
    ml: &MlGridConfig,
    rng: &mut R,
) -> Result<RmsePoint> {
    let f = benchmark_precoder(&spec.sector, t, spec.snr_db, design_array, pa)?.precoder;
    aod_rmse_with_precoder(&f, spec, design_array, true_array, ml, rng)
}

/// AoD RMSE of the ML receiver for a fixed precoder.
pub fn aod_rmse_with_precoder<R: Rng + ?Sized>(
    f: &PrecoderMatrix,
    spec: &AodEvalSpec,
    design_array: &ArrayModel,
    true_array: &ArrayModel,
    ml: &MlGridConfig,
    rng: &mut R,
) -> Result<RmsePoint> {
    let s = unit_pilots(f.n_transmissions());
    let est = MlAodEstimator::new(f.matrix(), spec.sector, design_array.clone(), s.view(), *ml)?;
    let mut sq = Vec::with_capacity(spec.trials);
    for _ in 0..spec.trials {
        let gain = GainModel::draw(rng, spec.snr_db);
        let obs = simulate_observation(rng, f.matrix(), spec.theta, &gain, true_array, s.view())?;
        let e = est.estimate(&obs)?;
        sq.push(wrap_angle(e.theta_hat - spec.theta).powi(2));
    }
    let bound = sqrt_crb(f, spec.theta, spec.snr_db, true_array)?;
    Ok(RmsePoint::from_sq_errors(spec.snr_db, &sq, bound))
}

fn check_position_inputs(scenario: &Scenario, spec: &PositionEvalSpec, arrays: &[ArrayModel]) -> Result<()> {
    if spec.sectors.len() != scenario.n_bs() || arrays.len() != scenario.n_bs() {
        return Err(shape(format!(
            "{} sectors and {} arrays for {} BSs",
            spec.sectors.len(),
            arrays.len(),
            scenario.n_bs()
        )));
    }
    Ok(())
}

fn peb_of(scenario: &Scenario, precoders: &[PrecoderMatrix], p: Point2, snr_db: f64, arrays: &[ArrayModel]) -> Result<f64> {
    let gains = vec![GainModel::new(0.0, snr_db); precoders.len()];
    let s = unit_pilots(precoders[0].n_transmissions());
    Ok(peb(&position_fim(scenario, precoders, p, &gains, arrays, s.view())?)?)
}

/// Position RMSE of a learned positioning system.
pub fn position_rmse_ae<R: Rng + ?Sized>(
    beamformers: &[BeamformerNet],
    decoder: &PosDecoderNet,
    scenario: &Scenario,
    spec: &PositionEvalSpec,
    true_arrays: &[ArrayModel],
    rng: &mut R,
) -> Result<RmsePoint> {
    check_position_inputs(scenario, spec, true_arrays)?;
    if beamformers.len() != scenario.n_bs() {
        return Err(shape("one beamformer per BS is required"));
    }
    let precoders = beamformers
        .iter()
        .zip(&spec.sectors)
        .map(|(b, u)| b.precoder_for(u))
        .collect::<Result<Vec<_>>>()?;
    let thetas = (0..scenario.n_bs())
        .map(|b| scenario.aod(b, spec.p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let refs: Vec<&PrecoderMatrix> = precoders.iter().collect();
    let x = simulate_features(rng, &refs, &thetas, true_arrays, spec.snr_db, spec.trials)?;
    let est = decoder.decode_features(&x)?;
    let sq: Vec<f64> = est
        .iter()
        .map(|q| (q[0] - spec.p[0]).powi(2) + (q[1] - spec.p[1]).powi(2))
        .collect();
    let bound = peb_of(scenario, &precoders, spec.p, spec.snr_db, true_arrays)?;
    Ok(RmsePoint::from_sq_errors(spec.snr_db, &sq, bound))
}

/// Position RMSE of the benchmark: per-BS benchmark precoders and ML AoD
/// receivers designed for `design_arrays`, fused by weighted bearing least
/// squares over the scenario's prior region.
#[allow(clippy::too_many_arguments)]
pub fn position_rmse_benchmark<R: Rng + ?Sized>(
    scenario: &Scenario,
    spec: &PositionEvalSpec,
    design_arrays: &[ArrayModel],
    true_arrays: &[ArrayModel],
    pa: &PowerAllocationConfig,
    ml: &MlGridConfig,
    search: &PositionSearchConfig,
    rng: &mut R,
) -> Result<RmsePoint> {
    check_position_inputs(scenario, spec, true_arrays)?;
    check_position_inputs(scenario, spec, design_arrays)?;
    let t = scenario.n_transmissions;
    let precoders = spec
        .sectors
        .iter()
        .zip(design_arrays)
        .map(|(u, a)| Ok(benchmark_precoder(u, t, spec.snr_db, a, pa)?.precoder))
        .collect::<Result<Vec<_>>>()?;
    position_rmse_with_precoders(scenario, spec, &precoders, design_arrays, true_arrays, ml, search, rng)
}

/// Position RMSE of the ML pipeline for fixed per-BS precoders.
#[allow(clippy::too_many_arguments)]
pub fn position_rmse_with_precoders<R: Rng + ?Sized>(
    scenario: &Scenario,
    spec: &PositionEvalSpec,
    precoders: &[PrecoderMatrix],
    design_arrays: &[ArrayModel],
    true_arrays: &[ArrayModel],
    ml: &MlGridConfig,
    search: &PositionSearchConfig,
    rng: &mut R,
) -> Result<RmsePoint> {
    check_position_inputs(scenario, spec, true_arrays)?;
    check_position_inputs(scenario, spec, design_arrays)?;
    let s = unit_pilots(scenario.n_transmissions);
    let estimators = precoders
        .iter()
        .zip(&spec.sectors)
        .zip(design_arrays)
        .map(|((f, u), a)| Ok(MlAodEstimator::new(f.matrix(), *u, a.clone(), s.view(), *ml)?))
        .collect::<Result<Vec<_>>>()?;
    let thetas = (0..scenario.n_bs())
        .map(|b| scenario.aod(b, spec.p))
        .collect::<std::result::Result<Vec<_>, _>>()?;
    let mut sq = Vec::with_capacity(spec.trials);
    for _ in 0..spec.trials {
        let mut estimates = Vec::with_capacity(scenario.n_bs());
        for (b, est) in estimators.iter().enumerate() {
            let gain = GainModel::draw(rng, spec.snr_db);
            let mut obs = simulate_observation(rng, precoders[b].matrix(), thetas[b], &gain, &true_arrays[b], s.view())?;
            obs.bs_index = b;
            estimates.push(est.estimate(&obs)?);
        }
        let q = ml_position_estimate(&estimates, scenario, &scenario.prior_region, search)?.p;
        sq.push((q[0] - spec.p[0]).powi(2) + (q[1] - spec.p[1]).powi(2));
    }
    let bound = peb_of(scenario, precoders, spec.p, spec.snr_db, true_arrays)?;
    Ok(RmsePoint::from_sq_errors(spec.snr_db, &sq, bound))
}
