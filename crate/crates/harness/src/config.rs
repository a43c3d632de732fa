//! Experiment configuration: a TOML file of flat sections. Every key is
//! optional and falls back to the documented default; unknown keys are
//! rejected. Angles are in degrees, lengths in meters.

use std::path::{Path, PathBuf};

use mmpos_core::array::{coupling_from_decay, coupling_matrix, perturb_spacing, ArrayModel, CouplingSpec};
use mmpos_core::baseline::{MlGridConfig, PositionSearchConfig, PowerAllocationConfig};
use mmpos_core::scenario::{check_region_visibility, AngularSector, PositionPrior, Rect, Scenario};
use mmpos_learn::e2e::TrainConfig;
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::HarnessError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ExperimentConfig {
    /// Required, either here or on the command line.
    pub seed: Option<u64>,
    pub trials: usize,
    pub out_dir: PathBuf,
    /// `benchmark`, `ae` or `both`.
    pub system: String,
    pub scenario: ScenarioSection,
    pub impairment: ImpairmentSection,
    pub sweep: SweepSection,
    pub evaluation: EvaluationSection,
    pub training: TrainingSection,
    pub baseline: BaselineSection,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            seed: None,
            trials: 2000,
            out_dir: PathBuf::from("out"),
            system: "benchmark".into(),
            scenario: ScenarioSection::default(),
            impairment: ImpairmentSection::default(),
            sweep: SweepSection::default(),
            evaluation: EvaluationSection::default(),
            training: TrainingSection::default(),
            baseline: BaselineSection::default(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ScenarioSection {
    pub bs_positions: Vec<[f64; 2]>,
    pub bs_orientations_deg: Vec<f64>,
    pub n_tx: usize,
    pub n_transmissions: usize,
    pub wavelength: f64,
    pub region_min: [f64; 2],
    pub region_max: [f64; 2],
}

impl Default for ScenarioSection {
    fn default() -> Self {
        let sc = Scenario::default();
        Self {
            bs_positions: sc.bs_positions.clone(),
            bs_orientations_deg: sc.bs_orientations.iter().map(|p| p.to_degrees()).collect(),
            n_tx: sc.n_tx,
            n_transmissions: sc.n_transmissions,
            wavelength: sc.wavelength,
            region_min: sc.prior_region.min,
            region_max: sc.prior_region.max,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct ImpairmentSection {
    /// `none`, `spacing` or `coupling`.
    pub kind: String,
    /// Spacing perturbation standard deviation as a fraction of λ.
    pub sigma_lambda: f64,
    /// Coupling coefficient magnitudes `|c_0| .. |c_M|`.
    pub coupling_magnitudes: Vec<f64>,
    pub coupling_phases_deg: Vec<f64>,
    /// When set, magnitudes become `exp(zeta k)` with the phases above and
    /// the matrix is rescaled to the Frobenius norm of the reference one.
    pub zeta: Option<f64>,
    /// Independent spacing draws averaged per sweep point.
    pub draws: usize,
}

impl Default for ImpairmentSection {
    fn default() -> Self {
        let c = CouplingSpec::reference();
        Self {
            kind: "none".into(),
            sigma_lambda: 0.01,
            coupling_magnitudes: c.coefficients().iter().map(|z| z.norm()).collect(),
            coupling_phases_deg: c.coefficients().iter().map(|z| z.arg().to_degrees()).collect(),
            zeta: None,
            draws: 20,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SweepSection {
    /// `snr`, `sigma` or `zeta`.
    pub axis: String,
    pub snr_db: Vec<f64>,
    /// Spacing perturbation levels as fractions of λ.
    pub sigma_lambda: Vec<f64>,
    pub zeta: Vec<f64>,
    /// SNR used along the `sigma` and `zeta` axes.
    pub fixed_snr_db: f64,
}

impl Default for SweepSection {
    fn default() -> Self {
        Self {
            axis: "snr".into(),
            snr_db: vec![-5.0, 0.0, 5.0, 10.0, 15.0, 20.0, 25.0, 30.0],
            sigma_lambda: vec![1.0 / 300.0, 1.0 / 200.0, 1.0 / 100.0, 1.0 / 50.0, 1.0 / 30.0],
            zeta: vec![-0.001, -0.01, -0.1, -0.3, -1.0, -5.0],
            fixed_snr_db: 20.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EvaluationSection {
    /// BS evaluated by AoD experiments.
    pub bs: usize,
    pub sector_deg: [f64; 2],
    /// True AoD; the sector midpoint when absent.
    pub theta_deg: Option<f64>,
    pub position: [f64; 2],
    /// Width of the per-BS sectors centered on the true AoDs.
    pub position_sector_width_deg: f64,
    /// Angular grid of the beampattern command.
    pub beampattern_step_deg: f64,
    pub beampattern_snr_db: f64,
}

impl Default for EvaluationSection {
    fn default() -> Self {
        Self {
            bs: 0,
            sector_deg: [40.0, 60.0],
            theta_deg: None,
            position: [0.5, 5.0],
            position_sector_width_deg: 30.0,
            beampattern_step_deg: 1.0,
            beampattern_snr_db: 10.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingSection {
    pub batch_size: usize,
    pub iterations: usize,
    pub hidden: usize,
    pub learning_rate: f64,
    pub patience: usize,
    pub epoch_len: usize,
    pub width_range_deg: [f64; 2],
    pub mean_range_deg: [f64; 2],
    pub prior_half_width_deg: f64,
    pub prior_max_offset_deg: f64,
    /// SNRs to train; the sweep SNR grid when empty.
    pub snr_db: Vec<f64>,
    /// BSs whose beamformers the AoD autoencoder trains; all when empty.
    pub aod_bs: Vec<usize>,
    pub checkpoint_dir: PathBuf,
}

impl Default for TrainingSection {
    fn default() -> Self {
        let t = TrainConfig::default();
        Self {
            batch_size: t.batch_size,
            iterations: t.iterations,
            hidden: t.hidden,
            learning_rate: t.learning_rate,
            patience: t.patience,
            epoch_len: t.epoch_len,
            width_range_deg: t.width_range.map(f64::to_degrees),
            mean_range_deg: t.mean_range.map(f64::to_degrees),
            prior_half_width_deg: t.position_prior.half_width.to_degrees(),
            prior_max_offset_deg: t.position_prior.max_offset.to_degrees(),
            snr_db: Vec::new(),
            aod_bs: Vec::new(),
            checkpoint_dir: PathBuf::from("checkpoints"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct BaselineSection {
    pub pa_grid_size: usize,
    pub pa_iterations: usize,
    pub pa_restarts: usize,
    pub pa_step: f64,
    pub ml_points: usize,
    pub ml_tol: f64,
    pub position_grid: [usize; 2],
    pub position_max_iter: usize,
    pub position_step_tol: f64,
}

impl Default for BaselineSection {
    fn default() -> Self {
        let pa = PowerAllocationConfig::default();
        let ml = MlGridConfig::default();
        let ps = PositionSearchConfig::default();
        Self {
            pa_grid_size: pa.grid_size,
            pa_iterations: pa.iterations,
            pa_restarts: pa.restarts,
            pa_step: pa.step,
            ml_points: ml.points,
            ml_tol: ml.tol,
            position_grid: [ps.nx, ps.ny],
            position_max_iter: ps.max_iter,
            position_step_tol: ps.step_tol,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SystemSelection {
    Benchmark,
    Ae,
    Both,
}

impl SystemSelection {
    pub fn benchmark(self) -> bool {
        matches!(self, Self::Benchmark | Self::Both)
    }

    pub fn ae(self) -> bool {
        matches!(self, Self::Ae | Self::Both)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SweepAxis {
    Snr,
    Sigma,
    Zeta,
}

impl SweepAxis {
    pub fn name(self) -> &'static str {
        match self {
            Self::Snr => "snr",
            Self::Sigma => "sigma",
            Self::Zeta => "zeta",
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum Impairment {
    None,
    /// Standard deviation in meters.
    Spacing { sigma: f64 },
    Coupling { spec: CouplingSpec, zeta: Option<f64> },
}

fn line_of(text: &str, offset: usize) -> usize {
    text[..offset.min(text.len())].bytes().filter(|&b| b == b'\n').count() + 1
}

impl ExperimentConfig {
    pub fn parse(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| {
            let line = e.span().map(|s| line_of(text, s.start));
            HarnessError::ConfigParse {
                line,
                message: e.message().to_string(),
            }
        })?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| HarnessError::Config(format!("cannot read {}: {e}", path.display())))?;
        Self::parse(&text)
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let invalid = |m: String| Err(HarnessError::Config(m));
        self.system_selection()?;
        self.sweep_axis()?;
        if self.trials == 0 {
            return invalid("trials must be positive".into());
        }
        self.scenario()?;
        self.impairment()?;
        let sweep = &self.sweep;
        if sweep.snr_db.iter().any(|v| !v.is_finite()) {
            return invalid("sweep.snr_db must be finite".into());
        }
        if sweep.sigma_lambda.iter().any(|&v| !(v >= 0.0)) {
            return invalid(format!("sweep.sigma_lambda must be non-negative, got {:?}", sweep.sigma_lambda));
        }
        if sweep.zeta.iter().any(|&v| !(v < 0.0)) {
            return invalid(format!("sweep.zeta must be negative, got {:?}", sweep.zeta));
        }
        if self.evaluation.bs >= self.scenario.bs_positions.len() {
            return invalid(format!("evaluation.bs = {} but only {} BSs", self.evaluation.bs, self.scenario.bs_positions.len()));
        }
        self.evaluation_sector()?;
        if let Some(&b) = self.training.aod_bs.iter().find(|&&b| b >= self.scenario.bs_positions.len()) {
            return invalid(format!("training.aod_bs contains unknown BS {b}"));
        }
        if !(self.evaluation.beampattern_step_deg > 0.0) {
            return invalid("evaluation.beampattern_step_deg must be positive".into());
        }
        self.train_config(0.0)
            .validate()
            .map_err(|e| HarnessError::Config(format!("training: {e}")))?;
        Ok(())
    }

    pub fn system_selection(&self) -> Result<SystemSelection, HarnessError> {
        match self.system.as_str() {
            "benchmark" => Ok(SystemSelection::Benchmark),
            "ae" => Ok(SystemSelection::Ae),
            "both" => Ok(SystemSelection::Both),
            other => Err(HarnessError::Config(format!("system must be benchmark, ae or both, got `{other}`"))),
        }
    }

    pub fn sweep_axis(&self) -> Result<SweepAxis, HarnessError> {
        match self.sweep.axis.as_str() {
            "snr" => Ok(SweepAxis::Snr),
            "sigma" => Ok(SweepAxis::Sigma),
            "zeta" => Ok(SweepAxis::Zeta),
            other => Err(HarnessError::SweepAxis(format!("unknown sweep axis `{other}` (expected snr, sigma or zeta)"))),
        }
    }

    /// Seed from the command line, else from the file.
    pub fn resolve_seed(&self, cli: Option<u64>) -> Result<u64, HarnessError> {
        cli.or(self.seed)
            .ok_or_else(|| HarnessError::MissingKey("seed".into()))
    }

    pub fn scenario(&self) -> Result<Scenario, HarnessError> {
        let s = &self.scenario;
        let prior_region = Rect::new(s.region_min, s.region_max)
            .map_err(|e| HarnessError::Config(format!("scenario region: {e}")))?;
        let sc = Scenario {
            bs_positions: s.bs_positions.clone(),
            bs_orientations: s.bs_orientations_deg.iter().map(|d| d.to_radians()).collect(),
            n_tx: s.n_tx,
            n_transmissions: s.n_transmissions,
            wavelength: s.wavelength,
            prior_region,
        };
        sc.validate().map_err(|e| HarnessError::Config(format!("scenario: {e}")))?;
        check_region_visibility(&sc).map_err(|e| HarnessError::Config(format!("scenario: {e}")))?;
        Ok(sc)
    }

    pub fn coupling_reference(&self) -> Result<CouplingSpec, HarnessError> {
        let imp = &self.impairment;
        if imp.coupling_magnitudes.len() != imp.coupling_phases_deg.len() {
            return Err(HarnessError::Config("coupling magnitudes and phases differ in length".into()));
        }
        let c = imp
            .coupling_magnitudes
            .iter()
            .zip(&imp.coupling_phases_deg)
            .map(|(&m, &p)| Complex64::from_polar(m, p.to_radians()))
            .collect();
        CouplingSpec::new(c).map_err(|e| HarnessError::Config(format!("impairment coupling: {e}")))
    }

    pub fn impairment(&self) -> Result<Impairment, HarnessError> {
        let imp = &self.impairment;
        if !(imp.sigma_lambda >= 0.0) {
            return Err(HarnessError::Config(format!(
                "impairment.sigma_lambda must be non-negative, got {}",
                imp.sigma_lambda
            )));
        }
        if imp.draws == 0 {
            return Err(HarnessError::Config("impairment.draws must be positive".into()));
        }
        let spec = self.coupling_reference()?;
        if let Some(z) = imp.zeta {
            coupling_from_decay(z, &spec, self.scenario.n_tx)
                .map_err(|e| HarnessError::Config(format!("impairment.zeta: {e}")))?;
        }
        match imp.kind.as_str() {
            "none" => Ok(Impairment::None),
            "spacing" => Ok(Impairment::Spacing {
                sigma: imp.sigma_lambda * self.scenario.wavelength,
            }),
            "coupling" => Ok(Impairment::Coupling { spec, zeta: imp.zeta }),
            other => Err(HarnessError::Config(format!(
                "impairment.kind must be none, spacing or coupling, got `{other}`"
            ))),
        }
    }

    pub fn evaluation_sector(&self) -> Result<AngularSector, HarnessError> {
        let [lo, hi] = self.evaluation.sector_deg;
        AngularSector::from_degrees(lo, hi).map_err(|e| HarnessError::Config(format!("evaluation.sector_deg: {e}")))
    }

    pub fn evaluation_theta(&self) -> Result<f64, HarnessError> {
        let u = self.evaluation_sector()?;
        Ok(self.evaluation.theta_deg.map_or(u.mid(), f64::to_radians))
    }

    pub fn pa_config(&self, seed: u64) -> PowerAllocationConfig {
        let b = &self.baseline;
        PowerAllocationConfig {
            grid_size: b.pa_grid_size,
            iterations: b.pa_iterations,
            restarts: b.pa_restarts,
            step: b.pa_step,
            seed,
        }
    }

    pub fn ml_config(&self) -> MlGridConfig {
        MlGridConfig {
            points: self.baseline.ml_points,
            tol: self.baseline.ml_tol,
        }
    }

    pub fn search_config(&self) -> PositionSearchConfig {
        let b = &self.baseline;
        PositionSearchConfig {
            nx: b.position_grid[0],
            ny: b.position_grid[1],
            max_iter: b.position_max_iter,
            step_tol: b.position_step_tol,
        }
    }

    pub fn train_config(&self, snr_db: f64) -> TrainConfig {
        let t = &self.training;
        TrainConfig {
            batch_size: t.batch_size,
            snr_db,
            iterations: t.iterations,
            hidden: t.hidden,
            seed: self.seed.unwrap_or(0),
            learning_rate: t.learning_rate,
            patience: t.patience,
            epoch_len: t.epoch_len,
            width_range: t.width_range_deg.map(f64::to_radians),
            mean_range: t.mean_range_deg.map(f64::to_radians),
            position_prior: PositionPrior {
                half_width: t.prior_half_width_deg.to_radians(),
                max_offset: t.prior_max_offset_deg.to_radians(),
            },
        }
    }

    pub fn training_snrs(&self) -> Vec<f64> {
        if self.training.snr_db.is_empty() {
            self.sweep.snr_db.clone()
        } else {
            self.training.snr_db.clone()
        }
    }

    /// True arrays of every BS for one impairment realization. Spacing draws
    /// are independent per BS and per `draw`.
    pub fn true_arrays(&self, impairment: &Impairment, seed: u64, draw: u64) -> Result<Vec<ArrayModel>, HarnessError> {
        let s = &self.scenario;
        let n_bs = s.bs_positions.len();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(IMPAIRMENT_STREAM + draw);
        (0..n_bs)
            .map(|_| {
                let arr = match impairment {
                    Impairment::None => ArrayModel::ideal(s.n_tx, s.wavelength),
                    Impairment::Spacing { sigma } => {
                        let pos = perturb_spacing(&mut rng, s.n_tx, *sigma, s.wavelength)?;
                        ArrayModel::with_positions(pos, s.wavelength)?
                    }
                    Impairment::Coupling { spec, zeta } => {
                        let b = match zeta {
                            Some(z) => coupling_from_decay(*z, spec, s.n_tx)?,
                            None => coupling_matrix(spec, s.n_tx)?,
                        };
                        ArrayModel::ideal(s.n_tx, s.wavelength).with_coupling(b)?
                    }
                };
                Ok(arr)
            })
            .collect::<Result<Vec<_>, mmpos_core::Error>>()
            .map_err(HarnessError::from)
    }

    pub fn ideal_arrays(&self) -> Vec<ArrayModel> {
        let s = &self.scenario;
        vec![ArrayModel::ideal(s.n_tx, s.wavelength); s.bs_positions.len()]
    }

    /// Number of independent impairment realizations worth averaging.
    pub fn n_draws(&self, impairment: &Impairment) -> usize {
        match impairment {
            Impairment::Spacing { sigma } if *sigma > 0.0 => self.impairment.draws,
            _ => 1,
        }
    }
}

/// RNG stream offset reserved for impairment draws, so they never overlap
/// the Monte-Carlo streams of sweep points.
pub const IMPAIRMENT_STREAM: u64 = 1 << 32;
