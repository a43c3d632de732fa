//! One function per CLI command. Each returns the paths it wrote.
//!
//! Randomness: every sweep point draws from its own ChaCha8 stream of the
//! run seed, so a point's numbers do not depend on which other points run.

use std::path::{Path, PathBuf};

use log::info;
use mmpos_core::array::ArrayModel;
use mmpos_core::baseline::benchmark_precoder;
use mmpos_core::bounds::{aod_crb, peb, position_fim};
use mmpos_core::channel::{unit_pilots, GainModel, PrecoderMatrix};
use mmpos_core::scenario::{AngularSector, Scenario};
use mmpos_learn::checkpoint::{load_mlp_expecting, save_mlp};
use mmpos_learn::e2e::{
    aod_decoder_spec, beamformer_spec, pos_decoder_spec, train_aod_ae, train_pos_ae, AodDecoderNet, BeamformerNet,
    PosDecoderNet, TrainingLog,
};
use mmpos_learn::eval::{
    aod_rmse_ae, aod_rmse_with_precoder, centered_sectors, position_rmse_ae, position_rmse_with_precoders,
    AodEvalSpec, PositionEvalSpec, RmsePoint,
};
use num_complex::Complex64;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::config::{ExperimentConfig, Impairment, SweepAxis};
use crate::error::HarnessError;
use crate::output::{write_csv, BeamRow, BoundsRow, HwiRow, LogRow, Sidecar, SweepRow};

pub const SWEEP_COLUMNS: [&str; 4] = ["snr_db", "rmse", "bound", "stderr"];
pub const BOUNDS_COLUMNS: [&str; 3] = ["snr_db", "sqrt_crb_deg", "peb_m"];
pub const BEAM_COLUMNS: [&str; 2] = ["theta_deg", "gain"];
pub const HWI_COLUMNS: [&str; 3] = ["axis_value", "rmse", "bound"];
pub const LOG_COLUMNS: [&str; 3] = ["iteration", "loss", "lr"];

const AOD_UNITS: &str = "degrees";
const POS_UNITS: &str = "meters";

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelKind {
    Aod,
    Pos,
}

impl ModelKind {
    pub fn name(self) -> &'static str {
        match self {
            Self::Aod => "aod",
            Self::Pos => "pos",
        }
    }
}

// Stream families; the point index and draw index fill the lower bits.
const STREAM_BASELINE_AOD: u64 = 1;
const STREAM_BASELINE_POS: u64 = 2;
const STREAM_HWI_AOD: u64 = 3;
const STREAM_HWI_POS: u64 = 4;
const STREAM_TRAIN: u64 = 5;
const STREAM_EVAL_AE: u64 = 6;
const STREAM_EVAL_BENCH: u64 = 7;

fn stream(family: u64, point: usize, draw: usize) -> u64 {
    (family << 40) | ((point as u64) << 20) | draw as u64
}

/// A validated configuration with the command-line overrides applied.
#[derive(Debug, Clone)]
pub struct Run {
    pub cfg: ExperimentConfig,
    pub seed: u64,
    pub trials: usize,
    pub out_dir: PathBuf,
    scenario: Scenario,
}

impl Run {
    pub fn new(
        mut cfg: ExperimentConfig,
        seed: Option<u64>,
        trials: Option<usize>,
        out_dir: Option<PathBuf>,
    ) -> Result<Self, HarnessError> {
        let seed = cfg.resolve_seed(seed)?;
        cfg.seed = Some(seed);
        if let Some(t) = trials {
            cfg.trials = t;
        }
        if let Some(o) = out_dir {
            cfg.out_dir = o;
        }
        cfg.validate()?;
        let scenario = cfg.scenario()?;
        Ok(Self {
            seed,
            trials: cfg.trials,
            out_dir: cfg.out_dir.clone(),
            scenario,
            cfg,
        })
    }

    pub fn scenario(&self) -> &Scenario {
        &self.scenario
    }

    fn rng(&self, stream_id: u64) -> ChaCha8Rng {
        let mut rng = ChaCha8Rng::seed_from_u64(self.seed);
        rng.set_stream(stream_id);
        rng
    }

    fn sidecar<'a>(&'a self, command: &'a str, output: &'a str, columns: &'a [&'a str], units: &'a str) -> Sidecar<'a> {
        Sidecar {
            artifact: crate::output::ARTIFACT,
            artifact_version: crate::output::ARTIFACT_VERSION,
            command,
            output,
            seed: self.seed,
            trials: self.trials,
            columns,
            units,
            inputs: Vec::new(),
            config: &self.cfg,
        }
    }

    /// Directory holding checkpoints; relative paths are taken inside the
    /// output directory.
    pub fn checkpoint_dir(&self) -> PathBuf {
        let d = &self.cfg.training.checkpoint_dir;
        if d.is_absolute() {
            d.clone()
        } else {
            self.out_dir.join(d)
        }
    }

    fn eval_sector(&self) -> Result<(AngularSector, f64), HarnessError> {
        Ok((self.cfg.evaluation_sector()?, self.cfg.evaluation_theta()?))
    }

    fn eval_position_sectors(&self) -> Result<Vec<AngularSector>, HarnessError> {
        let width = self.cfg.evaluation.position_sector_width_deg.to_radians();
        Ok(centered_sectors(&self.scenario, self.cfg.evaluation.position, width)?)
    }

    fn benchmark_aod_precoder(&self, u: &AngularSector, snr_db: f64) -> Result<PrecoderMatrix, HarnessError> {
        let design = &self.cfg.ideal_arrays()[self.cfg.evaluation.bs];
        let pa = self.cfg.pa_config(self.seed);
        Ok(benchmark_precoder(u, self.scenario.n_transmissions, snr_db, design, &pa)?.precoder)
    }

    fn benchmark_pos_precoders(&self, sectors: &[AngularSector], snr_db: f64) -> Result<Vec<PrecoderMatrix>, HarnessError> {
        let pa = self.cfg.pa_config(self.seed);
        sectors
            .iter()
            .zip(self.cfg.ideal_arrays())
            .map(|(u, a)| Ok(benchmark_precoder(u, self.scenario.n_transmissions, snr_db, &a, &pa)?.precoder))
            .collect()
    }

    /// Benchmark AoD RMSE pooled over the realizations of `impairment`,
    /// splitting the trial budget evenly between them.
    fn benchmark_aod_point(&self, impairment: &Impairment, snr_db: f64, family: u64, point: usize) -> Result<RmsePoint, HarnessError> {
        let (u, theta) = self.eval_sector()?;
        let f = self.benchmark_aod_precoder(&u, snr_db)?;
        let design = self.cfg.ideal_arrays()[self.cfg.evaluation.bs].clone();
        let draws = self.cfg.n_draws(impairment);
        let spec = AodEvalSpec {
            sector: u,
            theta,
            snr_db,
            trials: self.trials.div_ceil(draws),
        };
        let mut points = Vec::with_capacity(draws);
        for d in 0..draws {
            let truth = &self.cfg.true_arrays(impairment, self.seed, d as u64)?[self.cfg.evaluation.bs];
            let mut rng = self.rng(stream(family, point, d));
            points.push(aod_rmse_with_precoder(&f, &spec, &design, truth, &self.cfg.ml_config(), &mut rng)?);
        }
        pooled(&points)
    }

    fn benchmark_pos_point(&self, impairment: &Impairment, snr_db: f64, family: u64, point: usize) -> Result<RmsePoint, HarnessError> {
        let sectors = self.eval_position_sectors()?;
        let precoders = self.benchmark_pos_precoders(&sectors, snr_db)?;
        let design = self.cfg.ideal_arrays();
        let draws = self.cfg.n_draws(impairment);
        let spec = PositionEvalSpec {
            p: self.cfg.evaluation.position,
            sectors,
            snr_db,
            trials: self.trials.div_ceil(draws),
        };
        let mut points = Vec::with_capacity(draws);
        for d in 0..draws {
            let truth = self.cfg.true_arrays(impairment, self.seed, d as u64)?;
            let mut rng = self.rng(stream(family, point, d));
            points.push(position_rmse_with_precoders(
                &self.scenario,
                &spec,
                &precoders,
                &design,
                &truth,
                &self.cfg.ml_config(),
                &self.cfg.search_config(),
                &mut rng,
            )?);
        }
        pooled(&points)
    }
}

fn pooled(points: &[RmsePoint]) -> Result<RmsePoint, HarnessError> {
    RmsePoint::pool(points).ok_or_else(|| HarnessError::Numerical("no Monte-Carlo points to pool".into()))
}

fn check_finite(p: &RmsePoint) -> Result<(), HarnessError> {
    if p.rmse().is_finite() && p.bound.is_finite() {
        Ok(())
    } else {
        Err(HarnessError::Numerical(format!("non-finite RMSE or bound at {} dB", p.snr_db)))
    }
}

fn sweep_row(p: &RmsePoint, scale: f64) -> SweepRow {
    SweepRow {
        snr_db: p.snr_db,
        rmse: p.rmse() * scale,
        bound: p.bound * scale,
        stderr: p.stderr() * scale,
    }
}

fn snr_tag(snr_db: f64) -> String {
    format!("{snr_db}")
}

/// √CRB in degrees and PEB in meters of the benchmark on the ideal arrays.
pub fn bounds_rows(run: &Run) -> Result<Vec<BoundsRow>, HarnessError> {
    let (u, theta) = run.eval_sector()?;
    let sectors = run.eval_position_sectors()?;
    let arrays = run.cfg.ideal_arrays();
    let sc = run.scenario();
    let s = unit_pilots(sc.n_transmissions);
    run.cfg
        .sweep
        .snr_db
        .iter()
        .map(|&snr| {
            let gain = GainModel::new(0.0, snr);
            let f = run.benchmark_aod_precoder(&u, snr)?;
            let crb = aod_crb(f.matrix(), theta, Complex64::new(1.0, 0.0), gain.noise_var(), &arrays[run.cfg.evaluation.bs], s.view())?;
            let precs = run.benchmark_pos_precoders(&sectors, snr)?;
            let gains = vec![gain; sc.n_bs()];
            let fim = position_fim(sc, &precs, run.cfg.evaluation.position, &gains, &arrays, s.view())?;
            Ok(BoundsRow {
                snr_db: snr,
                sqrt_crb_deg: crb.sqrt().to_degrees(),
                peb_m: peb(&fim)?,
            })
        })
        .collect()
}

pub fn bounds_sweep(run: &Run) -> Result<Vec<PathBuf>, HarnessError> {
    let rows = bounds_rows(run)?;
    let path = run.out_dir.join("bounds.csv");
    write_csv(&path, &rows, &run.sidecar("bounds-sweep", "bounds", &BOUNDS_COLUMNS, "sqrt_crb in degrees, peb in meters"))?;
    Ok(vec![path])
}

/// Benchmark RMSE against SNR under the configured impairment.
pub fn baseline_rows(run: &Run) -> Result<(Vec<SweepRow>, Vec<SweepRow>), HarnessError> {
    let imp = run.cfg.impairment()?;
    let mut aod = Vec::new();
    let mut pos = Vec::new();
    for (i, &snr) in run.cfg.sweep.snr_db.iter().enumerate() {
        let a = run.benchmark_aod_point(&imp, snr, STREAM_BASELINE_AOD, i)?;
        check_finite(&a)?;
        aod.push(sweep_row(&a, 1f64.to_degrees()));
        let p = run.benchmark_pos_point(&imp, snr, STREAM_BASELINE_POS, i)?;
        check_finite(&p)?;
        pos.push(sweep_row(&p, 1.0));
        info!("baseline {snr} dB: aod {:.4} deg, position {:.4} m", a.rmse().to_degrees(), p.rmse());
    }
    Ok((aod, pos))
}

pub fn baseline_sweep(run: &Run) -> Result<Vec<PathBuf>, HarnessError> {
    let (aod, pos) = baseline_rows(run)?;
    let pa = run.out_dir.join("baseline_aod.csv");
    let pp = run.out_dir.join("baseline_pos.csv");
    write_csv(&pa, &aod, &run.sidecar("baseline-sweep", "aod", &SWEEP_COLUMNS, AOD_UNITS))?;
    write_csv(&pp, &pos, &run.sidecar("baseline-sweep", "pos", &SWEEP_COLUMNS, POS_UNITS))?;
    Ok(vec![pa, pp])
}

/// Benchmark RMSE and bound along the configured sweep axis. On the `snr`
/// axis the configured impairment applies; on `sigma` and `zeta` the
/// impairment is spacing or coupling at `fixed_snr_db`.
pub fn hwi_rows(run: &Run) -> Result<(Vec<HwiRow>, Vec<HwiRow>), HarnessError> {
    let axis = run.cfg.sweep_axis()?;
    let sweep = &run.cfg.sweep;
    let points: Vec<(f64, f64, Impairment)> = match axis {
        SweepAxis::Snr => {
            let imp = run.cfg.impairment()?;
            sweep.snr_db.iter().map(|&s| (s, s, imp.clone())).collect()
        }
        SweepAxis::Sigma => sweep
            .sigma_lambda
            .iter()
            .map(|&v| {
                let imp = Impairment::Spacing {
                    sigma: v * run.scenario().wavelength,
                };
                (v, sweep.fixed_snr_db, imp)
            })
            .collect(),
        SweepAxis::Zeta => {
            let spec = run.cfg.coupling_reference()?;
            sweep
                .zeta
                .iter()
                .map(|&z| {
                    let imp = Impairment::Coupling {
                        spec: spec.clone(),
                        zeta: Some(z),
                    };
                    (z, sweep.fixed_snr_db, imp)
                })
                .collect()
        }
    };
    let mut aod = Vec::with_capacity(points.len());
    let mut pos = Vec::with_capacity(points.len());
    for (i, (value, snr, imp)) in points.iter().enumerate() {
        let a = run.benchmark_aod_point(imp, *snr, STREAM_HWI_AOD, i)?;
        check_finite(&a)?;
        let p = run.benchmark_pos_point(imp, *snr, STREAM_HWI_POS, i)?;
        check_finite(&p)?;
        info!("{} = {value}: aod {:.4} deg, position {:.4} m", axis.name(), a.rmse().to_degrees(), p.rmse());
        aod.push(HwiRow {
            axis_value: *value,
            rmse: a.rmse().to_degrees(),
            bound: a.bound.to_degrees(),
        });
        pos.push(HwiRow {
            axis_value: *value,
            rmse: p.rmse(),
            bound: p.bound,
        });
    }
    Ok((aod, pos))
}

pub fn hwi_sweep(run: &Run) -> Result<Vec<PathBuf>, HarnessError> {
    let axis = run.cfg.sweep_axis()?.name();
    let (aod, pos) = hwi_rows(run)?;
    let pa = run.out_dir.join(format!("hwi_{axis}_aod.csv"));
    let pp = run.out_dir.join(format!("hwi_{axis}_pos.csv"));
    write_csv(&pa, &aod, &run.sidecar("hwi-sweep", "aod", &HWI_COLUMNS, AOD_UNITS))?;
    write_csv(&pp, &pos, &run.sidecar("hwi-sweep", "pos", &HWI_COLUMNS, POS_UNITS))?;
    Ok(vec![pa, pp])
}

/// BSs whose beamformers the AoD autoencoder trains.
fn aod_training_bs(run: &Run) -> Vec<usize> {
    if run.cfg.training.aod_bs.is_empty() {
        (0..run.scenario().n_bs()).collect()
    } else {
        run.cfg.training.aod_bs.clone()
    }
}

fn beamformer_path(run: &Run, kind: ModelKind, bs: usize, snr_db: f64) -> PathBuf {
    run.checkpoint_dir()
        .join(format!("{}_beamformer_bs{bs}_snr{}.nn", kind.name(), snr_tag(snr_db)))
}

fn decoder_path(run: &Run, kind: ModelKind, snr_db: f64) -> PathBuf {
    run.checkpoint_dir()
        .join(format!("{}_decoder_snr{}.nn", kind.name(), snr_tag(snr_db)))
}

fn write_log(run: &Run, kind: ModelKind, snr_db: f64, log: &TrainingLog) -> Result<PathBuf, HarnessError> {
    let rows: Vec<LogRow> = log
        .entries
        .iter()
        .map(|e| LogRow {
            iteration: e.iteration,
            loss: e.loss,
            lr: e.lr,
        })
        .collect();
    let path = run.out_dir.join(format!("train_{}_snr{}.csv", kind.name(), snr_tag(snr_db)));
    let units = match kind {
        ModelKind::Aod => "loss in radians squared",
        ModelKind::Pos => "loss in square meters",
    };
    let command = match kind {
        ModelKind::Aod => "train-aod",
        ModelKind::Pos => "train-pos",
    };
    let output = format!("log snr {}", snr_tag(snr_db));
    write_csv(&path, &rows, &run.sidecar(command, &output, &LOG_COLUMNS, units))?;
    Ok(path)
}

/// Trains one model per training SNR. Observations go through the impaired
/// arrays of the first impairment draw; the networks never see the
/// impairment itself.
pub fn train(run: &Run, kind: ModelKind) -> Result<Vec<PathBuf>, HarnessError> {
    let imp = run.cfg.impairment()?;
    let arrays = run.cfg.true_arrays(&imp, run.seed, 0)?;
    let mut written = Vec::new();
    for (i, &snr) in run.cfg.training_snrs().iter().enumerate() {
        let mut tc = run.cfg.train_config(snr);
        tc.seed = run.seed;
        let mut rng = run.rng(stream(STREAM_TRAIN, i, kind as usize));
        info!("training {} model at {snr} dB", kind.name());
        match kind {
            ModelKind::Aod => {
                let bs = aod_training_bs(run);
                let selected: Vec<ArrayModel> = bs.iter().map(|&b| arrays[b].clone()).collect();
                let ae = train_aod_ae(&tc, &selected, run.scenario().n_transmissions, &mut rng)?;
                for (net, &b) in ae.beamformers.iter().zip(&bs) {
                    let p = beamformer_path(run, kind, b, snr);
                    save(&p, net.mlp())?;
                    written.push(p);
                }
                let p = decoder_path(run, kind, snr);
                save(&p, ae.decoder.mlp())?;
                written.push(p);
                written.push(write_log(run, kind, snr, &ae.log)?);
            }
            ModelKind::Pos => {
                let ae = train_pos_ae(&tc, run.scenario(), &arrays, &mut rng)?;
                for (b, net) in ae.beamformers.iter().enumerate() {
                    let p = beamformer_path(run, kind, b, snr);
                    save(&p, net.mlp())?;
                    written.push(p);
                }
                let p = decoder_path(run, kind, snr);
                save(&p, ae.decoder.mlp())?;
                written.push(p);
                written.push(write_log(run, kind, snr, &ae.log)?);
            }
        }
    }
    Ok(written)
}

fn save(path: &Path, net: &mmpos_learn::mlp::Mlp) -> Result<(), HarnessError> {
    if let Some(dir) = path.parent() {
        std::fs::create_dir_all(dir)?;
    }
    Ok(save_mlp(path, net)?)
}

fn load(path: &Path, spec: &mmpos_learn::mlp::MlpSpec) -> Result<mmpos_learn::mlp::Mlp, HarnessError> {
    if !path.is_file() {
        return Err(HarnessError::Checkpoint(format!("missing checkpoint {}", path.display())));
    }
    load_mlp_expecting(path, spec).map_err(|e| match e {
        mmpos_learn::Error::Io(io) => HarnessError::Checkpoint(format!("{}: {io}", path.display())),
        other => HarnessError::Checkpoint(format!("{}: {other}", path.display())),
    })
}

fn load_beamformer(run: &Run, kind: ModelKind, bs: usize, snr: f64) -> Result<(BeamformerNet, PathBuf), HarnessError> {
    let sc = run.scenario();
    let spec = beamformer_spec(sc.n_tx, sc.n_transmissions, run.cfg.training.hidden)?;
    let path = beamformer_path(run, kind, bs, snr);
    let net = BeamformerNet::new(load(&path, &spec)?, sc.n_tx, sc.n_transmissions)?;
    Ok((net, path))
}

fn load_aod_decoder(run: &Run, snr: f64) -> Result<(AodDecoderNet, PathBuf), HarnessError> {
    let spec = aod_decoder_spec(run.scenario().n_transmissions, run.cfg.training.hidden)?;
    let path = decoder_path(run, ModelKind::Aod, snr);
    Ok((AodDecoderNet::new(load(&path, &spec)?)?, path))
}

fn load_pos_decoder(run: &Run, snr: f64) -> Result<(PosDecoderNet, PathBuf), HarnessError> {
    let sc = run.scenario();
    let spec = pos_decoder_spec(sc.n_transmissions, sc.n_bs(), run.cfg.training.hidden)?;
    let path = decoder_path(run, ModelKind::Pos, snr);
    Ok((PosDecoderNet::new(load(&path, &spec)?, sc.n_bs())?, path))
}

fn display(paths: &[PathBuf]) -> Vec<String> {
    paths.iter().map(|p| p.display().to_string()).collect()
}

/// Evaluates the trained models of `kind` at their training SNRs, and the
/// benchmark at the same points when the system selection includes it.
/// Both systems see the arrays of the first impairment draw, as in
/// training.
pub fn eval(run: &Run, kind: ModelKind) -> Result<Vec<PathBuf>, HarnessError> {
    let system = run.cfg.system_selection()?;
    let imp = run.cfg.impairment()?;
    let truth = run.cfg.true_arrays(&imp, run.seed, 0)?;
    let design = run.cfg.ideal_arrays();
    let bs = run.cfg.evaluation.bs;
    let mut ae_rows = Vec::new();
    let mut bench_rows = Vec::new();
    let mut inputs = Vec::new();
    for (i, &snr) in run.cfg.training_snrs().iter().enumerate() {
        let (ae, bench, scale) = match kind {
            ModelKind::Aod => {
                let (u, theta) = run.eval_sector()?;
                let spec = AodEvalSpec {
                    sector: u,
                    theta,
                    snr_db: snr,
                    trials: run.trials,
                };
                let ae = if system.ae() {
                    if !aod_training_bs(run).contains(&bs) {
                        return Err(HarnessError::Config(format!("no AoD beamformer is trained for BS {bs}")));
                    }
                    let (bf, p1) = load_beamformer(run, kind, bs, snr)?;
                    let (dec, p2) = load_aod_decoder(run, snr)?;
                    inputs.extend([p1, p2]);
                    let mut rng = run.rng(stream(STREAM_EVAL_AE, i, 0));
                    Some(aod_rmse_ae(&bf, &dec, &spec, &truth[bs], &mut rng)?)
                } else {
                    None
                };
                let bench = if system.benchmark() {
                    let f = run.benchmark_aod_precoder(&u, snr)?;
                    let mut rng = run.rng(stream(STREAM_EVAL_BENCH, i, 0));
                    Some(aod_rmse_with_precoder(&f, &spec, &design[bs], &truth[bs], &run.cfg.ml_config(), &mut rng)?)
                } else {
                    None
                };
                (ae, bench, 1f64.to_degrees())
            }
            ModelKind::Pos => {
                let spec = PositionEvalSpec {
                    p: run.cfg.evaluation.position,
                    sectors: run.eval_position_sectors()?,
                    snr_db: snr,
                    trials: run.trials,
                };
                let ae = if system.ae() {
                    let mut bfs = Vec::new();
                    for b in 0..run.scenario().n_bs() {
                        let (bf, p) = load_beamformer(run, kind, b, snr)?;
                        bfs.push(bf);
                        inputs.push(p);
                    }
                    let (dec, p) = load_pos_decoder(run, snr)?;
                    inputs.push(p);
                    let mut rng = run.rng(stream(STREAM_EVAL_AE, i, 1));
                    Some(position_rmse_ae(&bfs, &dec, run.scenario(), &spec, &truth, &mut rng)?)
                } else {
                    None
                };
                let bench = if system.benchmark() {
                    let precs = run.benchmark_pos_precoders(&spec.sectors, snr)?;
                    let mut rng = run.rng(stream(STREAM_EVAL_BENCH, i, 1));
                    Some(position_rmse_with_precoders(
                        run.scenario(),
                        &spec,
                        &precs,
                        &design,
                        &truth,
                        &run.cfg.ml_config(),
                        &run.cfg.search_config(),
                        &mut rng,
                    )?)
                } else {
                    None
                };
                (ae, bench, 1.0)
            }
        };
        if let Some(p) = ae {
            check_finite(&p)?;
            ae_rows.push(sweep_row(&p, scale));
        }
        if let Some(p) = bench {
            check_finite(&p)?;
            bench_rows.push(sweep_row(&p, scale));
        }
    }
    let units = match kind {
        ModelKind::Aod => AOD_UNITS,
        ModelKind::Pos => POS_UNITS,
    };
    let mut written = Vec::new();
    if system.ae() {
        let path = run.out_dir.join(format!("eval_{}_ae.csv", kind.name()));
        let mut meta = run.sidecar("eval", "ae", &SWEEP_COLUMNS, units);
        meta.inputs = display(&inputs);
        write_csv(&path, &ae_rows, &meta)?;
        written.push(path);
    }
    if system.benchmark() {
        let path = run.out_dir.join(format!("eval_{}_benchmark.csv", kind.name()));
        write_csv(&path, &bench_rows, &run.sidecar("eval", "benchmark", &SWEEP_COLUMNS, units))?;
        written.push(path);
    }
    Ok(written)
}

/// Aggregate gain `‖Fᵀa(θ)‖²` on the ideal array over [−90°, 90°].
pub fn beampattern_rows(f: &PrecoderMatrix, array: &ArrayModel, step_deg: f64) -> Vec<BeamRow> {
    let n = (180.0 / step_deg).round() as usize + 1;
    (0..n)
        .map(|k| {
            let theta_deg = -90.0 + k as f64 * step_deg;
            BeamRow {
                theta_deg,
                gain: f.aggregate_gain(array, theta_deg.to_radians()),
            }
        })
        .collect()
}

pub fn beampattern(run: &Run) -> Result<Vec<PathBuf>, HarnessError> {
    let system = run.cfg.system_selection()?;
    let ev = &run.cfg.evaluation;
    let (u, _) = run.eval_sector()?;
    let array = &run.cfg.ideal_arrays()[ev.bs];
    let mut written = Vec::new();
    if system.benchmark() {
        let f = run.benchmark_aod_precoder(&u, ev.beampattern_snr_db)?;
        let path = run.out_dir.join("beampattern_benchmark.csv");
        let rows = beampattern_rows(&f, array, ev.beampattern_step_deg);
        write_csv(&path, &rows, &run.sidecar("beampattern", "benchmark", &BEAM_COLUMNS, "degrees, linear gain"))?;
        written.push(path);
    }
    if system.ae() {
        let (bf, input) = load_beamformer(run, ModelKind::Aod, ev.bs, ev.beampattern_snr_db)?;
        let f = bf.precoder_for(&u)?;
        let path = run.out_dir.join("beampattern_ae.csv");
        let rows = beampattern_rows(&f, array, ev.beampattern_step_deg);
        let mut meta = run.sidecar("beampattern", "ae", &BEAM_COLUMNS, "degrees, linear gain");
        meta.inputs = display(&[input]);
        write_csv(&path, &rows, &meta)?;
        written.push(path);
    }
    Ok(written)
}
