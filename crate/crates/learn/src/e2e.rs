//! Autoencoders for AoD estimation and positioning: per-BS beamformer
//! networks, a differentiable pilot channel, and the decoders.
//!
//! A beamformer emits `2·N_tx·T` reals. Complex entry `(k, t)` of the
//! precoder sits at pair index `k·T + t`, i.e. columns `2(k·T + t)` (real)
//! and `2(k·T + t) + 1` (imaginary). Decoders read observations as
//! `[Re y; Im y]`, BS after BS.

use std::f64::consts::FRAC_PI_2;
use std::sync::Arc;

use mmpos_core::array::ArrayModel;
use mmpos_core::channel::{snr_to_noise_var, Observation, PrecoderMatrix};
use mmpos_core::scenario::{
    sample_aod_training_case, sample_position_training_case_with, sector_parameterization, AngularSector,
    PositionPrior, Scenario, SectorParameterization,
};
use mmpos_core::Point2;
use ndarray::{Array1, Array2};
use num_complex::Complex64;
use rand::Rng;
use rand_distr::{Distribution, Normal};

use crate::error::{shape, Error, Result};
use crate::mlp::{BoundMlp, Mlp, MlpSpec, OutputActivation};
use crate::optim::{Adam, PlateauScheduler};
use crate::tape::{Tape, Var};

const N_HIDDEN_BEAMFORMER: usize = 6;

pub fn beamformer_spec(n_tx: usize, t: usize, hidden: usize) -> Result<MlpSpec> {
    MlpSpec::new(3, &[hidden; N_HIDDEN_BEAMFORMER], 2 * n_tx * t, OutputActivation::Linear)
}

fn decoder_hidden(hidden: usize) -> [usize; 6] {
    [hidden, hidden, hidden, hidden, 2 * hidden, 2 * hidden]
}

pub fn aod_decoder_spec(t: usize, hidden: usize) -> Result<MlpSpec> {
    MlpSpec::new(2 * t, &decoder_hidden(hidden), 1, OutputActivation::Tanh)
}

pub fn pos_decoder_spec(t: usize, n_bs: usize, hidden: usize) -> Result<MlpSpec> {
    MlpSpec::new(2 * t * n_bs, &decoder_hidden(hidden), 2, OutputActivation::Linear)
}

fn xi_row(xi: &SectorParameterization) -> [f64; 3] {
    xi.xi
}

/// Column order turning interleaved `(re, im)` pairs into `[re..; im..]`.
fn split_layout(t: usize) -> Arc<Vec<usize>> {
    Arc::new((0..t).map(|k| 2 * k).chain((0..t).map(|k| 2 * k + 1)).collect())
}

/// Maps precoder column `2(k·T + t) + c` to observation column `2t + c`.
fn transmission_groups(n_tx: usize, t: usize) -> Arc<Vec<usize>> {
    Arc::new(
        (0..n_tx * t)
            .flat_map(|idx| {
                let tt = idx % t;
                [2 * tt, 2 * tt + 1]
            })
            .collect(),
    )
}

/// `[Re y; Im y]`.
pub fn observation_features(y: &Array1<Complex64>) -> Vec<f64> {
    y.iter().map(|z| z.re).chain(y.iter().map(|z| z.im)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct BeamformerNet {
    net: Mlp,
    n_tx: usize,
    t: usize,
}

impl BeamformerNet {
    pub fn new(net: Mlp, n_tx: usize, t: usize) -> Result<Self> {
        let expected = beamformer_spec(n_tx, t, net.spec().widths()[1])?;
        if net.spec() != &expected {
            return Err(shape(format!(
                "beamformer widths {:?} do not fit N_tx = {n_tx}, T = {t}",
                net.spec().widths()
            )));
        }
        Ok(Self { net, n_tx, t })
    }

    pub fn init<R: Rng + ?Sized>(rng: &mut R, n_tx: usize, t: usize, hidden: usize) -> Result<Self> {
        Ok(Self {
            net: beamformer_spec(n_tx, t, hidden)?.init(rng),
            n_tx,
            t,
        })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn n_tx(&self) -> usize {
        self.n_tx
    }

    pub fn n_transmissions(&self) -> usize {
        self.t
    }

    /// Normalized precoder rows (`batch × 2·N_tx·T`) for a batch of `ξ` rows.
    fn forward_tape(&self, bound: &BoundMlp, tape: &mut Tape, xi: Var) -> Result<Var> {
        let raw = bound.forward(tape, xi)?;
        tape.row_normalize(raw)
    }

    pub fn precoder(&self, xi: &SectorParameterization) -> Result<PrecoderMatrix> {
        let input = Array2::from_shape_vec((1, 3), xi_row(xi).to_vec()).expect("1x3");
        let mut tape = Tape::new();
        let bound = self.net.bind(&mut tape);
        let x = tape.leaf(input);
        let f = self.forward_tape(&bound, &mut tape, x)?;
        let row = tape.value(f)?.row(0).to_owned();
        let m = Array2::from_shape_fn((self.n_tx, self.t), |(k, t)| {
            let i = 2 * (k * self.t + t);
            Complex64::new(row[i], row[i + 1])
        });
        Ok(PrecoderMatrix::new(m)?)
    }

    pub fn precoder_for(&self, u: &AngularSector) -> Result<PrecoderMatrix> {
        self.precoder(&sector_parameterization(u))
    }
}

/// Constants of one batch through the pilot channel: steering vectors
/// repeated per transmission, `α·s_t`, and the noise draw.
struct ChannelBatch {
    steering: Array2<f64>,
    gain: Array2<f64>,
    noise: Array2<f64>,
}

impl ChannelBatch {
    fn new(thetas: &[f64], alphas: &[Complex64], noise: Array2<f64>, array: &ArrayModel, t: usize) -> Self {
        let n_tx = array.n_tx();
        let s = thetas.len();
        let mut steering = Array2::zeros((s, 2 * n_tx * t));
        for (i, &theta) in thetas.iter().enumerate() {
            let a = array.steering(theta);
            let mut row = steering.row_mut(i);
            for (k, ak) in a.iter().enumerate() {
                for tt in 0..t {
                    let c = 2 * (k * t + tt);
                    row[c] = ak.re;
                    row[c + 1] = ak.im;
                }
            }
        }
        // Unit pilots, so the per-transmission factor is alpha alone.
        let mut gain = Array2::zeros((s, 2 * t));
        for (i, a) in alphas.iter().enumerate() {
            for tt in 0..t {
                gain[[i, 2 * tt]] = a.re;
                gain[[i, 2 * tt + 1]] = a.im;
            }
        }
        Self { steering, gain, noise }
    }

    fn draw<R: Rng + ?Sized>(rng: &mut R, thetas: &[f64], array: &ArrayModel, t: usize, noise_var: f64) -> Self {
        let s = thetas.len();
        let alphas: Vec<Complex64> = (0..s)
            .map(|_| Complex64::from_polar(1.0, rng.random_range(0.0..2.0 * std::f64::consts::PI)))
            .collect();
        let noise = if noise_var > 0.0 {
            let normal = Normal::new(0.0, (noise_var / 2.0).sqrt()).expect("finite noise std");
            Array2::from_shape_fn((s, 2 * t), |_| normal.sample(rng))
        } else {
            Array2::zeros((s, 2 * t))
        };
        Self::new(thetas, &alphas, noise, array, t)
    }

    /// `y = α (Fᵀa) + n` in decoder layout `[Re y; Im y]`; noise is held constant.
    fn observe(&self, tape: &mut Tape, f: Var, n_tx: usize, t: usize) -> Result<Var> {
        let a = tape.leaf(self.steering.clone());
        let prod = tape.complex_mul(f, a)?;
        let z = tape.group_sum(prod, transmission_groups(n_tx, t))?;
        let g = tape.leaf(self.gain.clone());
        let y = tape.complex_mul(z, g)?;
        let n = tape.leaf(self.noise.clone());
        let y = tape.add(y, n)?;
        tape.select_columns(y, split_layout(t))
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct AodDecoderNet {
    net: Mlp,
}

impl AodDecoderNet {
    pub fn new(net: Mlp) -> Result<Self> {
        let spec = net.spec();
        if spec.output_width() != 1 || spec.output_activation() != OutputActivation::Tanh || spec.input_width() % 2 != 0 {
            return Err(shape(format!("not an AoD decoder: {:?}", spec.widths())));
        }
        Ok(Self { net })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn n_transmissions(&self) -> usize {
        self.net.spec().input_width() / 2
    }

    fn forward_tape(&self, bound: &BoundMlp, tape: &mut Tape, features: Var) -> Result<Var> {
        let out = bound.forward(tape, features)?;
        tape.scale(out, FRAC_PI_2)
    }

    /// AoD estimates in radians for rows of `[Re y; Im y]` features.
    pub fn decode_features(&self, features: &Array2<f64>) -> Result<Vec<f64>> {
        Ok(self.net.forward(features)?.iter().map(|v| v * FRAC_PI_2).collect())
    }

    pub fn decode(&self, obs: &Observation) -> Result<f64> {
        let t = self.n_transmissions();
        if obs.y.len() != t {
            return Err(shape(format!("observation length {} for T = {t}", obs.y.len())));
        }
        let x = Array2::from_shape_vec((1, 2 * t), observation_features(&obs.y)).expect("1 x 2T");
        Ok(self.decode_features(&x)?[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PosDecoderNet {
    net: Mlp,
    n_bs: usize,
}

impl PosDecoderNet {
    pub fn new(net: Mlp, n_bs: usize) -> Result<Self> {
        let spec = net.spec();
        if n_bs == 0 || spec.output_width() != 2 || spec.input_width() % (2 * n_bs) != 0 {
            return Err(shape(format!("not a position decoder for {n_bs} BSs: {:?}", spec.widths())));
        }
        Ok(Self { net, n_bs })
    }

    pub fn mlp(&self) -> &Mlp {
        &self.net
    }

    pub fn n_bs(&self) -> usize {
        self.n_bs
    }

    pub fn decode_features(&self, features: &Array2<f64>) -> Result<Vec<Point2>> {
        let out = self.net.forward(features)?;
        Ok(out.rows().into_iter().map(|r| [r[0], r[1]]).collect())
    }

    pub fn decode(&self, observations: &[Observation]) -> Result<Point2> {
        let t = self.net.spec().input_width() / (2 * self.n_bs);
        if observations.len() != self.n_bs || observations.iter().any(|o| o.y.len() != t) {
            return Err(shape(format!(
                "expected {} observations of length {t}",
                self.n_bs
            )));
        }
        let x: Vec<f64> = observations.iter().flat_map(|o| observation_features(&o.y)).collect();
        let x = Array2::from_shape_vec((1, x.len()), x).expect("1 row");
        Ok(self.decode_features(&x)?[0])
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct TrainConfig {
    pub batch_size: usize,
    /// Fixed training SNR; `f64::INFINITY` trains without noise.
    pub snr_db: f64,
    pub iterations: usize,
    pub hidden: usize,
    pub seed: u64,
    pub learning_rate: f64,
    /// Scheduler patience, counted in epochs.
    pub patience: usize,
    /// Iterations averaged into one scheduler evaluation.
    pub epoch_len: usize,
    /// AoD training sector widths, radians.
    pub width_range: [f64; 2],
    /// AoD training sector means, radians.
    pub mean_range: [f64; 2],
    pub position_prior: PositionPrior,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            batch_size: 10_000,
            snr_db: 20.0,
            iterations: 3000,
            hidden: 256,
            seed: 0,
            learning_rate: 1e-3,
            patience: 20,
            epoch_len: 10,
            width_range: [10f64.to_radians(), 20f64.to_radians()],
            mean_range: [-60f64.to_radians(), 60f64.to_radians()],
            position_prior: PositionPrior::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if self.batch_size == 0 || self.hidden == 0 || self.epoch_len == 0 || self.patience == 0 {
            return Err(shape("batch size, hidden width, epoch length and patience must be positive"));
        }
        if !(self.learning_rate > 0.0) || self.snr_db.is_nan() {
            return Err(shape("learning rate must be positive and SNR a number"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LogEntry {
    pub iteration: usize,
    pub loss: f64,
    pub lr: f64,
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct TrainingLog {
    pub entries: Vec<LogEntry>,
}

impl TrainingLog {
    pub fn initial_loss(&self) -> Option<f64> {
        self.entries.first().map(|e| e.loss)
    }

    /// Mean loss over the last `n` iterations.
    pub fn final_loss(&self, n: usize) -> Option<f64> {
        let k = n.min(self.entries.len());
        (k > 0).then(|| self.entries[self.entries.len() - k..].iter().map(|e| e.loss).sum::<f64>() / k as f64)
    }
}

#[derive(Debug, Clone)]
pub struct AodAutoencoder {
    pub beamformers: Vec<BeamformerNet>,
    pub decoder: AodDecoderNet,
    pub log: TrainingLog,
}

#[derive(Debug, Clone)]
pub struct PosAutoencoder {
    pub beamformers: Vec<BeamformerNet>,
    pub decoder: PosDecoderNet,
    pub log: TrainingLog,
}

/// Shared optimization loop: `step` builds the loss on a fresh tape and
/// returns it; gradients of every network are applied with one learning rate.
fn optimize<R, F>(cfg: &TrainConfig, nets: &mut [&mut Mlp], rng: &mut R, mut loss_fn: F) -> Result<TrainingLog>
where
    R: Rng + ?Sized,
    F: FnMut(&mut Tape, &[BoundMlp], &mut R) -> Result<Var>,
{
    let mut adams: Vec<Adam> = nets
        .iter()
        .map(|n| Adam::new(cfg.learning_rate, &n.spec().param_shapes()))
        .collect();
    let mut sched = PlateauScheduler::new(cfg.patience);
    let mut lr = cfg.learning_rate;
    let mut log = TrainingLog::default();
    let mut epoch_sum = 0.0;
    for it in 0..cfg.iterations {
        let mut tape = Tape::new();
        let bound: Vec<BoundMlp> = nets.iter().map(|n| n.bind(&mut tape)).collect();
        let loss = loss_fn(&mut tape, &bound, rng)?;
        let value = tape.value(loss)?[[0, 0]];
        if !value.is_finite() {
            return Err(Error::TrainingAborted(format!("loss {value} at iteration {it}")));
        }
        let grads = tape.backward(loss)?;
        for ((net, b), adam) in nets.iter_mut().zip(&bound).zip(&mut adams) {
            let g = b.gradients(&tape, &grads)?;
            adam.lr = lr;
            adam.step(net.params_mut(), &g)?;
        }
        log.entries.push(LogEntry { iteration: it, loss: value, lr });
        epoch_sum += value;
        if (it + 1) % cfg.epoch_len == 0 {
            lr = sched.step(lr, epoch_sum / cfg.epoch_len as f64)?;
            epoch_sum = 0.0;
            if lr <= sched.min_lr && cfg.learning_rate > sched.min_lr {
                log::debug!("learning rate reached its floor after {} iterations", it + 1);
                break;
            }
        }
    }
    Ok(log)
}

fn check_arrays(arrays: &[ArrayModel], n_tx: usize) -> Result<()> {
    if arrays.is_empty() || arrays.iter().any(|a| a.n_tx() != n_tx) {
        return Err(shape(format!("need at least one array of {n_tx} elements")));
    }
    Ok(())
}

/// Trains one beamformer per entry of `arrays` (the true arrays the
/// channel is simulated with) and one shared AoD decoder, minimizing the
/// mean squared AoD error in rad².
pub fn train_aod_ae<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    arrays: &[ArrayModel],
    t: usize,
    rng: &mut R,
) -> Result<AodAutoencoder> {
    cfg.validate()?;
    let n_tx = arrays.first().map_or(0, |a| a.n_tx());
    check_arrays(arrays, n_tx)?;
    let mut nets: Vec<Mlp> = Vec::with_capacity(arrays.len() + 1);
    for _ in arrays {
        nets.push(beamformer_spec(n_tx, t, cfg.hidden)?.init(rng));
    }
    nets.push(aod_decoder_spec(t, cfg.hidden)?.init(rng));
    let noise_var = snr_to_noise_var(cfg.snr_db);
    let n_bs = arrays.len();
    let norm = 1.0 / (cfg.batch_size * n_bs) as f64;

    let log = {
        let mut refs: Vec<&mut Mlp> = nets.iter_mut().collect();
        optimize(cfg, &mut refs, rng, |tape, bound, rng| {
            let dec = &bound[n_bs];
            let mut total: Option<Var> = None;
            for (b, array) in arrays.iter().enumerate() {
                let mut xi = Array2::zeros((cfg.batch_size, 3));
                let mut thetas = Vec::with_capacity(cfg.batch_size);
                for i in 0..cfg.batch_size {
                    let (theta, u) = sample_aod_training_case(rng, cfg.width_range, cfg.mean_range)?;
                    xi.row_mut(i).assign(&Array1::from(xi_row(&sector_parameterization(&u)).to_vec()));
                    thetas.push(theta);
                }
                let batch = ChannelBatch::draw(rng, &thetas, array, t, noise_var);
                let x = tape.leaf(xi);
                let f = bound[b].forward(tape, x)?;
                let f = tape.row_normalize(f)?;
                let y = batch.observe(tape, f, n_tx, t)?;
                let out = dec.forward(tape, y)?;
                let theta_hat = tape.scale(out, FRAC_PI_2)?;
                let truth = tape.leaf(Array2::from_shape_vec((cfg.batch_size, 1), thetas).expect("S x 1"));
                let err = tape.sub(theta_hat, truth)?;
                let sq = tape.sum_squares(err)?;
                total = Some(match total {
                    Some(acc) => tape.add(acc, sq)?,
                    None => sq,
                });
            }
            tape.scale(total.expect("at least one BS"), norm)
        })?
    };
    let decoder = AodDecoderNet::new(nets.pop().expect("decoder"))?;
    let beamformers = nets
        .into_iter()
        .map(|n| BeamformerNet::new(n, n_tx, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(AodAutoencoder { beamformers, decoder, log })
}

/// Trains one beamformer per BS and a position decoder, minimizing the mean
/// squared position error in m².
pub fn train_pos_ae<R: Rng + ?Sized>(
    cfg: &TrainConfig,
    scenario: &Scenario,
    arrays: &[ArrayModel],
    rng: &mut R,
) -> Result<PosAutoencoder> {
    cfg.validate()?;
    scenario.validate()?;
    let (n_tx, t, n_bs) = (scenario.n_tx, scenario.n_transmissions, scenario.n_bs());
    check_arrays(arrays, n_tx)?;
    if arrays.len() != n_bs {
        return Err(shape(format!("{} arrays for {n_bs} BSs", arrays.len())));
    }
    let mut nets: Vec<Mlp> = Vec::with_capacity(n_bs + 1);
    for _ in 0..n_bs {
        nets.push(beamformer_spec(n_tx, t, cfg.hidden)?.init(rng));
    }
    nets.push(pos_decoder_spec(t, n_bs, cfg.hidden)?.init(rng));
    let noise_var = snr_to_noise_var(cfg.snr_db);
    let s = cfg.batch_size;

    let log = {
        let mut refs: Vec<&mut Mlp> = nets.iter_mut().collect();
        optimize(cfg, &mut refs, rng, |tape, bound, rng| {
            let mut xis = vec![Array2::<f64>::zeros((s, 3)); n_bs];
            let mut thetas = vec![Vec::with_capacity(s); n_bs];
            let mut truth = Array2::zeros((s, 2));
            for i in 0..s {
                let (p, sectors) = sample_position_training_case_with(rng, scenario, &cfg.position_prior)?;
                truth[[i, 0]] = p[0];
                truth[[i, 1]] = p[1];
                for (b, u) in sectors.iter().enumerate() {
                    xis[b]
                        .row_mut(i)
                        .assign(&Array1::from(xi_row(&sector_parameterization(u)).to_vec()));
                    thetas[b].push(scenario.aod(b, p)?);
                }
            }
            let mut features = Vec::with_capacity(n_bs);
            for b in 0..n_bs {
                let batch = ChannelBatch::draw(rng, &thetas[b], &arrays[b], t, noise_var);
                let x = tape.leaf(std::mem::take(&mut xis[b]));
                let f = bound[b].forward(tape, x)?;
                let f = tape.row_normalize(f)?;
                features.push(batch.observe(tape, f, n_tx, t)?);
            }
            let input = tape.concat(&features)?;
            let p_hat = bound[n_bs].forward(tape, input)?;
            let truth = tape.leaf(truth);
            let err = tape.sub(p_hat, truth)?;
            let sq = tape.sum_squares(err)?;
            tape.scale(sq, 1.0 / s as f64)
        })?
    };
    let decoder = PosDecoderNet::new(nets.pop().expect("decoder"), n_bs)?;
    let beamformers = nets
        .into_iter()
        .map(|n| BeamformerNet::new(n, n_tx, t))
        .collect::<Result<Vec<_>>>()?;
    Ok(PosAutoencoder { beamformers, decoder, log })
}

/// Loss of the AoD autoencoder path for one fixed batch, with the gradient
/// with respect to the first beamformer's parameters. Exposed for gradient
/// checks of the full channel path.
pub fn aod_path_loss_and_grad(
    beamformer: &BeamformerNet,
    decoder: &AodDecoderNet,
    sectors: &[AngularSector],
    thetas: &[f64],
    alphas: &[Complex64],
    noise: &Array2<f64>,
    array: &ArrayModel,
) -> Result<(f64, Vec<Array2<f64>>)> {
    let (n_tx, t) = (beamformer.n_tx, beamformer.t);
    let s = thetas.len();
    if sectors.len() != s || alphas.len() != s || noise.dim() != (s, 2 * t) {
        return Err(shape("batch components disagree in size"));
    }
    let batch = ChannelBatch::new(thetas, alphas, noise.clone(), array, t);
    let mut xi = Array2::zeros((s, 3));
    for (i, u) in sectors.iter().enumerate() {
        xi.row_mut(i).assign(&Array1::from(xi_row(&sector_parameterization(u)).to_vec()));
    }
    let mut tape = Tape::new();
    let bf = beamformer.net.bind(&mut tape);
    let dec = decoder.net.bind(&mut tape);
    let x = tape.leaf(xi);
    let f = beamformer.forward_tape(&bf, &mut tape, x)?;
    let y = batch.observe(&mut tape, f, n_tx, t)?;
    let theta_hat = decoder.forward_tape(&dec, &mut tape, y)?;
    let truth = tape.leaf(Array2::from_shape_vec((s, 1), thetas.to_vec()).expect("S x 1"));
    let err = tape.sub(theta_hat, truth)?;
    let sq = tape.sum_squares(err)?;
    let loss = tape.scale(sq, 1.0 / s as f64)?;
    let grads = tape.backward(loss)?;
    Ok((tape.value(loss)?[[0, 0]], bf.gradients(&tape, &grads)?))
}

/// Replaces the parameters of a beamformer, keeping its layer plan.
pub fn with_beamformer_params(bf: &BeamformerNet, params: Vec<Array2<f64>>) -> Result<BeamformerNet> {
    BeamformerNet::new(Mlp::from_params(bf.net.spec().clone(), params)?, bf.n_tx, bf.t)
}
