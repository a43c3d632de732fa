//! Fully connected networks with rectified hidden layers.

use ndarray::Array2;
use rand::Rng;
use rand_distr::{Distribution, Uniform};

use crate::error::{shape, Result};
use crate::tape::{Gradients, Tape, Var};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputActivation {
    Linear,
    Tanh,
}

impl OutputActivation {
    pub fn code(self) -> u8 {
        match self {
            OutputActivation::Linear => 0,
            OutputActivation::Tanh => 1,
        }
    }

    pub fn from_code(code: u8) -> Option<Self> {
        match code {
            0 => Some(OutputActivation::Linear),
            1 => Some(OutputActivation::Tanh),
            _ => None,
        }
    }
}

/// Layer widths `[input, hidden.., output]`; hidden layers use ReLU.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct MlpSpec {
    widths: Vec<usize>,
    output: OutputActivation,
}

impl MlpSpec {
    pub fn new(input: usize, hidden: &[usize], output: usize, activation: OutputActivation) -> Result<Self> {
        let mut widths = Vec::with_capacity(hidden.len() + 2);
        widths.push(input);
        widths.extend_from_slice(hidden);
        widths.push(output);
        Self::from_widths(widths, activation)
    }

    pub fn from_widths(widths: Vec<usize>, output: OutputActivation) -> Result<Self> {
        if widths.len() < 2 || widths.contains(&0) {
            return Err(shape(format!("invalid layer widths {widths:?}")));
        }
        Ok(Self { widths, output })
    }

    pub fn widths(&self) -> &[usize] {
        &self.widths
    }

    pub fn input_width(&self) -> usize {
        self.widths[0]
    }

    pub fn output_width(&self) -> usize {
        *self.widths.last().unwrap()
    }

    pub fn output_activation(&self) -> OutputActivation {
        self.output
    }

    pub fn n_layers(&self) -> usize {
        self.widths.len() - 1
    }

    /// Total number of scalar parameters.
    pub fn n_params(&self) -> usize {
        self.widths.windows(2).map(|w| w[0] * w[1] + w[1]).sum()
    }

    /// Parameter shapes in storage order: weight then bias, layer by layer.
    pub fn param_shapes(&self) -> Vec<(usize, usize)> {
        self.widths
            .windows(2)
            .flat_map(|w| [(w[0], w[1]), (1, w[1])])
            .collect()
    }

    /// Glorot-uniform weights in ±√(6/(fan_in+fan_out)), zero biases.
    pub fn init<R: Rng + ?Sized>(&self, rng: &mut R) -> Mlp {
        let mut params = Vec::with_capacity(2 * self.n_layers());
        for w in self.widths.windows(2) {
            let limit = (6.0 / (w[0] + w[1]) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            params.push(Array2::from_shape_fn((w[0], w[1]), |_| dist.sample(rng)));
            params.push(Array2::zeros((1, w[1])));
        }
        Mlp { spec: self.clone(), params }
    }

    pub fn zeros(&self) -> Mlp {
        let params = self.param_shapes().into_iter().map(Array2::zeros).collect();
        Mlp { spec: self.clone(), params }
    }
}

/// A network: its spec plus owned parameters `[w0, b0, w1, b1, ..]`.
#[derive(Debug, Clone, PartialEq)]
pub struct Mlp {
    spec: MlpSpec,
    params: Vec<Array2<f64>>,
}

/// Parameters of an [`Mlp`] registered as leaves on a tape.
#[derive(Debug, Clone)]
pub struct BoundMlp {
    vars: Vec<Var>,
    output: OutputActivation,
}

impl Mlp {
    pub fn from_params(spec: MlpSpec, params: Vec<Array2<f64>>) -> Result<Self> {
        let shapes = spec.param_shapes();
        if shapes.len() != params.len() || shapes.iter().zip(&params).any(|(s, p)| *s != p.dim()) {
            return Err(shape("parameter shapes do not match the layer widths"));
        }
        Ok(Self { spec, params })
    }

    pub fn spec(&self) -> &MlpSpec {
        &self.spec
    }

    pub fn params(&self) -> &[Array2<f64>] {
        &self.params
    }

    pub fn params_mut(&mut self) -> &mut [Array2<f64>] {
        &mut self.params
    }

    pub fn bind(&self, tape: &mut Tape) -> BoundMlp {
        let vars = self.params.iter().map(|p| tape.leaf(p.clone())).collect();
        BoundMlp { vars, output: self.spec.output }
    }

    /// Plain forward pass, `input: batch × input_width`.
    pub fn forward(&self, input: &Array2<f64>) -> Result<Array2<f64>> {
        let mut tape = Tape::new();
        let bound = self.bind(&mut tape);
        let x = tape.leaf(input.clone());
        let y = bound.forward(&mut tape, x)?;
        Ok(tape.value(y)?.clone())
    }
}

impl BoundMlp {
    pub fn vars(&self) -> &[Var] {
        &self.vars
    }

    pub fn forward(&self, tape: &mut Tape, x: Var) -> Result<Var> {
        let n_layers = self.vars.len() / 2;
        let mut h = x;
        for l in 0..n_layers {
            h = tape.affine(h, self.vars[2 * l], self.vars[2 * l + 1])?;
            if l + 1 < n_layers {
                h = tape.relu(h)?;
            } else if self.output == OutputActivation::Tanh {
                h = tape.tanh(h)?;
            }
        }
        Ok(h)
    }

    /// Parameter gradients in storage order.
    pub fn gradients(&self, tape: &Tape, grads: &Gradients) -> Result<Vec<Array2<f64>>> {
        self.vars
            .iter()
            .map(|&v| Ok(grads.get_or_zeros(v, tape.value(v)?.dim())))
            .collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn zero_network_outputs_zero() {
        let spec = MlpSpec::new(3, &[4, 4], 2, OutputActivation::Linear).unwrap();
        let out = spec.zeros().forward(&Array2::from_elem((5, 3), 1.7)).unwrap();
        assert!(out.iter().all(|&v| v == 0.0));
        assert_eq!(out.dim(), (5, 2));
    }

    #[test]
    fn tanh_output_is_bounded() {
        let spec = MlpSpec::new(2, &[8], 3, OutputActivation::Tanh).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = spec.init(&mut rng);
        let x = Array2::from_shape_fn((10, 2), |(i, j)| (i as f64 - 5.0) * (j as f64 + 1.0));
        let out = net.forward(&x).unwrap();
        assert!(out.iter().all(|&v| v.abs() < 1.0));
    }

    #[test]
    fn width_mismatch_is_rejected() {
        let spec = MlpSpec::new(3, &[4], 1, OutputActivation::Linear).unwrap();
        assert!(spec.zeros().forward(&Array2::zeros((2, 4))).is_err());
        assert!(MlpSpec::new(0, &[4], 1, OutputActivation::Linear).is_err());
    }

    #[test]
    fn glorot_bounds_and_counts() {
        let spec = MlpSpec::new(3, &[5, 7], 2, OutputActivation::Linear).unwrap();
        assert_eq!(spec.n_params(), 3 * 5 + 5 + 5 * 7 + 7 + 7 * 2 + 2);
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let net = spec.init(&mut rng);
        let lim = (6.0f64 / 8.0).sqrt();
        assert!(net.params()[0].iter().all(|v| v.abs() <= lim));
        assert!(net.params()[1].iter().all(|&v| v == 0.0));
        let again = spec.init(&mut ChaCha8Rng::seed_from_u64(2));
        assert_eq!(net, again);
    }
}
