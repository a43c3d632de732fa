//! Adam and a reduce-on-plateau learning-rate schedule.

use ndarray::{Array2, Zip};

use crate::error::{shape, Error, Result};

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    step: u64,
    m: Vec<Array2<f64>>,
    v: Vec<Array2<f64>>,
}

impl Adam {
    pub fn new(lr: f64, shapes: &[(usize, usize)]) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            step: 0,
            m: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
            v: shapes.iter().map(|&s| Array2::zeros(s)).collect(),
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// One bias-corrected update of `params` in place.
    pub fn step(&mut self, params: &mut [Array2<f64>], grads: &[Array2<f64>]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(shape(format!(
                "adam: {} moments, {} params, {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        for ((p, g), m) in params.iter().zip(grads).zip(&self.m) {
            if p.dim() != m.dim() || g.dim() != m.dim() {
                return Err(shape(format!("adam: {:?} / {:?} vs {:?}", p.dim(), g.dim(), m.dim())));
            }
        }
        self.step += 1;
        let (b1, b2, eps) = (self.beta1, self.beta2, self.eps);
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        let lr = self.lr;
        for (((p, g), m), v) in params.iter_mut().zip(grads).zip(&mut self.m).zip(&mut self.v) {
            Zip::from(p).and(g).and(m).and(v).for_each(|p, &g, m, v| {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                *p -= lr * (*m / c1) / ((*v / c2).sqrt() + eps);
            });
        }
        Ok(())
    }
}

/// Halves the learning rate when the loss stops improving.
#[derive(Debug, Clone, PartialEq)]
pub struct PlateauScheduler {
    pub patience: usize,
    pub rel_threshold: f64,
    pub factor: f64,
    pub min_lr: f64,
    best: f64,
    bad_evals: usize,
}

impl Default for PlateauScheduler {
    fn default() -> Self {
        Self::new(20)
    }
}

impl PlateauScheduler {
    pub fn new(patience: usize) -> Self {
        Self {
            patience,
            rel_threshold: 1e-3,
            factor: 0.5,
            min_lr: 1e-8,
            best: f64::INFINITY,
            bad_evals: 0,
        }
    }

    pub fn best(&self) -> f64 {
        self.best
    }

    /// Feeds one evaluation loss and returns the learning rate to use next.
    pub fn step(&mut self, lr: f64, loss: f64) -> Result<f64> {
        if !loss.is_finite() {
            return Err(Error::TrainingAborted(format!("non-finite loss {loss}")));
        }
        if loss < self.best * (1.0 - self.rel_threshold) {
            self.best = loss;
            self.bad_evals = 0;
            return Ok(lr);
        }
        self.bad_evals += 1;
        if self.bad_evals >= self.patience {
            self.bad_evals = 0;
            return Ok((lr * self.factor).max(self.min_lr));
        }
        Ok(lr)
    }
}
