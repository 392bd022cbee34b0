//! AdamW with warmup, cosine decay and global-norm clipping.

use serde::{Deserialize, Serialize};

use super::kernels::Scalar;
use super::{ModelError, Parameters};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct OptimizerConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Linear warmup length in steps.
    pub warmup: u64,
    /// Cosine-decay horizon; 0 keeps the rate constant after warmup.
    pub total_steps: u64,
    /// Floor of the cosine schedule as a fraction of `lr`.
    pub min_lr_ratio: f64,
    /// Global gradient-norm clip; 0 disables clipping.
    pub clip: f64,
    /// Decay gains and biases as well; false limits decay to matrices and
    /// embeddings.
    pub decay_all: bool,
}

impl Default for OptimizerConfig {
    fn default() -> Self {
        OptimizerConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.99,
            eps: 1e-8,
            weight_decay: 0.01,
            warmup: 100,
            total_steps: 0,
            min_lr_ratio: 0.1,
            clip: 1.0,
            decay_all: true,
        }
    }
}

impl OptimizerConfig {
    /// Learning rate for 0-based `step`.
    pub fn rate(&self, step: u64) -> f64 {
        if self.warmup > 0 && step < self.warmup {
            return self.lr * (step + 1) as f64 / self.warmup as f64;
        }
        if self.total_steps <= self.warmup {
            return self.lr;
        }
        let progress = ((step - self.warmup) as f64 / (self.total_steps - self.warmup) as f64).min(1.0);
        let cosine = 0.5 * (1.0 + (std::f64::consts::PI * progress).cos());
        self.lr * (self.min_lr_ratio + (1.0 - self.min_lr_ratio) * cosine)
    }
}

#[derive(Debug, Clone)]
pub struct AdamW<T> {
    pub config: OptimizerConfig,
    m: Vec<T>,
    v: Vec<T>,
    decay: Vec<bool>,
    step: u64,
}

impl<T: Scalar> AdamW<T> {
    pub fn new(config: OptimizerConfig, params: &Parameters<T>) -> Self {
        let decay = if config.decay_all { vec![true; params.len()] } else { params.decay_mask() };
        AdamW { config, m: vec![T::zero(); params.len()], v: vec![T::zero(); params.len()], decay, step: 0 }
    }

    /// Number of updates applied so far.
    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Applies one update; returns the pre-clip gradient norm. Gradients
    /// are scaled in place when clipped.
    pub fn step(&mut self, params: &mut Parameters<T>, grads: &mut [T]) -> Result<f64, ModelError> {
        let norm = grads.iter().map(|g| g.to_f64_lossless().powi(2)).sum::<f64>().sqrt();
        if !norm.is_finite() {
            return Err(ModelError::NonFiniteGradient { step: self.step });
        }
        let c = &self.config;
        if c.clip > 0.0 && norm > c.clip {
            let s = T::of(c.clip / norm);
            grads.iter_mut().for_each(|g| *g = *g * s);
        }
        let lr = c.rate(self.step);
        self.step += 1;
        let t = self.step as i32;
        let (b1, b2) = (T::of(c.beta1), T::of(c.beta2));
        let bc1 = T::of(1.0 - c.beta1.powi(t));
        let bc2 = T::of(1.0 - c.beta2.powi(t));
        let (lr_t, eps) = (T::of(lr), T::of(c.eps));
        let shrink = T::of(1.0 - lr * c.weight_decay);
        let one = T::one();
        let state = self.m.iter_mut().zip(self.v.iter_mut()).zip(&self.decay);
        for ((p, &g), ((m, v), &decays)) in params.data.iter_mut().zip(grads.iter()).zip(state) {
            *m = b1 * *m + (one - b1) * g;
            *v = b2 * *v + (one - b2) * g * g;
            let mhat = *m / bc1;
            let vhat = *v / bc2;
            if decays {
                *p = *p * shrink;
            }
            *p = *p - lr_t * mhat / (vhat.sqrt() + eps);
        }
        Ok(norm)
    }
}
