//! Adam with bias-corrected moment estimates.

use crate::error::{AutodiffError, Result};
use crate::float::Float;
use crate::params::ParamStore;
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(learning_rate: f64) -> Self {
        Self { learning_rate, ..Self::default() }
    }
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self { learning_rate: 1e-3, beta1: 0.9, beta2: 0.999, eps: 1e-8 }
    }
}

/// Optimizer state: one first/second moment pair per parameter and a shared step counter.
#[derive(Debug, Clone)]
pub struct Adam<T> {
    pub config: AdamConfig,
    step: u64,
    m: Vec<Tensor<T>>,
    v: Vec<Tensor<T>>,
}

impl<T: Float> Adam<T> {
    pub fn new(config: AdamConfig, params: &ParamStore<T>) -> Self {
        let zeros = || params.iter().map(|(_, t)| Tensor::zeros(t.shape())).collect::<Vec<_>>();
        Self { config, step: 0, m: zeros(), v: zeros() }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    pub fn set_learning_rate(&mut self, lr: f64) {
        self.config.learning_rate = lr;
    }

    /// Applies one update. A missing gradient is treated as zero.
    ///
    /// Refuses the step, leaving parameters and state untouched, if any
    /// gradient is non-finite.
    pub fn step(&mut self, params: &mut ParamStore<T>, grads: &[Option<Tensor<T>>]) -> Result<()> {
        if grads.len() != params.len() {
            return Err(AutodiffError::Invalid(format!("{} gradients for {} parameters", grads.len(), params.len())));
        }
        for (id, g) in params.ids().zip(grads) {
            if let Some(g) = g {
                if g.shape() != params.get(id).shape() {
                    return Err(AutodiffError::Shape(format!("gradient for `{}` has wrong shape", params.name(id))));
                }
                if !g.all_finite() {
                    return Err(AutodiffError::NonFiniteGradient(params.name(id).to_string()));
                }
            }
        }
        self.step += 1;
        let c = &self.config;
        let t = self.step as f64;
        let bc1 = 1.0 - c.beta1.powf(t);
        let bc2 = 1.0 - c.beta2.powf(t);
        let (b1, b2) = (T::from_f64_lossy(c.beta1), T::from_f64_lossy(c.beta2));
        let (one_b1, one_b2) = (T::one() - b1, T::one() - b2);
        let lr = T::from_f64_lossy(c.learning_rate);
        let eps = T::from_f64_lossy(c.eps);
        let (bc1, bc2) = (T::from_f64_lossy(bc1), T::from_f64_lossy(bc2));
        for (k, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let p = params.get_mut(id).data_mut();
            let m = self.m[k].data_mut();
            let v = self.v[k].data_mut();
            match &grads[k] {
                Some(g) => {
                    for i in 0..p.len() {
                        let gi = g.data()[i];
                        m[i] = b1 * m[i] + one_b1 * gi;
                        v[i] = b2 * v[i] + one_b2 * gi * gi;
                        p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                    }
                }
                None => {
                    for i in 0..p.len() {
                        m[i] = b1 * m[i];
                        v[i] = b2 * v[i];
                        p[i] -= lr * (m[i] / bc1) / ((v[i] / bc2).sqrt() + eps);
                    }
                }
            }
        }
        Ok(())
    }
}
