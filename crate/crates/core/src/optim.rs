//! Adam with a step-halving learning-rate schedule.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::numeric::Tensor;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// The learning rate halves after every this many episodes.
    pub halving_interval: u64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            halving_interval: 10_000,
        }
    }
}

impl AdamConfig {
    pub fn effective_lr(&self, episode: u64) -> f64 {
        let halvings = episode / self.halving_interval.max(1);
        self.learning_rate * 0.5f64.powi(halvings.min(i32::MAX as u64) as i32)
    }
}

#[derive(Debug, Error, PartialEq)]
pub enum OptimError {
    #[error("non-finite gradient for parameter {param} at episode {episode}")]
    NonFiniteGradient { param: usize, episode: u64 },
    #[error("parameter {param} became non-finite at episode {episode}")]
    NonFiniteParameter { param: usize, episode: u64 },
    #[error("expected {expected} gradients, got {found}")]
    Arity { expected: usize, found: usize },
}

#[derive(Clone, Debug)]
pub struct Adam {
    config: AdamConfig,
    first: Vec<Tensor>,
    second: Vec<Tensor>,
    step: u64,
}

impl Adam {
    pub fn new(config: AdamConfig, params: &[&Tensor]) -> Self {
        Self {
            config,
            first: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            second: params.iter().map(|p| Tensor::zeros_like(p)).collect(),
            step: 0,
        }
    }

    pub fn config(&self) -> &AdamConfig {
        &self.config
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Applies one update using the learning rate scheduled for `episode`.
    pub fn step(
        &mut self,
        params: &mut [&mut Tensor],
        grads: &[Tensor],
        episode: u64,
    ) -> Result<(), OptimError> {
        if params.len() != self.first.len() || grads.len() != params.len() {
            return Err(OptimError::Arity {
                expected: self.first.len(),
                found: grads.len().min(params.len()),
            });
        }
        if let Some(param) = grads.iter().position(|g| !g.is_finite()) {
            return Err(OptimError::NonFiniteGradient { param, episode });
        }
        self.step += 1;
        let AdamConfig {
            beta1,
            beta2,
            epsilon,
            ..
        } = self.config;
        let lr = self.config.effective_lr(episode);
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        for (i, (p, g)) in params.iter_mut().zip(grads).enumerate() {
            let m = self.first[i].data_mut();
            let v = self.second[i].data_mut();
            for (k, (w, &gk)) in p.data_mut().iter_mut().zip(g.data()).enumerate() {
                m[k] = beta1 * m[k] + (1.0 - beta1) * gk;
                v[k] = beta2 * v[k] + (1.0 - beta2) * gk * gk;
                let m_hat = m[k] / c1;
                let v_hat = v[k] / c2;
                *w -= lr * m_hat / (v_hat.sqrt() + epsilon);
            }
            if !p.is_finite() {
                return Err(OptimError::NonFiniteParameter { param: i, episode });
            }
        }
        Ok(())
    }
}
