use crate::error::{Error, Result};

use super::config::RmsPropConfig;
use super::params::{Gradients, ModelParams};

/// RMSprop with one squared-gradient accumulator per parameter entry.
#[derive(Debug, Clone, PartialEq)]
pub struct RmsProp {
    pub config: RmsPropConfig,
    accumulators: Vec<Vec<f64>>,
}

impl RmsProp {
    pub fn new(params: &ModelParams, config: RmsPropConfig) -> Self {
        Self {
            config,
            accumulators: params.tensors().iter().map(|(_, t)| vec![0.0; t.len()]).collect(),
        }
    }

    /// `v ← ρv + (1−ρ)g²`, `p ← p − lr·g/(√v + ε)`, then the metric weights
    /// are projected back to their feasible set.
    pub fn step(&mut self, params: &mut ModelParams, grads: &Gradients, lr: f64) -> Result<()> {
        let RmsPropConfig { decay, epsilon } = self.config;
        for (((name, p), (_, g)), v) in params
            .tensors_mut()
            .into_iter()
            .zip(grads.tensors())
            .zip(self.accumulators.iter_mut())
        {
            if p.len() != g.len() || p.len() != v.len() {
                return Err(Error::contract(format!("gradient shape mismatch for {name}")));
            }
            for ((p, &g), v) in p.iter_mut().zip(g).zip(v.iter_mut()) {
                *v = decay * *v + (1.0 - decay) * g * g;
                *p -= lr * g / (v.sqrt() + epsilon);
            }
        }
        params.metric.project();
        params.validate()
    }
}
