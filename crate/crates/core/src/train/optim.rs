use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Adam with bias-corrected moments, one slot per stored parameter.
#[derive(Clone, Debug)]
pub struct Adam {
    cfg: AdamConfig,
    lr: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: usize,
}

impl Adam {
    pub fn new(cfg: AdamConfig, lr: f64, params: &ParamStore) -> Self {
        let zeros: Vec<Vec<f64>> = params.iter().map(|(_, t)| vec![0.0; t.numel()]).collect();
        Self {
            cfg,
            lr,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    pub fn steps(&self) -> usize {
        self.t
    }

    /// Applies one update. A non-finite gradient aborts before anything changes.
    pub fn step(&mut self, params: &mut ParamStore, grads: &[Vec<f64>]) -> Result<()> {
        let step = self.t + 1;
        if grads.len() != self.m.len() {
            return Err(Error::dim(
                "adam_step",
                format!("{} gradient tensors", self.m.len()),
                format!("{}", grads.len()),
            ));
        }
        for ((name, t), g) in params.iter().zip(grads) {
            if g.len() != t.numel() {
                return Err(Error::dim(
                    "adam_step",
                    format!("{name}: {} entries", t.numel()),
                    format!("{}", g.len()),
                ));
            }
            if let Some(i) = g.iter().position(|v| !v.is_finite()) {
                return Err(Error::TrainingAborted {
                    step,
                    msg: format!("non-finite gradient {} at `{name}`[{i}]", g[i]),
                });
            }
        }
        self.t = step;
        let AdamConfig { beta1, beta2, eps } = self.cfg;
        let c1 = 1.0 - beta1.powi(step as i32);
        let c2 = 1.0 - beta2.powi(step as i32);
        for (k, tensor) in params.tensors_mut().iter_mut().enumerate() {
            let (m, v, g) = (&mut self.m[k], &mut self.v[k], &grads[k]);
            let updated: Vec<f64> = tensor
                .data()
                .iter()
                .enumerate()
                .map(|(i, &theta)| {
                    m[i] = beta1 * m[i] + (1.0 - beta1) * g[i];
                    v[i] = beta2 * v[i] + (1.0 - beta2) * g[i] * g[i];
                    let mhat = m[i] / c1;
                    let vhat = v[i] / c2;
                    theta - self.lr * mhat / (vhat.sqrt() + eps)
                })
                .collect();
            tensor
                .assign(&updated)
                .map_err(|e| Error::TrainingAborted {
                    step,
                    msg: e.to_string(),
                })?;
        }
        Ok(())
    }
}
