//! Adaptive-moment optimizer with bias correction, plus global-norm
//! gradient clipping. State is keyed by parameter name so updates are
//! independent of iteration order.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::numerics::tensor::Tensor;

#[derive(Debug, Clone, Copy)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

struct Moments {
    m: Vec<f64>,
    v: Vec<f64>,
}

pub struct Adam {
    cfg: AdamConfig,
    step: u64,
    state: BTreeMap<String, Moments>,
}

impl Adam {
    pub fn new(cfg: AdamConfig) -> Self {
        Adam {
            cfg,
            step: 0,
            state: BTreeMap::new(),
        }
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// Adjust the learning rate (for schedules); moments are kept.
    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One bias-corrected update over `(name, param, grad)` triples.
    /// Deterministic given inputs; rejects non-finite gradients by name.
    pub fn step<'a>(
        &mut self,
        params: impl IntoIterator<Item = (&'a str, &'a mut Tensor, &'a Tensor)>,
    ) -> Result<()> {
        self.step += 1;
        let t = self.step as i32;
        let bc1 = 1.0 - self.cfg.beta1.powi(t);
        let bc2 = 1.0 - self.cfg.beta2.powi(t);
        for (name, param, grad) in params {
            if grad.data().iter().any(|g| !g.is_finite()) {
                return Err(Error::Optim(format!("non-finite gradient for '{name}'")));
            }
            if param.numel() != grad.numel() {
                return Err(Error::Optim(format!(
                    "gradient shape mismatch for '{name}': {:?} vs {:?}",
                    param.shape(),
                    grad.shape()
                )));
            }
            let entry = self.state.entry(name.to_string()).or_insert_with(|| Moments {
                m: vec![0.0; param.numel()],
                v: vec![0.0; param.numel()],
            });
            if entry.m.len() != param.numel() {
                return Err(Error::Optim(format!(
                    "moment state size changed for '{name}'"
                )));
            }
            let (b1, b2, eps, lr) = (self.cfg.beta1, self.cfg.beta2, self.cfg.eps, self.cfg.lr);
            for ((p, &g), (m, v)) in param
                .data_mut()
                .iter_mut()
                .zip(grad.data())
                .zip(entry.m.iter_mut().zip(entry.v.iter_mut()))
            {
                *m = b1 * *m + (1.0 - b1) * g;
                *v = b2 * *v + (1.0 - b2) * g * g;
                let m_hat = *m / bc1;
                let v_hat = *v / bc2;
                *p -= lr * m_hat / (v_hat.sqrt() + eps);
            }
        }
        Ok(())
    }
}

/// Scale all gradients so their global L2 norm is at most `max_norm`.
/// Returns the pre-clip norm.
pub fn clip_global_norm(grads: &mut BTreeMap<String, Tensor>, max_norm: f64) -> f64 {
    let mut sq = 0.0;
    for g in grads.values() {
        for &v in g.data() {
            sq += v * v;
        }
    }
    let norm = sq.sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.values_mut() {
            for v in g.data_mut() {
                *v *= s;
            }
        }
    }
    norm
}
