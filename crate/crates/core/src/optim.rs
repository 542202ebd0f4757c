//! Adam with optional L2 weight decay folded into the gradient.

use alloc::vec;
use alloc::vec::Vec;

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl AdamConfig {
    pub fn with_lr(lr: f64) -> Self {
        Self {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moments plus the step counter.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            step: 0,
        }
    }

    /// One bias-corrected Adam step on `params`. With `weight_decay > 0` the
    /// gradient becomes `g + weight_decay * theta`. Non-finite gradients leave
    /// everything untouched and return an error.
    pub fn apply(
        &mut self,
        cfg: &AdamConfig,
        params: &mut [f64],
        grads: &[f64],
        weight_decay: f64,
    ) -> Result<()> {
        if grads.len() != params.len() || self.m.len() != params.len() {
            return Err(Error::Length {
                what: "adam buffers",
                left: grads.len(),
                right: params.len(),
            });
        }
        if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
            return Err(Error::Domain {
                what: "gradient (non-finite)",
                value: *bad,
            });
        }
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - libm::pow(cfg.beta1, t as f64);
        let c2 = 1.0 - libm::pow(cfg.beta2, t as f64);
        for i in 0..params.len() {
            let g = grads[i] + weight_decay * params[i];
            self.m[i] = cfg.beta1 * self.m[i] + (1.0 - cfg.beta1) * g;
            self.v[i] = cfg.beta2 * self.v[i] + (1.0 - cfg.beta2) * g * g;
            let mh = self.m[i] / c1;
            let vh = self.v[i] / c2;
            params[i] -= cfg.lr * mh / (libm::sqrt(vh) + cfg.eps);
        }
        Ok(())
    }
}

/// Rescales `grads` so their L2 norm is at most `max_norm`; returns the original norm.
pub fn clip_grad_norm(grads: &mut [f64], max_norm: f64) -> f64 {
    let norm = libm::sqrt(grads.iter().map(|g| g * g).sum::<f64>());
    if max_norm > 0.0 && norm > max_norm {
        let s = max_norm / norm;
        grads.iter_mut().for_each(|g| *g *= s);
    }
    norm
}
