use serde::{Deserialize, Serialize};

use super::param::{ParamId, ParamStore};
use crate::error::{Error, Result};

/// Adam with bias-corrected moment estimates.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Adam {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for Adam {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

impl Adam {
    pub fn new(lr: f64) -> Self {
        Self {
            lr,
            ..Self::default()
        }
    }

    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(Error::Config(format!("eps must be > 0, got {}", self.eps)));
        }
        Ok(())
    }

    /// Updates the listed tensors from their accumulated gradients, then
    /// zeroes the gradient of every tensor in the store (frozen ones included).
    pub fn step(&self, store: &mut ParamStore, trainable: &[ParamId]) -> Result<()> {
        self.validate()?;
        for &id in trainable {
            let t = store.get(id);
            if !t.grad.is_finite() {
                return Err(Error::NonFinite(format!("gradient of {}", t.name)));
            }
            if t.m.shape() != t.values.shape() || t.v.shape() != t.values.shape() {
                return Err(Error::Internal(format!("moments of {} are uninitialized", t.name)));
            }
        }
        for &id in trainable {
            let t = store.get_mut(id);
            t.step_count += 1;
            let step = t.step_count as i32;
            let bias1 = 1.0 - self.beta1.powi(step);
            let bias2 = 1.0 - self.beta2.powi(step);
            let values = t.values.as_mut_slice();
            let grad = t.grad.as_slice();
            let m = t.m.as_mut_slice();
            let v = t.v.as_mut_slice();
            for k in 0..values.len() {
                let g = grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bias1;
                let v_hat = v[k] / bias2;
                values[k] -= self.lr * m_hat / (v_hat.sqrt() + self.eps);
            }
            if !t.values.is_finite() {
                return Err(Error::NonFinite(format!("values of {} after update", t.name)));
            }
        }
        store.zero_grads();
        Ok(())
    }
}
