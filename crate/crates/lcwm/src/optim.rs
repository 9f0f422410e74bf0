//! Adam with decoupled weight decay and global gradient-norm clipping.
//!
//! Hand-rolled instead of `candle_nn::AdamW` because the training protocol
//! needs a grad-norm clip applied before the moment updates.

use candle_core::backprop::GradStore;
use candle_core::{Tensor, Var};

use crate::error::Result;

#[derive(Debug, Clone)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    pub grad_clip: Option<f64>,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
            grad_clip: Some(10.0),
        }
    }
}

pub struct Adam {
    vars: Vec<Var>,
    m: Vec<Tensor>,
    v: Vec<Tensor>,
    t: i32,
    pub cfg: AdamConfig,
}

impl Adam {
    pub fn new(vars: Vec<Var>, cfg: AdamConfig) -> Result<Self> {
        let m = vars
            .iter()
            .map(|v| Tensor::zeros_like(v.as_tensor()))
            .collect::<candle_core::Result<Vec<_>>>()?;
        let v = vars
            .iter()
            .map(|v| Tensor::zeros_like(v.as_tensor()))
            .collect::<candle_core::Result<Vec<_>>>()?;
        Ok(Self { vars, m, v, t: 0, cfg })
    }

    pub fn set_lr(&mut self, lr: f64) {
        self.cfg.lr = lr;
    }

    /// One update step; returns the pre-clip global gradient norm.
    pub fn step(&mut self, grads: &GradStore) -> Result<f64> {
        let mut sq_sum = 0f64;
        let mut picked: Vec<Option<Tensor>> = Vec::with_capacity(self.vars.len());
        for var in &self.vars {
            match grads.get(var.as_tensor()) {
                Some(g) => {
                    sq_sum += g.sqr()?.sum_all()?.to_scalar::<f32>()? as f64;
                    picked.push(Some(g.clone()));
                }
                None => picked.push(None),
            }
        }
        let norm = sq_sum.sqrt();
        let scale = match self.cfg.grad_clip {
            Some(clip) if norm > clip => clip / norm,
            _ => 1.0,
        };
        self.t += 1;
        let bc1 = 1.0 - self.cfg.beta1.powi(self.t);
        let bc2 = 1.0 - self.cfg.beta2.powi(self.t);
        for (i, grad) in picked.into_iter().enumerate() {
            let Some(grad) = grad else { continue };
            // Detach: the moment buffers persist across steps, and anything
            // derived from an attached gradient would keep every iteration's
            // autograd graph alive.
            let grad = (grad.detach() * scale)?;
            self.m[i] =
                ((&self.m[i] * self.cfg.beta1)? + (&grad * (1.0 - self.cfg.beta1))?)?.detach();
            self.v[i] =
                ((&self.v[i] * self.cfg.beta2)? + (grad.sqr()? * (1.0 - self.cfg.beta2))?)?
                    .detach();
            let m_hat = (&self.m[i] / bc1)?;
            let v_hat = (&self.v[i] / bc2)?;
            let update = (m_hat / (v_hat.sqrt()? + self.cfg.eps)?)?;
            let w = self.vars[i].as_tensor();
            let decayed = if self.cfg.weight_decay > 0.0 {
                (w * (1.0 - self.cfg.lr * self.cfg.weight_decay))?
            } else {
                w.clone()
            };
            self.vars[i].set(&(decayed - (update * self.cfg.lr)?)?)?;
        }
        Ok(norm)
    }
}
