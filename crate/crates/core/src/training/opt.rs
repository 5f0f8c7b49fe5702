//! Decoupled-weight-decay adaptive-moment optimizer and the warmup/cosine
//! learning-rate schedule.

use serde::{Deserialize, Serialize};

use crate::nn::ParamRef;

/// Learning-rate schedule shape.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Schedule {
    Cosine,
    Constant,
}

/// Learning rate at 1-based `step`: linear warmup to `base` over
/// `warmup` steps, then (for [`Schedule::Cosine`]) cosine decay to zero
/// at `total`.
pub fn scheduled_lr(schedule: Schedule, base: f64, step: u64, warmup: u64, total: u64) -> f64 {
    if warmup > 0 && step <= warmup {
        return base * step as f64 / warmup as f64;
    }
    match schedule {
        Schedule::Constant => base,
        Schedule::Cosine => {
            let decay_span = total.saturating_sub(warmup).max(1) as f64;
            let progress = (step.saturating_sub(warmup)) as f64 / decay_span;
            base * 0.5 * (1.0 + (std::f64::consts::PI * progress.clamp(0.0, 1.0)).cos())
        }
    }
}

/// AdamW: adaptive moments with weight decay applied directly to the
/// parameters rather than through the gradient.
#[derive(Debug, Clone)]
pub struct AdamW {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    step: u64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
}

impl AdamW {
    pub fn new(beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Self {
        Self {
            beta1,
            beta2,
            eps,
            weight_decay,
            step: 0,
            m: Vec::new(),
            v: Vec::new(),
        }
    }

    /// One update over all parameter groups. Groups must arrive in the
    /// same order (and with the same sizes) on every call.
    pub fn step(&mut self, params: &mut [ParamRef<'_>], lr: f64) {
        if self.m.is_empty() {
            self.m = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
            self.v = params.iter().map(|p| vec![0.0; p.data.len()]).collect();
        }
        assert_eq!(self.m.len(), params.len(), "parameter group count changed");
        self.step += 1;
        let bc1 = 1.0 - self.beta1.powi(self.step as i32);
        let bc2 = 1.0 - self.beta2.powi(self.step as i32);
        for (gi, p) in params.iter_mut().enumerate() {
            let m = &mut self.m[gi];
            let v = &mut self.v[gi];
            for k in 0..p.data.len() {
                let g = p.grad[k];
                m[k] = self.beta1 * m[k] + (1.0 - self.beta1) * g;
                v[k] = self.beta2 * v[k] + (1.0 - self.beta2) * g * g;
                let m_hat = m[k] / bc1;
                let v_hat = v[k] / bc2;
                p.data[k] -=
                    lr * (m_hat / (v_hat.sqrt() + self.eps) + self.weight_decay * p.data[k]);
            }
        }
    }
}
