//! Adam with per-tensor learning-rate multipliers and the cosine schedule.

use crate::model::{GradSet, Parameters};
use crate::scaling::MupPlan;

pub struct Adam {
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
}

impl Adam {
    pub fn new(params: &Parameters, beta1: f64, beta2: f64, eps: f64, weight_decay: f64) -> Adam {
        Adam {
            m: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            v: params.tensors.iter().map(|t| vec![0.0; t.data.len()]).collect(),
            t: 0,
            beta1,
            beta2,
            eps,
            weight_decay,
        }
    }

    pub fn defaults(params: &Parameters) -> Adam {
        Adam::new(params, 0.9, 0.999, 1e-8, 0.0)
    }

    /// One update with base learning rate `lr`, scaled per tensor by the plan.
    pub fn step(&mut self, params: &mut Parameters, grads: &GradSet, lr: f64, plan: &MupPlan) {
        self.t += 1;
        let bc1 = 1.0 - self.beta1.powi(self.t as i32);
        let bc2 = 1.0 - self.beta2.powi(self.t as i32);
        for (ti, tensor) in params.tensors.iter_mut().enumerate() {
            let lr_t = lr * plan.lr_mult(&tensor.spec);
            let g = &grads.data[ti];
            let m = &mut self.m[ti];
            let v = &mut self.v[ti];
            for i in 0..tensor.data.len() {
                m[i] = self.beta1 * m[i] + (1.0 - self.beta1) * g[i];
                v[i] = self.beta2 * v[i] + (1.0 - self.beta2) * g[i] * g[i];
                let mhat = m[i] / bc1;
                let vhat = v[i] / bc2;
                let mut upd = mhat / (vhat.sqrt() + self.eps);
                if self.weight_decay != 0.0 {
                    upd += self.weight_decay * tensor.data[i];
                }
                tensor.data[i] -= lr_t * upd;
            }
        }
    }
}

/// Cosine decay from `base_lr` to zero over `total_steps`, with optional
/// linear warmup.
pub fn lr_at(base_lr: f64, step: u64, total_steps: u64, warmup_steps: u64) -> f64 {
    if warmup_steps > 0 && step < warmup_steps {
        return base_lr * (step + 1) as f64 / warmup_steps as f64;
    }
    let progress = step.min(total_steps) as f64 / total_steps as f64;
    base_lr * 0.5 * (1.0 + (std::f64::consts::PI * progress).cos())
}

/// Scales gradients in place so their global norm is at most `max_norm`.
pub fn clip_global_norm(grads: &mut GradSet, max_norm: f64) -> f64 {
    let norm = grads.global_norm();
    if norm > max_norm {
        grads.scale(max_norm / norm);
    }
    norm
}
