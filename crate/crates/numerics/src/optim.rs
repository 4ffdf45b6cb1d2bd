use crate::params::{Gradients, ParamStore};

/// Linear warmup to `base_lr`, constant afterwards.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Schedule {
    pub base_lr: f64,
    pub warmup_steps: u64,
}

impl Schedule {
    pub fn new(base_lr: f64, warmup_steps: u64) -> Self {
        Self {
            base_lr,
            warmup_steps,
        }
    }

    pub fn lr(&self, step: u64) -> f64 {
        if self.warmup_steps == 0 {
            return self.base_lr.max(0.0);
        }
        let frac = (step as f64 / self.warmup_steps as f64).min(1.0);
        (self.base_lr * frac).max(0.0)
    }
}

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamWConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    pub weight_decay: f64,
    /// Clip the global gradient norm to this value; `None` disables clipping.
    pub max_grad_norm: Option<f64>,
}

impl Default for AdamWConfig {
    fn default() -> Self {
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.01,
            max_grad_norm: Some(1.0),
        }
    }
}

/// Bias-corrected Adam with decoupled weight decay.
#[derive(Clone, Debug)]
pub struct AdamW {
    pub config: AdamWConfig,
    pub schedule: Schedule,
}

impl AdamW {
    pub fn new(config: AdamWConfig, schedule: Schedule) -> Self {
        Self { config, schedule }
    }

    /// Advances `store.step` by one and applies the update. Returns the
    /// learning rate that was used.
    pub fn step(&self, store: &mut ParamStore, grads: &Gradients) -> f64 {
        store.step += 1;
        let t = store.step;
        let lr = self.schedule.lr(t);
        let c = self.config;
        let clip = match c.max_grad_norm {
            Some(max) => {
                let norm = grads.global_norm();
                if norm > max && norm > 0.0 {
                    max / norm
                } else {
                    1.0
                }
            }
            None => 1.0,
        };
        let bc1 = 1.0 - c.beta1.powi(t as i32);
        let bc2 = 1.0 - c.beta2.powi(t as i32);
        let ids: Vec<_> = store.iter().map(|(id, _)| id).collect();
        for id in ids {
            let g = grads.get(id);
            let p = store.get_mut(id);
            let cols = p.value.cols();
            let wd = if p.decay { c.weight_decay } else { 0.0 };
            let skip = if p.frozen_row0 { cols } else { 0 };
            let n = p.value.len();
            let (value, m, v) = (p.value.data_mut(), &mut p.m, &mut p.v);
            for i in skip..n {
                let gi = g.map_or(0.0, |g| g[i] as f64 * clip);
                let mi = c.beta1 * m[i] as f64 + (1.0 - c.beta1) * gi;
                let vi = c.beta2 * v[i] as f64 + (1.0 - c.beta2) * gi * gi;
                m[i] = mi as f32;
                v[i] = vi as f32;
                let mhat = mi / bc1;
                let vhat = vi / bc2;
                let theta = value[i] as f64;
                let update = mhat / (vhat.sqrt() + c.eps) + wd * theta;
                value[i] = (theta - lr * update) as f32;
            }
        }
        lr
    }
}
