use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use super::model::ModelParams;

/// Learning rate per step: linear warm-up from `peak / div` to `peak` over
/// the first `warmup_frac` of the steps, then cosine decay back to
/// `peak / div`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OneCycle {
    pub peak: f64,
    pub total_steps: usize,
    pub warmup_frac: f64,
    pub div: f64,
}

impl OneCycle {
    pub fn new(peak: f64, total_steps: usize) -> Self {
        Self {
            peak,
            total_steps,
            warmup_frac: 0.3,
            div: 25.0,
        }
    }

    pub fn lr(&self, step: usize) -> f64 {
        let floor = self.peak / self.div;
        let warm = ((self.total_steps as f64 * self.warmup_frac).round() as usize).max(1);
        if step < warm {
            return floor + (self.peak - floor) * (step as f64 / warm as f64);
        }
        let rest = self.total_steps.saturating_sub(warm).max(1);
        let t = ((step - warm) as f64 / rest as f64).min(1.0);
        floor + 0.5 * (self.peak - floor) * (1.0 + (PI * t).cos())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: i32,
}

impl Adam {
    pub fn new(params: &ModelParams) -> Self {
        let zeros: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: zeros.clone(),
            v: zeros,
            t: 0,
        }
    }

    /// One bias-corrected update. Tensors from index `first` on are updated;
    /// earlier ones are left frozen.
    pub fn step(&mut self, params: &mut ModelParams, grads: &ModelParams, lr: f64, first: usize) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        let tensors = params.tensors_mut().into_iter().zip(grads.tensors());
        for (k, (p, g)) in tensors.enumerate().skip(first) {
            for (((x, &gx), m), v) in p.iter_mut().zip(g).zip(&mut self.m[k]).zip(&mut self.v[k]) {
                *m = self.beta1 * *m + (1.0 - self.beta1) * gx;
                *v = self.beta2 * *v + (1.0 - self.beta2) * gx * gx;
                *x -= lr * (*m / c1) / ((*v / c2).sqrt() + self.eps);
            }
        }
    }
}
