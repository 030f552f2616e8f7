use serde::{Deserialize, Serialize};

use crate::numerics::{ParamGrads, ParamStore};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            beta1: 0.9,
            beta2: 0.98,
            eps: 1e-9,
        }
    }
}

/// First/second moment estimates per parameter and the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    first: Vec<Vec<f64>>,
    second: Vec<Vec<f64>>,
    step: u64,
}

impl AdamState {
    pub fn new(params: &ParamStore, config: AdamConfig) -> Self {
        let zeros = |p: &ParamStore| p.iter().map(|(_, t)| vec![0.0; t.len()]).collect();
        AdamState {
            config,
            first: zeros(params),
            second: zeros(params),
            step: 0,
        }
    }

    pub fn step_count(&self) -> u64 {
        self.step
    }

    /// Bias-corrected Adam update. Parameters without a gradient are treated
    /// as having a zero gradient.
    pub fn step(&mut self, params: &mut ParamStore, grads: &ParamGrads, lr: f64) {
        self.step += 1;
        let AdamConfig { beta1, beta2, eps } = self.config;
        let bc1 = 1.0 - beta1.powi(self.step as i32);
        let bc2 = 1.0 - beta2.powi(self.step as i32);
        for (i, id) in params.ids().collect::<Vec<_>>().into_iter().enumerate() {
            let m = &mut self.first[i];
            let v = &mut self.second[i];
            let theta = params.get_mut(id).data_mut();
            let g = grads.get(i).and_then(Option::as_deref);
            for j in 0..theta.len() {
                let gj = g.map_or(0.0, |g| g[j]);
                m[j] = beta1 * m[j] + (1.0 - beta1) * gj;
                v[j] = beta2 * v[j] + (1.0 - beta2) * gj * gj;
                let mhat = m[j] / bc1;
                let vhat = v[j] / bc2;
                theta[j] -= lr * mhat / (vhat.sqrt() + eps);
            }
        }
    }
}

/// Warmup-then-inverse-square-root learning rate:
/// `d_model^-0.5 * min(step^-0.5, step * warmup^-1.5)`.
pub fn lr_schedule(step: u64, d_model: usize, warmup: u64) -> f64 {
    let s = step.max(1) as f64;
    let w = warmup.max(1) as f64;
    (d_model as f64).powf(-0.5) * f64::min(s.powf(-0.5), s * w.powf(-1.5))
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
/// Returns the norm before clipping.
pub fn clip_grad_norm(grads: &mut ParamGrads, max_norm: f64) -> f64 {
    let norm = grads
        .iter()
        .flatten()
        .flat_map(|g| g.iter())
        .map(|x| x * x)
        .sum::<f64>()
        .sqrt();
    if norm > max_norm && norm > 0.0 {
        let s = max_norm / norm;
        for g in grads.iter_mut().flatten() {
            g.iter_mut().for_each(|x| *x *= s);
        }
    }
    norm
}
