//! Adam with optional decoupled weight decay (AdamW).

use serde::{Deserialize, Serialize};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    /// Decoupled weight decay; zero gives plain Adam.
    pub weight_decay: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        AdamConfig {
            lr: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            weight_decay: 0.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> crate::Result<()> {
        let ok = self.lr.is_finite()
            && self.lr >= 0.0
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.eps > 0.0
            && self.weight_decay >= 0.0;
        if ok {
            Ok(())
        } else {
            Err(crate::Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }
}

/// Moment buffers for one flat parameter vector.
#[derive(Clone, Debug)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(n_params: usize, config: AdamConfig) -> Self {
        Adam {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }

    /// Advances the step counter. Call once per optimizer step, before the
    /// per-tensor [`Adam::update`] calls.
    pub fn begin_step(&mut self) {
        self.step += 1;
    }

    /// Updates `params`, whose moments live at `offset..offset + params.len()`.
    pub fn update(&mut self, offset: usize, params: &mut [f32], grads: &[f64]) {
        assert_eq!(params.len(), grads.len());
        assert!(self.step > 0, "begin_step must be called first");
        let c = self.config;
        let t = self.step as i32;
        let bc1 = 1.0 - c.beta1.powi(t);
        let bc2 = 1.0 - c.beta2.powi(t);
        let m = &mut self.m[offset..offset + params.len()];
        let v = &mut self.v[offset..offset + params.len()];
        for i in 0..params.len() {
            let g = grads[i];
            m[i] = c.beta1 * m[i] + (1.0 - c.beta1) * g;
            v[i] = c.beta2 * v[i] + (1.0 - c.beta2) * g * g;
            let m_hat = m[i] / bc1;
            let v_hat = v[i] / bc2;
            let p = params[i] as f64;
            let step = c.lr * (m_hat / (v_hat.sqrt() + c.eps) + c.weight_decay * p);
            if step != 0.0 {
                params[i] = (p - step) as f32;
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_identity() {
        let mut adam = Adam::new(3, AdamConfig { lr: 0.1, ..Default::default() });
        let mut p = vec![0.3f32, -1.7, 2.0e-7];
        let before = p.clone();
        adam.begin_step();
        adam.update(0, &mut p, &[0.0; 3]);
        assert_eq!(p, before);
    }

    #[test]
    fn zero_lr_is_identity_even_with_decay() {
        let cfg = AdamConfig { lr: 0.0, weight_decay: 0.01, ..Default::default() };
        let mut adam = Adam::new(2, cfg);
        let mut p = vec![0.3f32, -1.7];
        adam.begin_step();
        adam.update(0, &mut p, &[1.0, -2.0]);
        assert_eq!(p, vec![0.3f32, -1.7]);
    }

    #[test]
    fn first_step_moves_by_lr() {
        // With bias correction the first update is lr * g / (|g| + eps).
        let mut adam = Adam::new(1, AdamConfig { lr: 0.01, ..Default::default() });
        let mut p = vec![1.0f32];
        adam.begin_step();
        adam.update(0, &mut p, &[5.0]);
        assert!((p[0] as f64 - 0.99).abs() < 1e-6);
    }

    #[test]
    fn decoupled_decay_shrinks_without_gradient_signal() {
        let cfg = AdamConfig { lr: 0.1, weight_decay: 0.5, ..Default::default() };
        let mut adam = Adam::new(1, cfg);
        let mut p = vec![2.0f32];
        adam.begin_step();
        adam.update(0, &mut p, &[0.0]);
        assert!((p[0] - 1.9).abs() < 1e-6);
    }
}
