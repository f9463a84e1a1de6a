//! Adam with bias correction.

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    pub batch_size: usize,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.99,
            epsilon: 1e-8,
            batch_size: 16,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let betas_ok = (0.0..1.0).contains(&self.beta1) && (0.0..1.0).contains(&self.beta2);
        if !(self.learning_rate > 0.0) || !betas_ok || !(self.epsilon > 0.0) || self.batch_size == 0 {
            return Err(Error::InvalidConfig(format!("invalid Adam settings {self:?}")));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Adam {
    pub config: AdamConfig,
    step: u64,
    m: Vec<f64>,
    v: Vec<f64>,
}

impl Adam {
    pub fn new(config: AdamConfig, n_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
        })
    }

    pub fn steps_taken(&self) -> u64 {
        self.step
    }

    /// One update of `params` in place from `grads`.
    pub fn step(&mut self, params: &mut [f64], grads: &[f64]) -> Result<()> {
        if params.len() != self.m.len() || grads.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "Adam holds {} moments, got {} params and {} grads",
                self.m.len(),
                params.len(),
                grads.len()
            )));
        }
        let AdamConfig {
            learning_rate: lr,
            beta1: b1,
            beta2: b2,
            epsilon: eps,
            ..
        } = self.config;
        self.step += 1;
        let c1 = 1.0 - b1.powi(self.step as i32);
        let c2 = 1.0 - b2.powi(self.step as i32);
        for i in 0..params.len() {
            let g = grads[i];
            self.m[i] = b1 * self.m[i] + (1.0 - b1) * g;
            self.v[i] = b2 * self.v[i] + (1.0 - b2) * g * g;
            let m_hat = self.m[i] / c1;
            let v_hat = self.v[i] / c2;
            params[i] -= lr * m_hat / (v_hat.sqrt() + eps);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_is_a_no_op() {
        let mut adam = Adam::new(AdamConfig::default(), 3).unwrap();
        let mut p = vec![1.0, -2.0, 0.5];
        for _ in 0..5 {
            adam.step(&mut p, &[0.0; 3]).unwrap();
        }
        assert_eq!(p, vec![1.0, -2.0, 0.5]);
    }

    #[test]
    fn constant_gradient_moves_by_learning_rate() {
        let cfg = AdamConfig::default();
        let mut adam = Adam::new(cfg, 1).unwrap();
        let mut p = vec![0.0];
        let mut prev = 0.0;
        for _ in 0..50 {
            adam.step(&mut p, &[3.0]).unwrap();
            let delta = prev - p[0];
            assert!((delta - cfg.learning_rate).abs() < 1e-10, "{delta}");
            prev = p[0];
        }
    }

    #[test]
    fn matches_hand_trace() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..Default::default()
        };
        let mut adam = Adam::new(cfg, 1).unwrap();
        let mut p = vec![1.0];
        let (mut m, mut v) = (0.0f64, 0.0f64);
        let mut expected = 1.0;
        for (t, g) in [0.5, -1.0, 2.0].into_iter().enumerate() {
            adam.step(&mut p, &[g]).unwrap();
            m = 0.9 * m + 0.1 * g;
            v = 0.99 * v + 0.01 * g * g;
            let mh = m / (1.0 - 0.9f64.powi(t as i32 + 1));
            let vh = v / (1.0 - 0.99f64.powi(t as i32 + 1));
            expected -= 0.1 * mh / (vh.sqrt() + 1e-8);
            assert!((p[0] - expected).abs() < 1e-15);
        }
    }

    #[test]
    fn rejects_mismatch_and_bad_config() {
        let mut adam = Adam::new(AdamConfig::default(), 2).unwrap();
        assert!(adam.step(&mut [0.0], &[0.0, 0.0]).is_err());
        let bad = AdamConfig {
            beta1: 1.0,
            ..Default::default()
        };
        assert!(Adam::new(bad, 1).is_err());
    }
}
