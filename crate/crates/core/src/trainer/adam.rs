use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
    /// Multiplicative decay applied every `decay_steps` steps (continuously).
    pub decay_rate: f64,
    pub decay_steps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
            decay_rate: 0.96,
            decay_steps: 1000.0,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        let ok = self.learning_rate > 0.0
            && self.learning_rate.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0
            && self.decay_rate > 0.0
            && self.decay_rate <= 1.0
            && self.decay_steps > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("invalid optimizer settings {self:?}")))
        }
    }

    /// Learning rate used for the update with zero-based index `step`.
    pub fn rate_at(&self, step: u64) -> f64 {
        self.learning_rate * self.decay_rate.powf(step as f64 / self.decay_steps)
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    pub config: AdamConfig,
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub step: u64,
}

impl AdamState {
    pub fn new(n: usize, config: AdamConfig) -> Self {
        Self { config, m: vec![0.0; n], v: vec![0.0; n], step: 0 }
    }

    /// One bias-corrected update of `theta` in place.
    pub fn update(&mut self, theta: &mut [f64], grad: &[f64]) -> Result<()> {
        if theta.len() != self.m.len() || grad.len() != self.m.len() {
            return Err(Error::Shape(format!(
                "optimizer holds {} moments, got {} parameters and {} gradients",
                self.m.len(),
                theta.len(),
                grad.len()
            )));
        }
        if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numerical(format!("gradient entry {i} is {}", grad[i])));
        }
        let c = &self.config;
        let lr = c.rate_at(self.step);
        self.step += 1;
        let bc1 = 1.0 - c.beta1.powi(self.step.min(i32::MAX as u64) as i32);
        let bc2 = 1.0 - c.beta2.powi(self.step.min(i32::MAX as u64) as i32);
        for ((th, g), (m, v)) in theta.iter_mut().zip(grad).zip(self.m.iter_mut().zip(self.v.iter_mut())) {
            *m = c.beta1 * *m + (1.0 - c.beta1) * g;
            *v = c.beta2 * *v + (1.0 - c.beta2) * g * g;
            *th -= lr * (*m / bc1) / ((*v / bc2).sqrt() + c.epsilon);
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_theta() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut th = vec![1.0, -2.0, 0.5];
        st.update(&mut th, &[0.0; 3]).unwrap();
        assert_eq!(th, vec![1.0, -2.0, 0.5]);
        assert_eq!(st.step, 1);
    }

    #[test]
    fn first_step_is_signed_rate() {
        let mut st = AdamState::new(3, AdamConfig::default());
        let mut th = vec![0.0; 3];
        st.update(&mut th, &[3.0, -1e-3, 40.0]).unwrap();
        let lr = 1e-3;
        assert!((th[0] + lr).abs() < 1e-9);
        assert!((th[1] - lr).abs() < 1e-8);
        assert!((th[2] + lr).abs() < 1e-9);
    }

    #[test]
    fn constant_gradient_steady_state() {
        // With a constant gradient both bias-corrected moments equal g and g^2
        // exactly, so each step moves by rate * |g| / (|g| + eps).
        let cfg = AdamConfig::default();
        let mut st = AdamState::new(1, cfg);
        let mut th = vec![0.0];
        let g = 0.7;
        for k in 0..3000u64 {
            let before = th[0];
            st.update(&mut th, &[g]).unwrap();
            let expect = cfg.rate_at(k) * g / (g + cfg.epsilon);
            assert!(((before - th[0]) - expect).abs() < 1e-12 * expect.max(1.0), "step {k}");
        }
    }

    #[test]
    fn decay_schedule() {
        let c = AdamConfig::default();
        assert_eq!(c.rate_at(0), 1e-3);
        assert!((c.rate_at(1000) - 0.96e-3).abs() < 1e-18);
        assert!((c.rate_at(500) - 1e-3 * 0.96f64.sqrt()).abs() < 1e-18);
    }

    #[test]
    fn rejects_bad_inputs() {
        let mut st = AdamState::new(2, AdamConfig::default());
        let mut th = vec![0.0; 2];
        assert!(matches!(st.update(&mut th, &[f64::NAN, 0.0]), Err(Error::Numerical(_))));
        assert!(matches!(st.update(&mut th, &[0.0]), Err(Error::Shape(_))));
        assert_eq!(st.step, 0);
    }
}
