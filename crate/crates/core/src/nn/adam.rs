use serde::{Deserialize, Serialize};

use crate::{Error, Result};

/// Adam hyperparameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub epsilon: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 1e-3,
            beta1: 0.9,
            beta2: 0.999,
            epsilon: 1e-8,
        }
    }
}

impl AdamConfig {
    /// `lr = 0` is accepted so that a run can be frozen for testing.
    pub fn validate(&self) -> Result<()> {
        let ok = self.lr >= 0.0
            && self.lr.is_finite()
            && (0.0..1.0).contains(&self.beta1)
            && (0.0..1.0).contains(&self.beta2)
            && self.epsilon > 0.0;
        if ok {
            Ok(())
        } else {
            Err(Error::config(format!("invalid Adam hyperparameters {self:?}")))
        }
    }
}

/// Moment accumulators for one parameter set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AdamState {
    pub config: AdamConfig,
    pub step: u64,
    pub first_moment: Vec<f64>,
    pub second_moment: Vec<f64>,
}

impl AdamState {
    pub fn new(config: AdamConfig, num_params: usize) -> Result<Self> {
        config.validate()?;
        Ok(Self {
            config,
            step: 0,
            first_moment: vec![0.0; num_params],
            second_moment: vec![0.0; num_params],
        })
    }

    /// One bias-corrected Adam update.
    ///
    /// Gradients are checked before anything is touched, so a non-finite
    /// gradient leaves both the parameters and the state unchanged.
    pub fn update<'a>(
        &mut self,
        params: impl Iterator<Item = &'a mut f64>,
        grads: &[f64],
    ) -> Result<()> {
        if grads.len() != self.first_moment.len() {
            return Err(Error::Internal(format!(
                "{} gradients for {} tracked parameters",
                grads.len(),
                self.first_moment.len()
            )));
        }
        if let Some(i) = grads.iter().position(|g| !g.is_finite()) {
            return Err(Error::Numeric {
                iteration: self.step,
                message: format!("non-finite gradient at parameter {i}"),
                last_checkpoint: None,
            });
        }
        let AdamConfig {
            lr,
            beta1,
            beta2,
            epsilon,
        } = self.config;
        self.step += 1;
        let t = self.step as i32;
        let c1 = 1.0 - beta1.powi(t);
        let c2 = 1.0 - beta2.powi(t);
        let mut n = 0;
        for (((p, &g), m), v) in params
            .zip(grads)
            .zip(self.first_moment.iter_mut())
            .zip(self.second_moment.iter_mut())
        {
            *m = beta1 * *m + (1.0 - beta1) * g;
            *v = beta2 * *v + (1.0 - beta2) * g * g;
            let m_hat = *m / c1;
            let v_hat = *v / c2;
            *p -= lr * m_hat / (v_hat.sqrt() + epsilon);
            n += 1;
        }
        if n != grads.len() {
            return Err(Error::Internal(format!(
                "{} parameters for {} gradients",
                n,
                grads.len()
            )));
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr() {
        // t = 1: m = 0.1 g, v = 0.001 g^2, m_hat = g, v_hat = g^2,
        // step = lr * g / (|g| + eps).
        let mut state = AdamState::new(AdamConfig::default(), 2).unwrap();
        let mut p = [1.0, -2.0];
        state.update(p.iter_mut(), &[0.5, -3.0]).unwrap();
        let expect0 = 1.0 - 1e-3 * 0.5 / (0.5 + 1e-8);
        let expect1 = -2.0 + 1e-3 * 3.0 / (3.0 + 1e-8);
        assert!((p[0] - expect0).abs() < 1e-15);
        assert!((p[1] - expect1).abs() < 1e-15);
        assert!((p[0] - (1.0 - 1e-3)).abs() < 1e-10);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn zero_gradient_is_a_fixed_point() {
        let mut state = AdamState::new(AdamConfig::default(), 3).unwrap();
        let mut p = [0.25, -1.0, 7.0];
        for _ in 0..5 {
            state.update(p.iter_mut(), &[0.0; 3]).unwrap();
        }
        assert_eq!(p, [0.25, -1.0, 7.0]);
    }

    #[test]
    fn moments_decay_under_zero_gradient() {
        let mut state = AdamState::new(AdamConfig::default(), 1).unwrap();
        let mut p = [0.0];
        state.update(p.iter_mut(), &[1.0]).unwrap();
        let (m1, v1) = (state.first_moment[0], state.second_moment[0]);
        state.update(p.iter_mut(), &[0.0]).unwrap();
        assert!((state.first_moment[0] - 0.9 * m1).abs() < 1e-18);
        assert!((state.second_moment[0] - 0.999 * v1).abs() < 1e-18);
    }

    #[test]
    fn two_steps_match_hand_recurrence() {
        // Same gradient g = 2 twice, lr = 0.01.
        // t=1: m=0.2, v=0.004, m_hat=2, v_hat=4, delta=0.01*2/(2+eps)
        // t=2: m=0.38, v=0.007996, m_hat=0.38/0.19=2, v_hat=0.007996/0.001999=4
        let cfg = AdamConfig {
            lr: 0.01,
            ..AdamConfig::default()
        };
        let mut state = AdamState::new(cfg, 1).unwrap();
        let mut p = [0.0];
        state.update(p.iter_mut(), &[2.0]).unwrap();
        state.update(p.iter_mut(), &[2.0]).unwrap();
        let step = 0.01 * 2.0 / (2.0 + 1e-8);
        assert!((p[0] - -2.0 * step).abs() < 1e-14);
        assert!((state.first_moment[0] - 0.38).abs() < 1e-15);
        assert!((state.second_moment[0] - 0.007996).abs() < 1e-15);
    }

    #[test]
    fn non_finite_gradient_is_rejected_without_side_effects() {
        let mut state = AdamState::new(AdamConfig::default(), 2).unwrap();
        let mut p = [1.0, 1.0];
        state.update(p.iter_mut(), &[0.1, 0.1]).unwrap();
        let before = (p, state.clone());
        let err = state.update(p.iter_mut(), &[0.1, f64::NAN]).unwrap_err();
        assert!(matches!(err, Error::Numeric { iteration: 1, .. }));
        assert_eq!(p, before.0);
        assert_eq!(state, before.1);
    }

    #[test]
    fn hyperparameters_are_validated() {
        let bad = AdamConfig {
            beta1: 1.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(bad, 1).is_err());
        let bad = AdamConfig {
            epsilon: 0.0,
            ..AdamConfig::default()
        };
        assert!(AdamState::new(bad, 1).is_err());
    }
}
