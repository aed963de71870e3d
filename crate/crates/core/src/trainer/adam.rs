use crate::error::{Error, Result};

/// Hyper-parameters of one Adam parameter group.
#[derive(Clone, Copy, Debug, PartialEq)]
pub struct AdamConfig {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            learning_rate: 1e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// First and second moment estimates for one parameter tensor.
#[derive(Clone, Debug, PartialEq)]
pub struct AdamState {
    m: Vec<f64>,
    v: Vec<f64>,
    step: u64,
}

impl AdamState {
    pub fn new(len: usize) -> Self {
        Self {
            m: vec![0.0; len],
            v: vec![0.0; len],
            step: 0,
        }
    }

    pub fn steps(&self) -> u64 {
        self.step
    }
}

/// One bias-corrected Adam update of `params` in place.
///
/// Non-finite gradients leave both `params` and `state` untouched and return
/// [`Error::TrainingDiverged`] with the state's step count as the epoch.
pub fn adam_step(
    params: &mut [f64],
    grads: &[f64],
    state: &mut AdamState,
    config: &AdamConfig,
) -> Result<()> {
    if params.len() != grads.len() || params.len() != state.m.len() {
        return Err(Error::shape(params.len(), grads.len().min(state.m.len())));
    }
    if let Some(bad) = grads.iter().find(|g| !g.is_finite()) {
        return Err(Error::TrainingDiverged {
            epoch: state.step as usize,
            loss: *bad,
        });
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - config.beta1.powi(t);
    let bc2 = 1.0 - config.beta2.powi(t);
    for ((p, &g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        *m = config.beta1 * *m + (1.0 - config.beta1) * g;
        *v = config.beta2 * *v + (1.0 - config.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        *p -= config.learning_rate * m_hat / (v_hat.sqrt() + config.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_params() {
        let mut p = vec![0.5, -1.0, 2.0];
        let mut s = AdamState::new(3);
        for _ in 0..5 {
            adam_step(&mut p, &[0.0; 3], &mut s, &AdamConfig::default()).unwrap();
        }
        assert_eq!(p, vec![0.5, -1.0, 2.0]);
    }

    #[test]
    fn first_step_moves_by_learning_rate() {
        let cfg = AdamConfig {
            learning_rate: 1e-3,
            ..AdamConfig::default()
        };
        let mut p = vec![0.0; 4];
        let g = [3.0, -0.01, 250.0, -7.5];
        let mut s = AdamState::new(4);
        adam_step(&mut p, &g, &mut s, &cfg).unwrap();
        for (pi, gi) in p.iter().zip(&g) {
            assert!((pi + 1e-3 * gi.signum()).abs() < 1e-8, "{pi}");
        }
    }

    #[test]
    fn deterministic_trajectory() {
        let run = || {
            let mut p = vec![1.0, 2.0];
            let mut s = AdamState::new(2);
            for i in 0..50 {
                let g = [p[0] - 0.3 * i as f64, (p[1] * 1.7).sin()];
                adam_step(&mut p, &g, &mut s, &AdamConfig::default()).unwrap();
            }
            p
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn non_finite_gradient_is_divergence() {
        let mut p = vec![1.0];
        let mut s = AdamState::new(1);
        let err = adam_step(&mut p, &[f64::NAN], &mut s, &AdamConfig::default()).unwrap_err();
        assert!(matches!(err, Error::TrainingDiverged { .. }));
        assert_eq!(p, vec![1.0]);
        assert_eq!(s.steps(), 0);
    }
}
