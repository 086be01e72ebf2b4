use crate::error::{AutodiffError, Result};
use crate::tensor::Tensor;

/// Adam hyper-parameters.
///
/// The defaults (`lr = 0.001`, `beta1 = 0.9`, `beta2 = 0.999`, `eps = 0.1`)
/// are the settings used for the ConvLSTM forecaster. Note the unusually
/// large `eps`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl Default for AdamConfig {
    fn default() -> Self {
        Self {
            lr: 0.001,
            beta1: 0.9,
            beta2: 0.999,
            eps: 0.1,
        }
    }
}

impl AdamConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0) || !self.lr.is_finite() {
            return Err(AutodiffError::Config(format!(
                "learning rate must be positive, got {}",
                self.lr
            )));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(AutodiffError::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if !(self.eps > 0.0) {
            return Err(AutodiffError::Config(format!("eps must be positive, got {}", self.eps)));
        }
        Ok(())
    }
}

/// First/second moment accumulators and the step count.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct AdamState {
    pub step: u64,
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
}

impl AdamState {
    pub fn new() -> Self {
        Self::default()
    }
}

/// One bias-corrected Adam update of `params` in place.
pub fn adam_step(
    params: &mut [Tensor],
    grads: &[Tensor],
    state: &mut AdamState,
    cfg: &AdamConfig,
) -> Result<()> {
    cfg.validate()?;
    if params.len() != grads.len() {
        return Err(AutodiffError::Dimension {
            op: "adam_step",
            axis: "parameter_count",
            expected: params.len(),
            found: grads.len(),
        });
    }
    if state.m.is_empty() {
        state.m = params.iter().map(|p| vec![0.0; p.len()]).collect();
        state.v = state.m.clone();
    }
    for (p, g) in params.iter().zip(grads) {
        if p.shape() != g.shape() {
            return Err(AutodiffError::ShapeMismatch {
                op: "adam_step",
                left: p.shape().to_vec(),
                right: g.shape().to_vec(),
            });
        }
    }
    state.step += 1;
    let t = state.step as i32;
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    for ((p, g), (m, v)) in params
        .iter_mut()
        .zip(grads)
        .zip(state.m.iter_mut().zip(state.v.iter_mut()))
    {
        for (((w, &gi), mi), vi) in p.data_mut().iter_mut().zip(g.data()).zip(m.iter_mut()).zip(v.iter_mut()) {
            *mi = cfg.beta1 * *mi + (1.0 - cfg.beta1) * gi;
            *vi = cfg.beta2 * *vi + (1.0 - cfg.beta2) * gi * gi;
            let m_hat = *mi / bc1;
            let v_hat = *vi / bc2;
            *w -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
        }
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn zero_gradient_leaves_parameters_unchanged() {
        let mut params = vec![Tensor::from_fn(&[5], |i| i as f64 - 2.0)];
        let before = params.clone();
        let grads = vec![Tensor::zeros(&[5])];
        let mut state = AdamState::new();
        for _ in 0..10 {
            adam_step(&mut params, &grads, &mut state, &AdamConfig::default()).unwrap();
        }
        assert_eq!(params, before);
    }

    #[test]
    fn first_step_matches_hand_evaluation() {
        // m_hat = g, v_hat = g^2 at step 1, so the update is -lr * g / (|g| + eps)
        let mut params = vec![Tensor::scalar(0.0)];
        let mut state = AdamState::new();
        adam_step(&mut params, &[Tensor::scalar(1.0)], &mut state, &AdamConfig::default()).unwrap();
        let delta = params[0].item().unwrap();
        assert!((delta - (-0.001 / 1.1)).abs() < 1e-15, "{delta}");
        assert!((delta + 9.0909e-4).abs() < 1e-8);
    }

    #[test]
    fn constant_gradient_decreases_monotonically() {
        let mut params = vec![Tensor::scalar(1.0)];
        let mut state = AdamState::new();
        let mut last = 1.0;
        for _ in 0..1000 {
            adam_step(&mut params, &[Tensor::scalar(0.5)], &mut state, &AdamConfig::default()).unwrap();
            let now = params[0].item().unwrap();
            assert!(now < last);
            last = now;
        }
        assert_eq!(state.step, 1000);
    }

    #[test]
    fn non_positive_learning_rate_is_rejected() {
        let cfg = AdamConfig {
            lr: 0.0,
            ..AdamConfig::default()
        };
        let mut params = vec![Tensor::scalar(1.0)];
        let err = adam_step(&mut params, &[Tensor::scalar(1.0)], &mut AdamState::new(), &cfg);
        assert!(matches!(err, Err(AutodiffError::Config(_))));
        let cfg = AdamConfig { lr: -1.0, ..cfg };
        assert!(cfg.validate().is_err());
    }
}
