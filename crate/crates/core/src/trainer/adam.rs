use serde::{Deserialize, Serialize};

use crate::encoder::EncoderParams;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
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

/// First and second moments per parameter tensor, plus the step count.
#[derive(Debug, Clone, PartialEq)]
pub struct AdamState {
    pub m: Vec<Vec<f64>>,
    pub v: Vec<Vec<f64>>,
    pub t: u64,
}

impl AdamState {
    pub fn zeros_like(params: &EncoderParams) -> Self {
        let m: Vec<Vec<f64>> = params.tensors().iter().map(|t| vec![0.0; t.len()]).collect();
        Self {
            v: m.clone(),
            m,
            t: 0,
        }
    }
}

/// One bias-corrected Adam update of a single buffer at step `t ≥ 1`.
pub fn adam_update(theta: &mut [f64], grad: &[f64], m: &mut [f64], v: &mut [f64], t: u64, cfg: &AdamConfig) {
    let bc1 = 1.0 - cfg.beta1.powi(t as i32);
    let bc2 = 1.0 - cfg.beta2.powi(t as i32);
    for k in 0..theta.len() {
        let g = grad[k];
        m[k] = cfg.beta1 * m[k] + (1.0 - cfg.beta1) * g;
        v[k] = cfg.beta2 * v[k] + (1.0 - cfg.beta2) * g * g;
        let m_hat = m[k] / bc1;
        let v_hat = v[k] / bc2;
        theta[k] -= cfg.learning_rate * m_hat / (v_hat.sqrt() + cfg.eps);
    }
}

/// Advances `state.t` and applies one update to every parameter tensor.
/// Non-finite gradients abort before anything is modified.
pub fn adam_step(params: &mut EncoderParams, grads: &[Vec<f64>], state: &mut AdamState, cfg: &AdamConfig) -> Result<()> {
    let named = params.named_tensors();
    if grads.len() != named.len() || state.m.len() != named.len() {
        return Err(Error::InvalidArgument(format!(
            "{} gradients / {} moments for {} parameter tensors",
            grads.len(),
            state.m.len(),
            named.len()
        )));
    }
    for ((name, t), g) in named.iter().zip(grads) {
        if g.len() != t.len() {
            return Err(Error::shape("adam_step", &[t.shape(), &[g.len()]]));
        }
        if let Some(i) = g.iter().position(|x| !x.is_finite()) {
            return Err(Error::NonFinite(format!("gradient of {name} at index {i}")));
        }
    }
    state.t += 1;
    for (k, tensor) in params.tensors_mut().into_iter().enumerate() {
        adam_update(tensor.values_mut(), &grads[k], &mut state.m[k], &mut state.v[k], state.t, cfg);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn first_step_moves_by_lr_against_sign() {
        let cfg = AdamConfig::default();
        let mut theta = [1.0, -2.0, 0.5];
        let (mut m, mut v) = ([0.0; 3], [0.0; 3]);
        adam_update(&mut theta, &[3.0, -0.01, 100.0], &mut m, &mut v, 1, &cfg);
        for (after, (before, sign)) in theta.iter().zip([(1.0, 1.0), (-2.0, -1.0), (0.5, 1.0)]) {
            assert!((after - (before - cfg.learning_rate * sign)).abs() < 1e-9);
        }
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let cfg = AdamConfig::default();
        let mut theta = [1.0, 2.0];
        let (mut m, mut v) = ([0.0; 2], [0.0; 2]);
        for t in 1..=5 {
            adam_update(&mut theta, &[0.0, 0.0], &mut m, &mut v, t, &cfg);
        }
        assert_eq!(theta, [1.0, 2.0]);
    }

    #[test]
    fn three_steps_on_square_match_hand_stepped_reference() {
        let cfg = AdamConfig {
            learning_rate: 0.1,
            ..AdamConfig::default()
        };
        let mut theta = [1.0];
        let (mut m, mut v) = ([0.0], [0.0]);
        for t in 1..=3 {
            let g = [2.0 * theta[0]];
            adam_update(&mut theta, &g, &mut m, &mut v, t, &cfg);
        }
        // Reference written out step by step.
        let (b1, b2, lr, eps) = (0.9f64, 0.999f64, 0.1f64, 1e-8f64);
        let (mut x, mut mm, mut vv) = (1.0f64, 0.0f64, 0.0f64);
        let mut step = |t: i32, x: &mut f64| {
            let g = 2.0 * *x;
            mm = b1 * mm + (1.0 - b1) * g;
            vv = b2 * vv + (1.0 - b2) * g * g;
            *x -= lr * (mm / (1.0 - b1.powi(t))) / ((vv / (1.0 - b2.powi(t))).sqrt() + eps);
        };
        step(1, &mut x);
        step(2, &mut x);
        step(3, &mut x);
        assert!((theta[0] - x).abs() < 1e-12);
        // Sanity: the first step is ≈ −lr.
        assert!(x < 1.0 - 0.25);
    }
}
