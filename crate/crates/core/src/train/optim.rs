use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cosine decay from `lr0` down to `floor · lr0` at `total` steps.
pub fn cosine_lr(step: u64, total: u64, lr0: f64, floor: f64) -> f64 {
    if total == 0 {
        return lr0;
    }
    let s = step.min(total) as f64 / total as f64;
    lr0 * (floor + (1.0 - floor) * (1.0 + (std::f64::consts::PI * s).cos()) / 2.0)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OptimState {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
    pub t: u64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
}

impl OptimState {
    pub fn new(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
            t: 0,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }
}

/// Bias-corrected Adam step followed by decoupled weight decay on the pre-step parameters.
pub fn adam_step(
    state: &mut OptimState,
    params: &mut [f32],
    grad: &[f32],
    lr: f64,
    weight_decay: f64,
) -> Result<()> {
    if params.len() != grad.len() || state.m.len() != params.len() {
        return Err(Error::Shape(format!(
            "adam: {} params, {} grads, {} moments",
            params.len(),
            grad.len(),
            state.m.len()
        )));
    }
    if let Some(i) = grad.iter().position(|g| !g.is_finite()) {
        return Err(Error::NonFinite(format!("gradient component {i}")));
    }
    state.t += 1;
    let (b1, b2) = (state.beta1, state.beta2);
    let c1 = 1.0 - b1.powi(state.t as i32);
    let c2 = 1.0 - b2.powi(state.t as i32);
    for i in 0..params.len() {
        let g = grad[i] as f64;
        let m = b1 * state.m[i] + (1.0 - b1) * g;
        let v = b2 * state.v[i] + (1.0 - b2) * g * g;
        state.m[i] = m;
        state.v[i] = v;
        let p = params[i] as f64;
        let step = lr * (m / c1) / ((v / c2).sqrt() + state.eps);
        params[i] = (p - step - lr * weight_decay * p) as f32;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn schedule_endpoints() {
        assert_eq!(cosine_lr(0, 100, 0.5, 0.1), 0.5);
        assert!((cosine_lr(100, 100, 1.0, 0.1) - 0.1).abs() < 1e-15);
        assert!((cosine_lr(50, 100, 1.0, 0.1) - 0.55).abs() < 1e-15);
        assert!((cosine_lr(250, 100, 1.0, 0.1) - 0.1).abs() < 1e-15);
    }

    proptest! {
        #[test]
        fn schedule_non_increasing(total in 1u64..5000, f in 0.01f64..=1.0, lr in 1e-6f64..1.0) {
            let mut prev = f64::INFINITY;
            for s in (0..=total).step_by((total as usize / 97).max(1)) {
                let cur = cosine_lr(s, total, lr, f);
                prop_assert!(cur <= prev + 1e-15);
                prev = cur;
            }
        }
    }

    #[test]
    fn zero_gradient_no_decay_is_identity() {
        let mut st = OptimState::new(3);
        let mut p = [1.0f32, -2.0, 0.25];
        adam_step(&mut st, &mut p, &[0.0; 3], 0.1, 0.0).unwrap();
        assert_eq!(p, [1.0, -2.0, 0.25]);
    }

    #[test]
    fn single_step_matches_hand_arithmetic() {
        // t=1: m=0.1g, v=0.001g², m̂=g, v̂=g², update = lr·g/(|g|+ε).
        let mut st = OptimState::new(1);
        let mut p = [0.5f32];
        adam_step(&mut st, &mut p, &[0.2], 0.01, 0.0).unwrap();
        let expected = 0.5 - 0.01 * 0.2 / (0.2 + 1e-8);
        assert!((p[0] as f64 - expected).abs() < 1e-7);
        // Second step with the same gradient: m̂ = g and v̂ = g² again.
        adam_step(&mut st, &mut p, &[0.2], 0.01, 0.0).unwrap();
        assert!((p[0] as f64 - (expected - 0.01 * 0.2 / (0.2 + 1e-8))).abs() < 1e-7);
    }

    #[test]
    fn weight_decay_shrinks() {
        let mut st = OptimState::new(2);
        let mut p = [0.8f32, -0.3];
        adam_step(&mut st, &mut p, &[0.0, 0.0], 0.1, 0.5).unwrap();
        assert!(p[0] < 0.8 && p[0] > 0.0);
        assert!(p[1] > -0.3 && p[1] < 0.0);
        assert!((p[0] - 0.76).abs() < 1e-7);
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut st = OptimState::new(1);
        let mut p = [0.0f32];
        assert!(matches!(
            adam_step(&mut st, &mut p, &[f32::NAN], 0.1, 0.0),
            Err(Error::NonFinite(_))
        ));
    }
}
