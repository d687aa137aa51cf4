//! AdamW with bias correction and decoupled weight decay.
//!
//! Per coordinate, at step `t` (1-based):
//!
//! ```text
//! θ ← θ − lr·wd·θ
//! m ← β₁·m + (1 − β₁)·g
//! v ← β₂·v + (1 − β₂)·g²
//! θ ← θ − lr · (m / (1 − β₁ᵗ)) / (√(v / (1 − β₂ᵗ)) + ε)
//! ```

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AdamWConfig {
    pub lr: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub eps: f64,
}

/// First and second moments for one parameter block.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Moments {
    pub m: Vec<f64>,
    pub v: Vec<f64>,
}

impl Moments {
    pub fn zeros(n: usize) -> Self {
        Self {
            m: vec![0.0; n],
            v: vec![0.0; n],
        }
    }
}

pub fn adamw_step(param: &mut [f64], grad: &[f64], moments: &mut Moments, t: u64, cfg: &AdamWConfig) -> Result<()> {
    if grad.len() != param.len() || moments.m.len() != param.len() || moments.v.len() != param.len() {
        return Err(Error::dim(param.len(), grad.len(), "AdamW shapes"));
    }
    if t == 0 {
        return Err(Error::InvalidArgument("AdamW step counter starts at 1".into()));
    }
    let t = i32::try_from(t).unwrap_or(i32::MAX);
    let bc1 = 1.0 - cfg.beta1.powi(t);
    let bc2 = 1.0 - cfg.beta2.powi(t);
    let decay = 1.0 - cfg.lr * cfg.weight_decay;
    for i in 0..param.len() {
        let g = grad[i];
        let m = &mut moments.m[i];
        let v = &mut moments.v[i];
        *m = cfg.beta1 * *m + (1.0 - cfg.beta1) * g;
        *v = cfg.beta2 * *v + (1.0 - cfg.beta2) * g * g;
        let m_hat = *m / bc1;
        let v_hat = *v / bc2;
        param[i] = param[i] * decay - cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg(lr: f64, wd: f64) -> AdamWConfig {
        AdamWConfig {
            lr,
            beta1: 0.8,
            beta2: 0.99,
            weight_decay: wd,
            eps: 1e-8,
        }
    }

    #[test]
    fn zero_grad_no_decay_is_identity() {
        let mut p = vec![0.3, -1.2];
        let mut m = Moments::zeros(2);
        for t in 1..5 {
            adamw_step(&mut p, &[0.0, 0.0], &mut m, t, &cfg(0.1, 0.0)).unwrap();
        }
        assert_eq!(p, vec![0.3, -1.2]);
    }

    #[test]
    fn first_step_by_hand() {
        // m̂ = 1, v̂ = 1 at t=1, so θ' = 1 − 0.1·1/(1 + 1e−8).
        let mut p = vec![1.0];
        let mut m = Moments::zeros(1);
        adamw_step(&mut p, &[1.0], &mut m, 1, &cfg(0.1, 0.0)).unwrap();
        let expect = 1.0 - 0.1 * (1.0 / (1.0 + 1e-8));
        assert!((p[0] - expect).abs() < 1e-15);
        assert!((p[0] - 0.9).abs() < 1e-8);
    }

    #[test]
    fn decay_alone_shrinks_monotonically() {
        let mut p = vec![2.0, -3.0];
        let mut m = Moments::zeros(2);
        let mut prev = p.clone();
        for t in 1..20 {
            adamw_step(&mut p, &[0.0, 0.0], &mut m, t, &cfg(0.1, 0.5)).unwrap();
            for i in 0..2 {
                assert!(p[i].abs() < prev[i].abs());
                assert_eq!(p[i].signum(), prev[i].signum());
            }
            prev = p.clone();
        }
    }

    #[test]
    fn zero_lr_is_identity() {
        let mut p = vec![0.7];
        let mut m = Moments::zeros(1);
        adamw_step(&mut p, &[3.0], &mut m, 1, &cfg(0.0, 0.01)).unwrap();
        assert_eq!(p, vec![0.7]);
    }
}
