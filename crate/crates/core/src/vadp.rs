//! Editing-degree prediction: a one-hidden-layer Gaussian head over the
//! concatenated `(source, target, descriptor)` embeddings. The degree is the
//! sigmoid of a reparameterized sample `μ + exp(½·logσ²)·ε`.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg::{dot, sigmoid, Matrix};
use crate::memnet::uniform_matrix;
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct VadpParams {
    /// `H × 3D`
    pub hidden_weight: Matrix,
    /// `1 × H`
    pub hidden_bias: Matrix,
    /// `1 × H`
    pub mean_weight: Matrix,
    /// `1 × 1`
    pub mean_bias: Matrix,
    /// `1 × H`
    pub logvar_weight: Matrix,
    /// `1 × 1`
    pub logvar_bias: Matrix,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DegreeSample {
    pub alpha: f64,
    pub mean: f64,
    pub log_var: f64,
    pub eps: f64,
}

impl VadpParams {
    pub fn zeros(dim: usize, hidden: usize) -> Self {
        Self {
            hidden_weight: Matrix::zeros(hidden, 3 * dim),
            hidden_bias: Matrix::zeros(1, hidden),
            mean_weight: Matrix::zeros(1, hidden),
            mean_bias: Matrix::zeros(1, 1),
            logvar_weight: Matrix::zeros(1, hidden),
            logvar_bias: Matrix::zeros(1, 1),
        }
    }

    /// Weights uniform on `±1/√fan_in`, biases zero.
    pub fn init(dim: usize, hidden: usize, rng: &mut Rng) -> Result<Self> {
        if dim == 0 || hidden == 0 {
            return Err(Error::InvalidArgument("VADP needs D, H >= 1".into()));
        }
        let b_in = 1.0 / ((3 * dim) as f64).sqrt();
        let b_h = 1.0 / (hidden as f64).sqrt();
        Ok(Self {
            hidden_weight: uniform_matrix(hidden, 3 * dim, b_in, rng),
            hidden_bias: Matrix::zeros(1, hidden),
            mean_weight: uniform_matrix(1, hidden, b_h, rng),
            mean_bias: Matrix::zeros(1, 1),
            logvar_weight: uniform_matrix(1, hidden, b_h, rng),
            logvar_bias: Matrix::zeros(1, 1),
        })
    }

    pub fn input_dim(&self) -> usize {
        self.hidden_weight.cols
    }

    pub fn hidden(&self) -> usize {
        self.hidden_weight.rows
    }
}

pub fn predict_degree(
    p: &VadpParams,
    source: &[f64],
    target: &[f64],
    descriptor: &[f64],
    eps: f64,
) -> Result<DegreeSample> {
    let d = source.len();
    if target.len() != d || descriptor.len() != d || 3 * d != p.input_dim() {
        return Err(Error::dim(
            p.input_dim(),
            source.len() + target.len() + descriptor.len(),
            "VADP input",
        ));
    }
    let mut features = Vec::with_capacity(3 * d);
    features.extend_from_slice(source);
    features.extend_from_slice(target);
    features.extend_from_slice(descriptor);
    let hidden: Vec<f64> = p
        .hidden_weight
        .matvec(&features)
        .iter()
        .zip(&p.hidden_bias.data)
        .map(|(z, b)| (z + b).max(0.0))
        .collect();
    let mean = dot(&p.mean_weight.data, &hidden) + p.mean_bias.data[0];
    let log_var = dot(&p.logvar_weight.data, &hidden) + p.logvar_bias.data[0];
    Ok(DegreeSample {
        alpha: degree_from(mean, log_var, eps),
        mean,
        log_var,
        eps,
    })
}

/// `sigmoid(μ + exp(½·logσ²)·ε)`
pub fn degree_from(mean: f64, log_var: f64, eps: f64) -> f64 {
    sigmoid(mean + (0.5 * log_var).exp() * eps)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    #[test]
    fn zero_network_gives_half() {
        let p = VadpParams::zeros(3, 4);
        let s = predict_degree(&p, &[1.0; 3], &[2.0; 3], &[0.5; 3], 0.0).unwrap();
        assert_eq!(s.mean, 0.0);
        assert_eq!(s.alpha, 0.5);
    }

    #[test]
    fn reparameterized_sample() {
        // sigmoid(2 + 1·1) = 1/(1+e^-3)
        let expect = 1.0 / (1.0 + (-3.0f64).exp());
        assert!((degree_from(2.0, 0.0, 1.0) - expect).abs() < 1e-15);
        assert!((expect - 0.95257).abs() < 1e-5);
        let mut p = VadpParams::zeros(1, 1);
        p.mean_bias.data[0] = 2.0;
        let s = predict_degree(&p, &[0.0], &[0.0], &[0.0], 1.0).unwrap();
        assert_eq!(s.alpha, expect);
    }

    #[test]
    fn strictly_inside_unit_interval() {
        let p = VadpParams::init(4, 6, &mut seeded(3)).unwrap();
        for k in 0..50 {
            let x = k as f64 - 25.0;
            let s = predict_degree(&p, &[x; 4], &[-x; 4], &[0.1 * x; 4], 0.3).unwrap();
            assert!(s.alpha > 0.0 && s.alpha < 1.0);
        }
        assert!(predict_degree(&p, &[0.0; 3], &[0.0; 4], &[0.0; 4], 0.0).is_err());
    }
}
