//! Central finite differences, the independent oracle for the tape.

use serde::Serialize;

use crate::error::Result;

/// Denominator floor for relative errors.
pub const REL_FLOOR: f64 = 1e-8;

/// `(f(θ + h·e_i) − f(θ − h·e_i)) / 2h` for every coordinate `i`.
pub fn finite_difference<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<f64>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut x = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x)?;
        x[i] = orig - h;
        let down = f(&x)?;
        x[i] = orig;
        out.push((up - down) / (2.0 * h));
    }
    Ok(out)
}

/// Central differences of `Σ_k w_k·f_k(θ)` where `f` returns the weighted
/// terms `(w_k, f_k)`. Each term is differenced before summation, so large
/// terms that do not depend on a coordinate contribute exactly zero.
pub fn finite_difference_terms<F>(mut f: F, theta: &[f64], h: f64) -> Result<Vec<f64>>
where
    F: FnMut(&[f64]) -> Result<Vec<(f64, f64)>>,
{
    assert!(h > 0.0, "finite-difference step must be positive");
    let mut x = theta.to_vec();
    let mut out = Vec::with_capacity(theta.len());
    for i in 0..theta.len() {
        let orig = x[i];
        x[i] = orig + h;
        let up = f(&x)?;
        x[i] = orig - h;
        let down = f(&x)?;
        x[i] = orig;
        assert_eq!(up.len(), down.len(), "term count changed under perturbation");
        let diff: f64 = up.iter().zip(&down).map(|((w, u), (_, d))| w * (u - d)).sum();
        out.push(diff / (2.0 * h));
    }
    Ok(out)
}

pub fn relative_error(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(REL_FLOOR)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct BlockError {
    pub block: String,
    pub max_relative_error: f64,
    /// Coordinate where the maximum occurred.
    pub worst_index: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GradReport {
    pub blocks: Vec<BlockError>,
    pub tolerance: f64,
    pub passed: bool,
}

impl GradReport {
    /// Compares analytic and numeric gradients block by block.
    pub fn compare(analytic: &[(String, Vec<f64>)], numeric: &[(String, Vec<f64>)], tolerance: f64) -> Self {
        let blocks: Vec<BlockError> = analytic
            .iter()
            .zip(numeric)
            .map(|((name, a), (_, n))| {
                let (worst_index, max_relative_error) = a
                    .iter()
                    .zip(n)
                    .map(|(x, y)| relative_error(*x, *y))
                    .enumerate()
                    .fold((0, 0.0), |acc, (i, e)| if e > acc.1 { (i, e) } else { acc });
                BlockError {
                    block: name.clone(),
                    max_relative_error,
                    worst_index,
                }
            })
            .collect();
        let passed = blocks.iter().all(|b| b.max_relative_error < tolerance);
        Self {
            blocks,
            tolerance,
            passed,
        }
    }

    pub fn max_error(&self) -> f64 {
        self.blocks.iter().map(|b| b.max_relative_error).fold(0.0, f64::max)
    }
}
