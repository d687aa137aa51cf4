use serde::{Deserialize, Serialize};

use crate::autodiff::kl_value;
use crate::error::{Error, Result};
use crate::linalg::sq_dist;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossBreakdown {
    pub rec: f64,
    pub align: f64,
    /// `λ₁·rec + λ₂·align`
    pub total: f64,
}

impl LossBreakdown {
    pub fn combine(rec: f64, align: f64, lambda_rec: f64, lambda_align: f64) -> Self {
        Self {
            rec,
            align,
            total: lambda_rec * rec + lambda_align * align,
        }
    }
}

/// `‖s − ŝ‖² + ‖s − ŝ_m‖²`, squared L2 without averaging over the dimension.
pub fn loss_rec(s: &[f64], recalled: &[f64], recalled_main: &[f64]) -> Result<f64> {
    if recalled.len() != s.len() || recalled_main.len() != s.len() {
        return Err(Error::dim(s.len(), recalled.len().min(recalled_main.len()), "loss_rec"));
    }
    Ok(sq_dist(s, recalled) + sq_dist(s, recalled_main))
}

/// `KL(w_target ‖ α·w_descriptor + (1 − α)·w_source)`
pub fn loss_align(w_target: &[f64], w_descriptor: &[f64], w_source: &[f64], alpha: f64) -> Result<f64> {
    let n = w_target.len();
    if w_descriptor.len() != n || w_source.len() != n {
        return Err(Error::dim(n, w_descriptor.len().min(w_source.len()), "loss_align"));
    }
    if !(alpha > 0.0 && alpha < 1.0) {
        return Err(Error::InvalidArgument(format!("alpha must lie in (0,1), got {alpha}")));
    }
    let mix: Vec<f64> = w_descriptor
        .iter()
        .zip(w_source)
        .map(|(t, a)| alpha * t + (1.0 - alpha) * a)
        .collect();
    Ok(kl_value(w_target, &mix))
}

#[cfg(test)]
mod tests {
    use super::*;
    use proptest::prelude::*;

    #[test]
    fn rec_cases() {
        let s = [0.4, -1.0, 2.0];
        assert_eq!(loss_rec(&s, &s, &s).unwrap(), 0.0);
        assert_eq!(loss_rec(&[1.0, 0.0], &[0.0, 0.0], &[0.0, 0.0]).unwrap(), 2.0);
        assert!(loss_rec(&[1.0], &[1.0, 2.0], &[1.0]).is_err());
    }

    #[test]
    fn align_cases() {
        let w = [0.2, 0.3, 0.5];
        for a in [0.01, 0.5, 0.99] {
            assert_eq!(loss_align(&w, &w, &w, a).unwrap(), 0.0);
        }
        let v = loss_align(&[1.0, 0.0], &[1.0, 0.0], &[0.0, 1.0], 0.5).unwrap();
        assert!((v - std::f64::consts::LN_2).abs() < 1e-15);
        assert!(loss_align(&w, &w, &w, 0.0).is_err());
        assert!(loss_align(&w, &w, &w, 1.0).is_err());
        assert!(loss_align(&w, &w[..2], &w, 0.5).is_err());
    }

    fn simplex(n: usize) -> impl Strategy<Value = Vec<f64>> {
        prop::collection::vec(0.0f64..1.0, n).prop_map(|v| {
            let s: f64 = v.iter().sum::<f64>() + 1e-9;
            v.into_iter().map(|x| (x + 1e-9 / 4.0) / s).collect()
        })
    }

    proptest! {
        #[test]
        fn align_is_nonnegative(p in simplex(4), q in simplex(4), r in simplex(4), a in 0.001f64..0.999) {
            prop_assert!(loss_align(&p, &q, &r, a).unwrap() >= -1e-12);
        }
    }
}
