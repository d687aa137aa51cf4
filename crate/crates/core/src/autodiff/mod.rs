//! Reverse-mode differentiation for the training graphs, and the
//! finite-difference oracle used to certify it.

mod fd;
mod tape;

pub use fd::{finite_difference, finite_difference_terms, relative_error, BlockError, GradReport, REL_FLOOR};
pub use tape::{kl_value, Gradients, NodeId, Tape, KL_CLAMP};

use crate::error::Result;

/// Builds a scalar graph on a fresh tape, then runs the reverse pass.
/// Returns the tape (for reading leaf adjoints), the loss and the gradients.
pub fn forward_backward<F>(build: F) -> Result<(Tape, f64, Gradients)>
where
    F: FnOnce(&mut Tape) -> Result<NodeId>,
{
    let mut tape = Tape::new();
    let root = build(&mut tape)?;
    let grads = tape.backward(root)?;
    let loss = tape.scalar(root);
    Ok((tape, loss, grads))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::error::Error;
    use crate::linalg::Matrix;
    use crate::rng::seeded;
    use approx::assert_relative_eq;
    use rand::Rng as _;

    #[test]
    fn squared_distance_to_origin() {
        let (tape, loss, grads) = forward_backward(|t| {
            let x = t.leaf(&[3.0, 4.0])?;
            let z = t.leaf(&[0.0, 0.0])?;
            t.sq_dist(x, z)
        })
        .unwrap();
        assert_eq!(loss, 25.0);
        assert_eq!(grads.of(NodeId(0)), &[6.0, 8.0]);
        assert_eq!(tape.len(), 3);
    }

    #[test]
    fn kl_of_identical_is_zero_with_finite_grads() {
        let (_, loss, grads) = forward_backward(|t| {
            let logits = t.leaf(&[0.2, -0.5, 1.0])?;
            let p = t.softmax(logits, 1.0)?;
            let q = t.softmax(logits, 1.0)?;
            t.kl(p, q)
        })
        .unwrap();
        assert_eq!(loss, 0.0);
        assert!(grads.of(NodeId(0)).iter().all(|g| g.is_finite() && g.abs() < 1e-12));
    }

    #[test]
    fn fd_quadratic_and_constant() {
        let g = finite_difference(|x| Ok(x[0] * x[0]), &[3.0], 1e-5).unwrap();
        assert!((g[0] - 6.0).abs() < 1e-8);
        let g = finite_difference(|_| Ok(4.2), &[1.0, -2.0, 0.5], 1e-5).unwrap();
        assert!(g.iter().all(|v| v.abs() < 1e-10));
    }

    #[test]
    fn non_finite_node_is_reported() {
        let err = forward_backward(|t| {
            let x = t.leaf(&[1000.0])?;
            t.exp(x, 1.0)
        })
        .unwrap_err();
        assert!(matches!(err, Error::NonFinite { node: 1, op: "exp" }), "{err:?}");
    }

    #[test]
    fn softmax_gradient_rows_sum_to_zero() {
        // Jacobian row i = ∂y_i/∂z; each column sum over outputs must vanish
        // because Σ y = 1. Check via backward of every output component.
        let z = [0.3, -1.2, 0.7, 0.05];
        for i in 0..z.len() {
            let (_, _, grads) = forward_backward(|t| {
                let zi = t.leaf(&z)?;
                let y = t.softmax(zi, 2.5)?;
                let mut e = vec![0.0; z.len()];
                e[i] = 1.0;
                let sel = t.leaf(&e)?;
                t.dot(y, sel)
            })
            .unwrap();
            let s: f64 = grads.of(NodeId(0)).iter().sum();
            assert!(s.abs() < 1e-15, "row {i}: {s}");
        }
    }

    #[test]
    fn cosine_gradient_orthogonal_to_query() {
        let mut rng = seeded(8);
        for _ in 0..20 {
            let q: Vec<f64> = (0..6).map(|_| rng.random_range(-1.0..1.0)).collect();
            let k: Vec<f64> = (0..18).map(|_| rng.random_range(-1.0..1.0)).collect();
            let w: Vec<f64> = (0..3).map(|_| rng.random_range(-1.0..1.0)).collect();
            let (_, _, grads) = forward_backward(|t| {
                let slots = t.matrix(&Matrix::from_vec(3, 6, k.clone())?)?;
                let qi = t.leaf(&q)?;
                let c = t.slot_cosine(slots, qi)?;
                let wi = t.leaf(&w)?;
                t.dot(c, wi)
            })
            .unwrap();
            // Directional derivative along q of a (nearly) scale-invariant function.
            let dir: f64 = grads.of(NodeId(1)).iter().zip(&q).map(|(g, x)| g * x).sum();
            assert!(dir.abs() < 1e-8, "{dir}");
        }
    }

    /// Random composite graph touching every primitive, checked against
    /// central differences and for linearity of the reverse pass.
    fn composite(t: &mut Tape, theta: &[f64]) -> Result<(NodeId, NodeId)> {
        let slots = t.matrix(&Matrix::from_vec(3, 4, theta[..12].to_vec())?)?;
        let q = t.leaf(&theta[12..16])?;
        let c = t.slot_cosine(slots, q)?;
        let w = t.softmax(c, 3.0)?;
        let r = t.slot_sum(slots, w)?;
        let row = t.row(slots, 1)?;
        let mv = t.matvec(slots, row)?;
        let h = t.relu(mv)?;
        let cat = t.concat(&[h, w])?;
        let s = t.sigmoid(cat)?;
        let e = t.exp(s, 0.5)?;
        let m = t.mul(e, cat)?;
        let sd = t.sq_dist(r, q)?;
        let dotv = t.dot(m, s)?;
        let al = t.sigmoid(dotv)?;
        let u = t.leaf(&[0.2, 0.5, 0.3])?;
        let mix = t.mix(al, w, u)?;
        let kl = t.kl(u, mix)?;
        let diff = t.sub(r, row)?;
        let sc = t.scale(diff, 0.7)?;
        let tot = t.add(sc, q)?;
        let ones = t.leaf(&[1.0; 4])?;
        let lin = t.dot(tot, ones)?;
        let f1 = t.weighted_sum(&[(sd, 1.3), (kl, 2.0)])?;
        Ok((f1, lin))
    }

    #[test]
    fn composite_graph_matches_finite_differences_and_is_linear() {
        let mut rng = seeded(21);
        for _ in 0..10 {
            let theta: Vec<f64> = (0..16).map(|_| rng.random_range(-1.0..1.0)).collect();
            let leaf_grad = |which: usize| {
                let mut t = Tape::new();
                let (f1, f2) = composite(&mut t, &theta).unwrap();
                let root = match which {
                    0 => f1,
                    1 => f2,
                    _ => t.add(f1, f2).unwrap(),
                };
                let g = t.backward(root).unwrap();
                let mut out = g.of(NodeId(0)).to_vec();
                out.extend_from_slice(g.of(NodeId(1)));
                out
            };
            let (g1, g2, g12) = (leaf_grad(0), leaf_grad(1), leaf_grad(2));
            for i in 0..16 {
                assert_relative_eq!(g12[i], g1[i] + g2[i], epsilon = 1e-12);
            }
            let fd = finite_difference(
                |x| {
                    let mut t = Tape::new();
                    let (f1, _) = composite(&mut t, x)?;
                    Ok(t.scalar(f1))
                },
                &theta,
                1e-5,
            )
            .unwrap();
            for i in 0..16 {
                assert!(relative_error(g1[i], fd[i]) < 1e-5, "coord {i}: {} vs {}", g1[i], fd[i]);
            }
        }
    }
}
