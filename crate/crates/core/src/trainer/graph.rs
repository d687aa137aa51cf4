//! Per-item training graphs and their batch reduction.

use super::config::{AblationMode, TrainConfig};
use super::loss::LossBreakdown;
use super::model::ModelParams;
use crate::autodiff::{NodeId, Tape, KL_CLAMP};
use crate::dataset::BatchItem;
use crate::error::{Error, Result};
use crate::par::Executor;

struct Leaves {
    blocks: [NodeId; 12],
}

impl Leaves {
    fn register(tape: &mut Tape, p: &ModelParams) -> Result<Self> {
        let mut ids = Vec::with_capacity(12);
        for m in p.blocks() {
            ids.push(tape.matrix(m)?);
        }
        Ok(Self {
            blocks: ids.try_into().expect("twelve blocks"),
        })
    }
    fn main(&self) -> NodeId {
        self.blocks[0]
    }
    fn residual(&self) -> NodeId {
        self.blocks[1]
    }
    fn keys(&self) -> NodeId {
        self.blocks[2]
    }
}

/// A weighted scalar contribution to the item total, kept in a form that can
/// be expanded into per-coordinate pieces.
#[derive(Clone, Copy)]
enum Term {
    /// `w·‖a − b‖²`
    Dist(NodeId, NodeId, f64),
    /// `w·KL(p ‖ q)`
    Kl(NodeId, NodeId, f64),
}

impl Term {
    fn expand(self, tape: &Tape, scale: f64, out: &mut Vec<(f64, f64)>) {
        match self {
            Term::Dist(a, b, w) => {
                for (x, y) in tape.value(a).iter().zip(tape.value(b)) {
                    out.push((w * scale, (x - y) * (x - y)));
                }
            }
            Term::Kl(p, q, w) => {
                for (&pi, &qi) in tape.value(p).iter().zip(tape.value(q)) {
                    out.push((w * scale, pi * pi.max(KL_CLAMP).ln()));
                    out.push((-w * scale, pi * qi.max(KL_CLAMP).ln()));
                }
            }
        }
    }
}

struct ItemNodes {
    rec: NodeId,
    align: Option<NodeId>,
    total: NodeId,
    /// `total = Σ terms`
    terms: Vec<Term>,
}

/// `(s, ŝ)` and `(s, ŝ_m)` pairs for one speaker embedding, plus the
/// main-memory slot weights.
fn speaker_recall(
    tape: &mut Tape,
    leaves: &Leaves,
    s: NodeId,
    tau: f64,
    mode: AblationMode,
) -> Result<(Vec<NodeId>, NodeId)> {
    let cos_main = tape.slot_cosine(leaves.main(), s)?;
    let w_main = tape.softmax(cos_main, tau)?;
    let recalled_main = tape.slot_sum(leaves.main(), w_main)?;
    if mode == AblationMode::NoVoiceRes {
        return Ok((vec![recalled_main], w_main));
    }
    let cos_res = tape.slot_cosine(leaves.residual(), s)?;
    let w_res = tape.softmax(cos_res, tau)?;
    let recalled_res = tape.slot_sum(leaves.residual(), w_res)?;
    let recalled = tape.add(recalled_main, recalled_res)?;
    Ok((vec![recalled, recalled_main], w_main))
}

fn build_item(tape: &mut Tape, p: &ModelParams, item: &BatchItem, eps: f64, cfg: &TrainConfig) -> Result<ItemNodes> {
    let leaves = Leaves::register(tape, p)?;
    let [_, _, _, table, weight, bias, h_w, h_b, mu_w, mu_b, lv_w, lv_b] = leaves.blocks;
    let tau = p.memory.tau;
    let s_a = tape.leaf(&item.source)?;
    let s_b = tape.leaf(&item.target)?;

    let row = tape.row(table, item.descriptor)?;
    let pre = tape.matvec(weight, row)?;
    let pre = tape.add(pre, bias)?;
    let t = tape.relu(pre)?;

    if cfg.mode == AblationMode::NoResmem {
        // Direct-offset baseline: ‖(s_A + t) − s_B‖².
        let shifted = tape.add(s_a, t)?;
        let rec = tape.sq_dist(shifted, s_b)?;
        let total = tape.scale(rec, cfg.lambda_rec)?;
        return Ok(ItemNodes {
            rec,
            align: None,
            total,
            terms: vec![Term::Dist(shifted, s_b, cfg.lambda_rec)],
        });
    }

    let (recalls_a, w_a) = speaker_recall(tape, &leaves, s_a, tau, cfg.mode)?;
    let (recalls_b, w_b) = speaker_recall(tape, &leaves, s_b, tau, cfg.mode)?;
    let mut terms = Vec::new();
    let mut rec_parts = Vec::new();
    // L_rec averaged over the two speakers.
    for (s, recalls) in [(s_a, &recalls_a), (s_b, &recalls_b)] {
        for &r in recalls {
            rec_parts.push((tape.sq_dist(s, r)?, 0.5));
            terms.push(Term::Dist(s, r, 0.5 * cfg.lambda_rec));
        }
    }
    let rec = tape.weighted_sum(&rec_parts)?;

    let cos_t = tape.slot_cosine(leaves.keys(), t)?;
    let w_t = tape.softmax(cos_t, tau)?;

    let mixture = if cfg.mode == AblationMode::NoVadp {
        tape.weighted_sum(&[(w_t, 0.5), (w_a, 0.5)])?
    } else {
        let features = tape.concat(&[s_a, s_b, t])?;
        let hidden = tape.matvec(h_w, features)?;
        let hidden = tape.add(hidden, h_b)?;
        let hidden = tape.relu(hidden)?;
        let mu = tape.dot(mu_w, hidden)?;
        let mu = tape.add(mu, mu_b)?;
        let log_var = tape.dot(lv_w, hidden)?;
        let log_var = tape.add(log_var, lv_b)?;
        let sigma = tape.exp(log_var, 0.5)?;
        let eps_node = tape.leaf(&[eps])?;
        let noise = tape.mul(sigma, eps_node)?;
        let logit = tape.add(mu, noise)?;
        let alpha = tape.sigmoid(logit)?;
        tape.mix(alpha, w_t, w_a)?
    };
    let align = tape.kl(w_b, mixture)?;
    terms.push(Term::Kl(w_b, mixture, cfg.lambda_align));
    let total = tape.weighted_sum(&[(rec, cfg.lambda_rec), (align, cfg.lambda_align)])?;
    Ok(ItemNodes {
        rec,
        align: Some(align),
        total,
        terms,
    })
}

struct ItemResult {
    rec: f64,
    align: f64,
    grads: Vec<Vec<f64>>,
}

fn item_forward(p: &ModelParams, item: &BatchItem, eps: f64, cfg: &TrainConfig) -> Result<(f64, f64)> {
    let mut tape = Tape::new();
    let n = build_item(&mut tape, p, item, eps, cfg)?;
    Ok((tape.scalar(n.rec), n.align.map_or(0.0, |a| tape.scalar(a))))
}

fn item_backward(p: &ModelParams, item: &BatchItem, eps: f64, cfg: &TrainConfig) -> Result<ItemResult> {
    let mut tape = Tape::new();
    let n = build_item(&mut tape, p, item, eps, cfg)?;
    let mut g = tape.backward(n.total)?;
    // Leaves are the first twelve nodes, in block order.
    let grads = (0..12).map(|i| g.take(NodeId(i))).collect();
    Ok(ItemResult {
        rec: tape.scalar(n.rec),
        align: n.align.map_or(0.0, |a| tape.scalar(a)),
        grads,
    })
}

fn check_batch(p: &ModelParams, batch: &[BatchItem], eps: &[f64]) -> Result<()> {
    if batch.is_empty() || batch.len() != eps.len() {
        return Err(Error::InvalidArgument(format!(
            "batch of {} items with {} noise draws",
            batch.len(),
            eps.len()
        )));
    }
    let d = p.memory.dim();
    for it in batch {
        if it.source.len() != d || it.target.len() != d {
            return Err(Error::dim(d, it.source.len().max(it.target.len()), "batch embedding"));
        }
    }
    Ok(())
}

fn finish(rec_sum: f64, align_sum: f64, n: usize, cfg: &TrainConfig) -> Result<LossBreakdown> {
    let b = n as f64;
    let out = LossBreakdown::combine(rec_sum / b, align_sum / b, cfg.lambda_rec, cfg.lambda_align);
    if !out.total.is_finite() {
        return Err(Error::Numerical(format!("non-finite loss {out:?}")));
    }
    Ok(out)
}

/// Batch-averaged losses only (used by the finite-difference oracle).
pub fn batch_loss(p: &ModelParams, batch: &[BatchItem], eps: &[f64], cfg: &TrainConfig) -> Result<LossBreakdown> {
    check_batch(p, batch, eps)?;
    let (mut rec, mut align) = (0.0, 0.0);
    for (item, &e) in batch.iter().zip(eps) {
        let (r, a) = item_forward(p, item, e, cfg)?;
        rec += r;
        align += a;
    }
    finish(rec, align, batch.len(), cfg)
}

/// The batch total split into weighted per-coordinate pieces `(w, v)` with
/// `total = Σ w·v`. Differencing piece by piece keeps finite differences
/// free of cancellation against pieces a coordinate does not affect.
pub fn batch_loss_terms(
    p: &ModelParams,
    batch: &[BatchItem],
    eps: &[f64],
    cfg: &TrainConfig,
) -> Result<Vec<(f64, f64)>> {
    check_batch(p, batch, eps)?;
    let scale = 1.0 / batch.len() as f64;
    let mut out = Vec::new();
    for (item, &e) in batch.iter().zip(eps) {
        let mut tape = Tape::new();
        let n = build_item(&mut tape, p, item, e, cfg)?;
        for term in n.terms {
            term.expand(&tape, scale, &mut out);
        }
    }
    Ok(out)
}

/// Batch-averaged losses and gradients per parameter block. Items may be
/// evaluated concurrently; the reduction always runs in batch order.
pub fn batch_loss_and_grad(
    p: &ModelParams,
    batch: &[BatchItem],
    eps: &[f64],
    cfg: &TrainConfig,
    exec: &Executor,
) -> Result<(LossBreakdown, Vec<Vec<f64>>)> {
    check_batch(p, batch, eps)?;
    let work: Vec<(&BatchItem, f64)> = batch.iter().zip(eps.iter().copied()).collect();
    let results = exec.map(&work, |(item, e)| item_backward(p, item, *e, cfg));
    let mut grads: Vec<Vec<f64>> = p.blocks().iter().map(|m| vec![0.0; m.data.len()]).collect();
    let (mut rec, mut align) = (0.0, 0.0);
    let scale = 1.0 / batch.len() as f64;
    for r in results {
        let r = r?;
        rec += r.rec;
        align += r.align;
        for (acc, g) in grads.iter_mut().zip(&r.grads) {
            for (a, x) in acc.iter_mut().zip(g) {
                *a += scale * x;
            }
        }
    }
    Ok((finish(rec, align, batch.len(), cfg)?, grads))
}
