//! Residual memory block: slot memories that quantize the shared text/voice
//! embedding space, plus the descriptor encoder that feeds it.
//!
//! A readout scores a query against every slot with (guarded) cosine
//! similarity, normalizes the scores across slots with a softmax at scale
//! `tau`, and returns the weight vector together with the weighted sum of the
//! value slots. Speaker queries read the main and residual voice-value
//! memories; descriptor queries are keyed by the descriptor-key memory but
//! recall main voice-value slots.

use rand_distr::{Distribution, Uniform};
use serde::{Deserialize, Serialize};

use crate::dataset::DescriptorId;
use crate::error::{Error, Result};
use crate::linalg::{self, cosine, scaled_softmax, Matrix};
use crate::rng::Rng;

/// Queries with a norm at or below this are rejected.
pub const QUERY_EPS: f64 = 1e-8;
/// Minimum slot norm tolerated after initialization and every update.
pub const SLOT_EPS: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ResMemParams {
    /// Main voice-value slots, `M × D`.
    pub main: Matrix,
    /// Residual voice-value slots, `N × D`.
    pub residual: Matrix,
    /// Descriptor-key slots, `M × D`.
    pub keys: Matrix,
    /// Softmax scale applied to cosine similarities.
    pub tau: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DescriptorEncoderParams {
    /// Embedding table, `V × D`.
    pub table: Matrix,
    /// `D × D`.
    pub weight: Matrix,
    /// `1 × D`.
    pub bias: Matrix,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Readout {
    pub weights: Vec<f64>,
    pub recalled: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SpeakerRecall {
    pub main: Readout,
    pub residual: Readout,
    /// `main.recalled + residual.recalled`
    pub recalled: Vec<f64>,
}

impl ResMemParams {
    pub fn dim(&self) -> usize {
        self.main.cols
    }

    pub fn num_main(&self) -> usize {
        self.main.rows
    }

    pub fn num_residual(&self) -> usize {
        self.residual.rows
    }

    /// Fails if any slot has collapsed to (near) zero norm.
    pub fn check_slots(&self) -> Result<()> {
        for (name, m) in [("main", &self.main), ("residual", &self.residual), ("key", &self.keys)] {
            let n = m.min_row_norm();
            if !(n > SLOT_EPS) {
                return Err(Error::Numerical(format!("{name} memory has a slot with norm {n:e}")));
            }
        }
        Ok(())
    }

    pub fn validate(&self) -> Result<()> {
        let d = self.dim();
        if self.main.rows == 0 || self.residual.rows == 0 {
            return Err(Error::InvalidArgument("memories need at least one slot".into()));
        }
        if self.keys.rows != self.main.rows {
            return Err(Error::dim(self.main.rows, self.keys.rows, "key slot count"));
        }
        for m in [&self.residual, &self.keys] {
            if m.cols != d {
                return Err(Error::dim(d, m.cols, "slot width"));
            }
        }
        if !(self.tau > 0.0) {
            return Err(Error::InvalidArgument(format!(
                "tau must be positive, got {}",
                self.tau
            )));
        }
        self.check_slots()
    }
}

impl DescriptorEncoderParams {
    pub fn vocab_size(&self) -> usize {
        self.table.rows
    }

    pub fn dim(&self) -> usize {
        self.table.cols
    }
}

pub(crate) fn uniform_matrix(rows: usize, cols: usize, bound: f64, rng: &mut Rng) -> Matrix {
    let dist = Uniform::new_inclusive(-bound, bound).expect("finite bound");
    Matrix {
        rows,
        cols,
        data: (0..rows * cols).map(|_| dist.sample(rng)).collect(),
    }
}

/// Entries uniform on `[-1/√D, 1/√D]`, biases zero, `tau = 1`.
pub fn init_params(
    m: usize,
    n: usize,
    d: usize,
    v: usize,
    rng: &mut Rng,
) -> Result<(ResMemParams, DescriptorEncoderParams)> {
    if m == 0 || n == 0 || d == 0 || v == 0 {
        return Err(Error::InvalidArgument(format!(
            "M, N, D, V must be >= 1 (got {m}, {n}, {d}, {v})"
        )));
    }
    let bound = 1.0 / (d as f64).sqrt();
    let mem = ResMemParams {
        main: uniform_matrix(m, d, bound, rng),
        residual: uniform_matrix(n, d, bound, rng),
        keys: uniform_matrix(m, d, bound, rng),
        tau: 1.0,
    };
    let enc = DescriptorEncoderParams {
        table: uniform_matrix(v, d, bound, rng),
        weight: uniform_matrix(d, d, bound, rng),
        bias: Matrix::zeros(1, d),
    };
    mem.check_slots()?;
    Ok((mem, enc))
}

/// `t = ReLU(W · table[x] + b)`
pub fn encode_descriptor(enc: &DescriptorEncoderParams, x: DescriptorId) -> Result<Vec<f64>> {
    if x >= enc.vocab_size() {
        return Err(Error::InvalidArgument(format!(
            "descriptor id {x} out of range (vocabulary size {})",
            enc.vocab_size()
        )));
    }
    let mut t = enc.weight.matvec(enc.table.row(x));
    for (ti, bi) in t.iter_mut().zip(&enc.bias.data) {
        *ti = (*ti + bi).max(0.0);
    }
    Ok(t)
}

fn check_query(q: &[f64], dim: usize) -> Result<()> {
    if q.len() != dim {
        return Err(Error::dim(dim, q.len(), "readout query"));
    }
    if !(linalg::norm(q) > QUERY_EPS) {
        return Err(Error::ZeroNorm);
    }
    Ok(())
}

/// Softmax-normalized cosine weights of `q` against the rows of `keys`.
pub fn slot_weights(keys: &Matrix, q: &[f64], tau: f64) -> Vec<f64> {
    let sims: Vec<f64> = keys.rows_iter().map(|k| cosine(q, k)).collect();
    scaled_softmax(&sims, tau)
}

fn readout(keys: &Matrix, values: &Matrix, q: &[f64], tau: f64) -> Result<Readout> {
    check_query(q, keys.cols)?;
    let weights = slot_weights(keys, q, tau);
    let recalled = values.weighted_row_sum(&weights);
    Ok(Readout { weights, recalled })
}

pub fn readout_main(p: &ResMemParams, s: &[f64]) -> Result<Readout> {
    readout(&p.main, &p.main, s, p.tau)
}

pub fn readout_residual(p: &ResMemParams, s: &[f64]) -> Result<Readout> {
    readout(&p.residual, &p.residual, s, p.tau)
}

pub fn recall_speaker(p: &ResMemParams, s: &[f64]) -> Result<SpeakerRecall> {
    let main = readout_main(p, s)?;
    let residual = readout_residual(p, s)?;
    let recalled = linalg::add(&main.recalled, &residual.recalled);
    Ok(SpeakerRecall {
        main,
        residual,
        recalled,
    })
}

/// Keys from the descriptor-key memory, values from the main voice memory.
pub fn readout_descriptor(p: &ResMemParams, t: &[f64]) -> Result<Readout> {
    readout(&p.keys, &p.main, t, p.tau)
}
