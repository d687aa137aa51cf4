//! Synthetic corpora with planted attribute directions.
//!
//! Every speaker embedding is `base + Σ_x a[s][x]·g_x + noise`, where the
//! `g_x` are orthonormal and `base` is orthogonal to all of them. For each
//! ordered same-gender pair `(A, B)` the label lists the descriptors whose
//! coefficient grows by more than `threshold` from A to B (largest first, at
//! most three), or `Similar` when none does.

use rand_distr::{Distribution, StandardNormal, Uniform};
use serde::{Deserialize, Serialize};

use super::annotation::{AnnotationTuple, Label, MAX_DESCRIPTORS_PER_TUPLE};
use super::embedding::{EmbeddingStore, Gender};
use super::vocab::{DescriptorVocab, DEFAULT_DESCRIPTORS};
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, norm};
use crate::rng;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SyntheticSpec {
    pub num_speakers_per_gender: usize,
    pub num_descriptors: usize,
    pub dim: usize,
    pub utterances_per_speaker: usize,
    pub noise_scale: f64,
    pub threshold: f64,
    pub seed: u64,
    /// Coefficients are drawn uniformly from `[-coefficient_range, coefficient_range]`.
    /// Defaults keep attribute offsets large next to the shared base, as in
    /// real speaker embeddings, so reconstruction dominates the alignment
    /// term early in training.
    pub coefficient_range: f64,
    pub base_norm: f64,
}

impl Default for SyntheticSpec {
    fn default() -> Self {
        Self {
            num_speakers_per_gender: 20,
            num_descriptors: 6,
            dim: 32,
            utterances_per_speaker: 4,
            noise_scale: 0.05,
            threshold: 7.0,
            seed: 0,
            coefficient_range: 5.0,
            base_norm: 5.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticGroundTruth {
    pub descriptors: Vec<String>,
    /// `directions[x]` is the unit vector planted for descriptor `x`.
    pub directions: Vec<Vec<f64>>,
    /// Speaker id → coefficient per descriptor.
    pub coefficients: Vec<(String, Vec<f64>)>,
    pub base: Vec<f64>,
    pub noise_scale: f64,
    pub threshold: f64,
}

impl SyntheticGroundTruth {
    pub fn coefficients_of(&self, speaker: &str) -> Option<&[f64]> {
        self.coefficients
            .iter()
            .find(|(s, _)| s == speaker)
            .map(|(_, c)| c.as_slice())
    }

    pub fn vocab(&self) -> Result<DescriptorVocab> {
        DescriptorVocab::new(&self.descriptors)
    }
}

#[derive(Debug, Clone)]
pub struct SyntheticCorpus {
    pub vocab: DescriptorVocab,
    pub store: EmbeddingStore,
    pub tuples: Vec<AnnotationTuple>,
    pub truth: SyntheticGroundTruth,
}

/// Vocabulary used for a synthetic corpus of `v` descriptors.
pub fn synthetic_vocab(v: usize) -> Result<DescriptorVocab> {
    if v <= DEFAULT_DESCRIPTORS.len() {
        DescriptorVocab::new(&DEFAULT_DESCRIPTORS[..v])
    } else {
        let names: Vec<String> = (0..v).map(|i| format!("Attr{i}")).collect();
        DescriptorVocab::new(&names)
    }
}

/// The labelling rule applied to one ordered pair.
pub fn label_from_coefficients(a: &[f64], b: &[f64], threshold: f64) -> Label {
    let mut up: Vec<(usize, f64)> = a
        .iter()
        .zip(b)
        .map(|(ca, cb)| cb - ca)
        .enumerate()
        .filter(|&(_, d)| d > threshold)
        .collect();
    if up.is_empty() {
        return Label::Similar;
    }
    // Largest increase first; ties keep vocabulary order.
    up.sort_by(|l, r| r.1.total_cmp(&l.1).then(l.0.cmp(&r.0)));
    up.truncate(MAX_DESCRIPTORS_PER_TUPLE);
    Label::Descriptors(up.into_iter().map(|(x, _)| x).collect())
}

pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<SyntheticCorpus> {
    let (v, d) = (spec.num_descriptors, spec.dim);
    if v == 0 || d < v {
        return Err(Error::InvalidArgument(format!(
            "synthetic corpus needs 1 <= V <= D (V={v}, D={d})"
        )));
    }
    if spec.num_speakers_per_gender < 2 || spec.utterances_per_speaker == 0 {
        return Err(Error::InvalidArgument(
            "need at least 2 speakers per gender and 1 utterance per speaker".into(),
        ));
    }
    if !(spec.noise_scale >= 0.0) || !(spec.threshold >= 0.0) || !(spec.coefficient_range > 0.0) {
        return Err(Error::InvalidArgument(
            "noise_scale and threshold must be >= 0, coefficient_range > 0".into(),
        ));
    }

    let mut rng = rng::seeded(spec.seed);
    let gaussian = |rng: &mut rng::Rng| -> Vec<f64> { (0..d).map(|_| StandardNormal.sample(rng)).collect() };

    // When D == V the base has no room outside the attribute span and stays zero.
    let mut basis: Vec<Vec<f64>> = Vec::with_capacity(v + 1);
    while basis.len() < v {
        let mut g = gaussian(&mut rng);
        if let Some(unit) = orthonormalize(&mut g, &basis) {
            basis.push(unit);
        }
    }
    let mut base = vec![0.0; d];
    if d > v {
        loop {
            let mut b = gaussian(&mut rng);
            if let Some(unit) = orthonormalize(&mut b, &basis) {
                base = unit.into_iter().map(|x| x * spec.base_norm).collect();
                break;
            }
        }
    }

    let vocab = synthetic_vocab(v)?;
    let coef = Uniform::new_inclusive(-spec.coefficient_range, spec.coefficient_range)
        .map_err(|e| Error::InvalidArgument(e.to_string()))?;
    let mut store = EmbeddingStore::new(d);
    let mut coefficients = Vec::new();
    for gender in Gender::ALL {
        let prefix = match gender {
            Gender::F => "f",
            Gender::M => "m",
        };
        for s in 0..spec.num_speakers_per_gender {
            let id = format!("{prefix}{s:03}");
            let a: Vec<f64> = (0..v).map(|_| coef.sample(&mut rng)).collect();
            let mut clean = base.clone();
            for (g, &ax) in basis.iter().zip(&a) {
                axpy(ax, g, &mut clean);
            }
            for u in 0..spec.utterances_per_speaker {
                let mut e = clean.clone();
                if spec.noise_scale > 0.0 {
                    let n = gaussian(&mut rng);
                    axpy(spec.noise_scale, &n, &mut e);
                }
                store.insert(&id, gender, &format!("{id}_u{u:02}"), e)?;
            }
            coefficients.push((id, a));
        }
    }

    let mut tuples = Vec::new();
    for gender in Gender::ALL {
        let group: Vec<&(String, Vec<f64>)> = coefficients
            .iter()
            .filter(|(id, _)| store.speaker(id).is_some_and(|r| r.gender == gender))
            .collect();
        for (sa, ca) in &group {
            for (sb, cb) in &group {
                if sa == sb {
                    continue;
                }
                tuples.push(AnnotationTuple::new(
                    sa,
                    sb,
                    label_from_coefficients(ca, cb, spec.threshold),
                ));
            }
        }
    }

    let truth = SyntheticGroundTruth {
        descriptors: vocab.names().to_vec(),
        directions: basis,
        coefficients,
        base,
        noise_scale: spec.noise_scale,
        threshold: spec.threshold,
    };
    Ok(SyntheticCorpus {
        vocab,
        store,
        tuples,
        truth,
    })
}

/// Gram–Schmidt step: removes the components of `v` along `basis` (twice, for
/// stability) and normalizes. Returns `None` for a numerically dependent `v`.
fn orthonormalize(v: &mut [f64], basis: &[Vec<f64>]) -> Option<Vec<f64>> {
    for _ in 0..2 {
        for b in basis {
            let c = dot(v, b);
            axpy(-c, b, v);
        }
    }
    let n = norm(v);
    (n > 1e-6).then(|| v.iter().map(|x| x / n).collect())
}
