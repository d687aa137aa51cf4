use rand::Rng as _;

use super::annotation::AnnotationTuple;
use super::embedding::{EmbeddingStore, SpeakerRecord};
use super::vocab::DescriptorId;
use crate::error::{Error, Result};
use crate::rng::Rng;

#[derive(Debug, Clone, PartialEq)]
pub struct BatchItem {
    pub source: Vec<f64>,
    pub target: Vec<f64>,
    pub descriptor: DescriptorId,
}

/// Uniform sampler over the non-Similar tuples of a corpus.
#[derive(Debug, Clone)]
pub struct BatchSampler<'a> {
    pairs: Vec<(&'a SpeakerRecord, &'a SpeakerRecord, &'a [DescriptorId])>,
}

impl<'a> BatchSampler<'a> {
    pub fn new(store: &'a EmbeddingStore, tuples: &'a [AnnotationTuple]) -> Result<Self> {
        let mut pairs = Vec::new();
        for t in tuples {
            let ids = t.label.descriptors();
            if ids.is_empty() {
                continue;
            }
            let a = store
                .speaker(&t.speaker_a)
                .ok_or_else(|| Error::Data(format!("unknown speaker `{}`", t.speaker_a)))?;
            let b = store
                .speaker(&t.speaker_b)
                .ok_or_else(|| Error::Data(format!("unknown speaker `{}`", t.speaker_b)))?;
            pairs.push((a, b, ids));
        }
        if pairs.is_empty() {
            return Err(Error::Data("corpus has no non-Similar tuples to train on".into()));
        }
        Ok(Self { pairs })
    }

    pub fn num_pairs(&self) -> usize {
        self.pairs.len()
    }

    /// Draws tuple, then descriptor within its label, then one utterance per
    /// speaker, each uniformly and in that order.
    pub fn sample(&self, batch_size: usize, rng: &mut Rng) -> Vec<BatchItem> {
        (0..batch_size)
            .map(|_| {
                let (a, b, ids) = self.pairs[rng.random_range(0..self.pairs.len())];
                let descriptor = ids[rng.random_range(0..ids.len())];
                let ua = &a.utterances[rng.random_range(0..a.utterances.len())];
                let ub = &b.utterances[rng.random_range(0..b.utterances.len())];
                BatchItem {
                    source: ua.vec.clone(),
                    target: ub.vec.clone(),
                    descriptor,
                }
            })
            .collect()
    }
}

pub fn sample_training_batch(
    store: &EmbeddingStore,
    tuples: &[AnnotationTuple],
    batch_size: usize,
    rng: &mut Rng,
) -> Result<Vec<BatchItem>> {
    Ok(BatchSampler::new(store, tuples)?.sample(batch_size, rng))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dataset::{Gender, Label};
    use crate::rng::seeded;

    fn store() -> EmbeddingStore {
        let mut s = EmbeddingStore::new(2);
        s.insert("a", Gender::F, "u", vec![1.0, 0.0]).unwrap();
        s.insert("b", Gender::F, "u", vec![0.0, 1.0]).unwrap();
        s
    }

    #[test]
    fn single_tuple_only_outcome() {
        let s = store();
        let t = vec![
            AnnotationTuple::new("a", "b", Label::Descriptors(vec![0])),
            AnnotationTuple::new("b", "a", Label::Similar),
        ];
        let batch = sample_training_batch(&s, &t, 16, &mut seeded(1)).unwrap();
        for item in batch {
            assert_eq!(item.source, vec![1.0, 0.0]);
            assert_eq!(item.target, vec![0.0, 1.0]);
            assert_eq!(item.descriptor, 0);
        }
    }

    #[test]
    fn descriptor_choice_is_uniform() {
        let s = store();
        let t = vec![AnnotationTuple::new("a", "b", Label::Descriptors(vec![0, 1]))];
        let sampler = BatchSampler::new(&s, &t).unwrap();
        let n = 100_000;
        let batch = sampler.sample(n, &mut seeded(9));
        let zeros = batch.iter().filter(|i| i.descriptor == 0).count();
        let freq = zeros as f64 / n as f64;
        assert!((freq - 0.5).abs() < 0.01, "{freq}");
    }

    #[test]
    fn deterministic_and_rejects_all_similar() {
        let s = store();
        let t = vec![AnnotationTuple::new("a", "b", Label::Descriptors(vec![0, 1]))];
        let x = sample_training_batch(&s, &t, 8, &mut seeded(5)).unwrap();
        let y = sample_training_batch(&s, &t, 8, &mut seeded(5)).unwrap();
        assert_eq!(x, y);
        let sim = vec![AnnotationTuple::new("a", "b", Label::Similar)];
        assert!(sample_training_batch(&s, &sim, 8, &mut seeded(5)).is_err());
    }
}
