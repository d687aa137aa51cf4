use std::fmt;

use serde::Serialize;

use super::annotation::{AnnotationTuple, Label, MAX_DESCRIPTORS_PER_TUPLE};
use super::vocab::DescriptorVocab;
use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct DescriptorFrequency {
    pub descriptor: String,
    pub count: usize,
    /// Share of all descriptor occurrences, in percent.
    pub percent: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct StatsReport {
    pub tuple_count: usize,
    pub similar_count: usize,
    pub descriptor_occurrences: usize,
    /// In vocabulary order.
    pub frequencies: Vec<DescriptorFrequency>,
    /// Percentage of non-Similar tuples carrying 1, 2 and 3 descriptors.
    pub arity_percent: [f64; MAX_DESCRIPTORS_PER_TUPLE],
    pub similar_percent: f64,
}

impl StatsReport {
    pub fn frequency(&self, descriptor: &str) -> Option<f64> {
        self.frequencies
            .iter()
            .find(|f| f.descriptor.eq_ignore_ascii_case(descriptor))
            .map(|f| f.percent)
    }
}

pub fn dataset_stats(tuples: &[AnnotationTuple], vocab: &DescriptorVocab) -> Result<StatsReport> {
    if tuples.is_empty() {
        return Err(Error::Data("no annotation tuples".into()));
    }
    let mut counts = vec![0usize; vocab.len()];
    let mut arity = [0usize; MAX_DESCRIPTORS_PER_TUPLE];
    let mut similar = 0usize;
    for t in tuples {
        match &t.label {
            Label::Similar => similar += 1,
            Label::Descriptors(ids) => {
                for &id in ids {
                    vocab.check(id)?;
                    counts[id] += 1;
                }
                if (1..=MAX_DESCRIPTORS_PER_TUPLE).contains(&ids.len()) {
                    arity[ids.len() - 1] += 1;
                }
            }
        }
    }
    let occurrences: usize = counts.iter().sum();
    let pct = |n: usize, d: usize| if d == 0 { 0.0 } else { 100.0 * n as f64 / d as f64 };
    let non_similar = tuples.len() - similar;
    Ok(StatsReport {
        tuple_count: tuples.len(),
        similar_count: similar,
        descriptor_occurrences: occurrences,
        frequencies: counts
            .iter()
            .enumerate()
            .map(|(id, &count)| DescriptorFrequency {
                descriptor: vocab.name(id).unwrap_or_default().to_string(),
                count,
                percent: pct(count, occurrences),
            })
            .collect(),
        arity_percent: arity.map(|n| pct(n, non_similar)),
        similar_percent: pct(similar, tuples.len()),
    })
}

impl fmt::Display for StatsReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        writeln!(f, "tuples: {}", self.tuple_count)?;
        writeln!(f, "similar: {} ({:.2}%)", self.similar_count, self.similar_percent)?;
        writeln!(
            f,
            "descriptors per tuple (1/2/3): {:.2}% / {:.2}% / {:.2}%",
            self.arity_percent[0], self.arity_percent[1], self.arity_percent[2]
        )?;
        writeln!(f, "descriptor occurrences: {}", self.descriptor_occurrences)?;
        for fr in &self.frequencies {
            writeln!(f, "  {:<12} {:>6} {:>6.2}%", fr.descriptor, fr.count, fr.percent)?;
        }
        Ok(())
    }
}
