//! Relative-attribute annotation tuples and their tab-separated file format.
//!
//! ```text
//! # speakerA <TAB> speakerB <TAB> label
//! p225	p226	Bright,Thin
//! p225	p233	Similar
//! ```
//!
//! A tuple states that speaker B exhibits the listed attributes more
//! prominently than speaker A. Annotations are one-way only.

#![allow(clippy::tabs_in_doc_comments)]

use std::fmt::Write as _;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::embedding::EmbeddingStore;
use super::vocab::{DescriptorId, DescriptorVocab, SIMILAR};
use crate::error::{Error, Result};

pub const MAX_DESCRIPTORS_PER_TUPLE: usize = 3;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Label {
    Descriptors(Vec<DescriptorId>),
    Similar,
}

impl Label {
    pub fn descriptors(&self) -> &[DescriptorId] {
        match self {
            Label::Descriptors(v) => v,
            Label::Similar => &[],
        }
    }

    pub fn is_similar(&self) -> bool {
        matches!(self, Label::Similar)
    }

    pub fn contains(&self, id: DescriptorId) -> bool {
        self.descriptors().contains(&id)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AnnotationTuple {
    pub speaker_a: String,
    pub speaker_b: String,
    pub label: Label,
}

impl AnnotationTuple {
    pub fn new(speaker_a: &str, speaker_b: &str, label: Label) -> Self {
        Self {
            speaker_a: speaker_a.to_string(),
            speaker_b: speaker_b.to_string(),
            label,
        }
    }
}

pub fn parse_annotations(path: impl AsRef<Path>, vocab: &DescriptorVocab) -> Result<Vec<AnnotationTuple>> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_annotations_str(&text, vocab, path)
}

/// Parses annotation text; `origin` is only used in error messages.
pub fn parse_annotations_str(
    text: &str,
    vocab: &DescriptorVocab,
    origin: impl Into<PathBuf>,
) -> Result<Vec<AnnotationTuple>> {
    let origin = origin.into();
    let mut out = Vec::new();
    for (idx, raw) in text.lines().enumerate() {
        let line_no = idx + 1;
        let line = raw.trim_end_matches('\r');
        let trimmed = line.trim();
        if trimmed.is_empty() || trimmed.starts_with('#') {
            continue;
        }
        let parse_err = |msg: String| Error::Parse {
            path: origin.clone(),
            line: line_no,
            msg,
        };
        let fields: Vec<&str> = line.split('\t').map(str::trim).collect();
        if fields.len() != 3 {
            return Err(parse_err(format!(
                "expected 3 tab-separated fields, found {}",
                fields.len()
            )));
        }
        let (a, b, label) = (fields[0], fields[1], fields[2]);
        if a.is_empty() || b.is_empty() || label.is_empty() {
            return Err(parse_err("empty field".into()));
        }
        if a == b {
            return Err(parse_err(format!("speaker `{a}` compared with itself")));
        }
        let label = if label.eq_ignore_ascii_case(SIMILAR) {
            Label::Similar
        } else {
            let mut ids = Vec::new();
            for token in label.split(',').map(str::trim) {
                let id = vocab.id(token).ok_or_else(|| Error::UnknownDescriptor {
                    path: origin.clone(),
                    line: line_no,
                    token: token.to_string(),
                })?;
                if ids.contains(&id) {
                    return Err(parse_err(format!("duplicate descriptor `{token}`")));
                }
                ids.push(id);
            }
            if ids.len() > MAX_DESCRIPTORS_PER_TUPLE {
                return Err(parse_err(format!(
                    "{} descriptors (at most {MAX_DESCRIPTORS_PER_TUPLE} allowed)",
                    ids.len()
                )));
            }
            Label::Descriptors(ids)
        };
        out.push(AnnotationTuple::new(a, b, label));
    }
    Ok(out)
}

pub fn format_annotations(tuples: &[AnnotationTuple], vocab: &DescriptorVocab) -> Result<String> {
    let mut s = String::new();
    for t in tuples {
        let label = match &t.label {
            Label::Similar => SIMILAR.to_string(),
            Label::Descriptors(ids) => ids
                .iter()
                .map(|&id| {
                    vocab
                        .name(id)
                        .map(str::to_string)
                        .ok_or_else(|| Error::InvalidArgument(format!("descriptor id {id} not in vocabulary")))
                })
                .collect::<Result<Vec<_>>>()?
                .join(","),
        };
        let _ = writeln!(s, "{}\t{}\t{}", t.speaker_a, t.speaker_b, label);
    }
    Ok(s)
}

pub fn write_annotations(path: impl AsRef<Path>, tuples: &[AnnotationTuple], vocab: &DescriptorVocab) -> Result<()> {
    let path = path.as_ref();
    std::fs::write(path, format_annotations(tuples, vocab)?).map_err(|e| Error::io(path, e))
}

/// Checks that every tuple references known speakers of the same gender.
pub fn validate_against_store(tuples: &[AnnotationTuple], store: &EmbeddingStore) -> Result<()> {
    for (i, t) in tuples.iter().enumerate() {
        let a = store
            .speaker(&t.speaker_a)
            .ok_or_else(|| Error::Data(format!("tuple {i}: unknown speaker `{}`", t.speaker_a)))?;
        let b = store
            .speaker(&t.speaker_b)
            .ok_or_else(|| Error::Data(format!("tuple {i}: unknown speaker `{}`", t.speaker_b)))?;
        if a.gender != b.gender {
            return Err(Error::Data(format!(
                "tuple {i}: `{}` and `{}` differ in gender",
                t.speaker_a, t.speaker_b
            )));
        }
    }
    Ok(())
}
