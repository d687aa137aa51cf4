//! Lexical descriptor extraction.
//!
//! Tokens are scanned in prompt order. A token matches a descriptor when it
//! equals one (`exact`), or when an inflected form reduces to one or to a
//! listed synonym (`lexical-nearest`). Only when nothing matches does the
//! edit-distance fallback run over the remaining content words.

use serde::{Deserialize, Serialize};

use crate::dataset::{DescriptorId, DescriptorVocab};
use crate::error::{Error, Result};

/// Largest normalized edit distance accepted by the fallback (exclusive).
pub const NEAREST_THRESHOLD: f64 = 0.4;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Provenance {
    Exact,
    LexicalNearest,
    Llm,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MatchedDescriptor {
    pub id: DescriptorId,
    pub name: String,
    pub provenance: Provenance,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExtractionResult {
    pub prompt: String,
    pub descriptors: Vec<MatchedDescriptor>,
}

impl ExtractionResult {
    pub fn names(&self) -> Vec<&str> {
        self.descriptors.iter().map(|m| m.name.as_str()).collect()
    }
}

/// Word → descriptor it stands for.
const SYNONYMS: &[(&str, &str)] = &[
    ("deep", "Low"),
    ("bass", "Low"),
    ("delicate", "Slim"),
    ("slender", "Slim"),
    ("raspy", "Hoarse"),
    ("croaky", "Hoarse"),
    ("rough", "Coarse"),
    ("gravelly", "Coarse"),
    ("clear", "Pure"),
    ("clean", "Pure"),
    ("warm", "Rich"),
    ("full", "Rich"),
    ("resonant", "Rich"),
    ("piercing", "Shrill"),
    ("gentle", "Soft"),
    ("mellow", "Round"),
    ("muted", "Muffled"),
    ("dull", "Muffled"),
    ("breathy", "Husky"),
    ("monotone", "Flat"),
    ("brilliant", "Bright"),
    ("wrinkled", "Shriveled"),
    ("shrivelled", "Shriveled"),
];

/// Words never considered by the edit-distance fallback.
const STOPWORDS: &[&str] = &[
    "a", "an", "and", "the", "to", "be", "is", "it", "this", "that", "of", "at", "as", "in", "on", "for", "with", "i",
    "id", "d", "me", "my", "we", "you", "want", "would", "like", "make", "more", "less", "much", "bit", "little",
    "touch", "add", "same", "time", "become", "sound", "sounds", "voice", "voices", "speaker", "please", "can",
    "could", "achieve", "give", "turn", "into", "have", "has", "hope", "some", "very", "quite", "also", "but", "or",
    "so", "too", "its", "pitch", "timbre", "quality", "tone",
];

fn tokenize(prompt: &str) -> Vec<String> {
    prompt
        .split(|c: char| !c.is_alphabetic())
        .filter(|w| !w.is_empty())
        .map(str::to_lowercase)
        .collect()
}

/// Candidate base forms of an inflected word, most specific first.
fn base_forms(word: &str) -> Vec<String> {
    let mut out = Vec::new();
    let mut push = |s: String| {
        if s.len() >= 3 && s != word && !out.contains(&s) {
            out.push(s);
        }
    };
    if let Some(stem) = word.strip_suffix("iness") {
        push(format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("ier") {
        push(format!("{stem}y"));
    }
    if let Some(stem) = word.strip_suffix("iest") {
        push(format!("{stem}y"));
    }
    for suffix in ["ness", "est", "er", "ly", "st", "r"] {
        if let Some(stem) = word.strip_suffix(suffix) {
            push(stem.to_string());
            let b = stem.as_bytes();
            if b.len() >= 2 && b[b.len() - 1] == b[b.len() - 2] {
                push(stem[..stem.len() - 1].to_string());
            }
        }
    }
    out
}

fn synonym(word: &str, vocab: &DescriptorVocab) -> Option<DescriptorId> {
    SYNONYMS.iter().find(|(w, _)| *w == word).and_then(|(_, d)| vocab.id(d))
}

/// Descriptor for `word` through exact match, inflection or synonym.
pub(crate) fn match_word(word: &str, vocab: &DescriptorVocab) -> Option<(DescriptorId, Provenance)> {
    if let Some(id) = vocab.id(word) {
        return Some((id, Provenance::Exact));
    }
    if let Some(id) = synonym(word, vocab) {
        return Some((id, Provenance::LexicalNearest));
    }
    base_forms(word)
        .iter()
        .find_map(|b| vocab.id(b).or_else(|| synonym(b, vocab)))
        .map(|id| (id, Provenance::LexicalNearest))
}

fn nearest(word: &str, vocab: &DescriptorVocab) -> Option<(DescriptorId, f64)> {
    vocab
        .names()
        .iter()
        .enumerate()
        .map(|(id, name)| (id, 1.0 - strsim::normalized_levenshtein(word, &name.to_lowercase())))
        .filter(|(_, d)| *d < NEAREST_THRESHOLD)
        .min_by(|a, b| a.1.total_cmp(&b.1))
}

fn push_unique(out: &mut Vec<MatchedDescriptor>, vocab: &DescriptorVocab, id: DescriptorId, p: Provenance) {
    if out.iter().all(|m| m.id != id) {
        out.push(MatchedDescriptor {
            id,
            name: vocab.name(id).unwrap_or_default().to_string(),
            provenance: p,
        });
    }
}

pub fn extract_lexical(prompt: &str, vocab: &DescriptorVocab) -> Result<ExtractionResult> {
    if prompt.trim().is_empty() {
        return Err(Error::InvalidArgument("prompt is empty".into()));
    }
    let tokens = tokenize(prompt);
    let mut found = Vec::new();
    for tok in &tokens {
        if let Some((id, p)) = match_word(tok, vocab) {
            push_unique(&mut found, vocab, id, p);
        }
    }
    if found.is_empty() {
        for tok in tokens
            .iter()
            .filter(|t| t.len() >= 3 && !STOPWORDS.contains(&t.as_str()))
        {
            if let Some((id, _)) = nearest(tok, vocab) {
                push_unique(&mut found, vocab, id, Provenance::LexicalNearest);
            }
        }
    }
    if found.is_empty() {
        return Err(Error::NoAttributeFound(prompt.to_string()));
    }
    Ok(ExtractionResult {
        prompt: prompt.to_string(),
        descriptors: found,
    })
}
