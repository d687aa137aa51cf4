//! Speaker embeddings in JSON Lines form, one utterance per line:
//!
//! ```text
//! {"speaker":"p225","gender":"F","utt":"p225_001","dim":4,"vec":[1.0,0.0,0.0,0.0]}
//! ```

use std::collections::BTreeMap;
use std::fmt;
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::linalg;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Gender {
    F,
    M,
}

impl Gender {
    pub const ALL: [Gender; 2] = [Gender::F, Gender::M];
}

impl fmt::Display for Gender {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Gender::F => "F",
            Gender::M => "M",
        })
    }
}

impl FromStr for Gender {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "F" | "f" => Ok(Gender::F),
            "M" | "m" => Ok(Gender::M),
            other => Err(Error::Data(format!("gender must be F or M, got `{other}`"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Utterance {
    pub id: String,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SpeakerRecord {
    pub speaker_id: String,
    pub gender: Gender,
    pub utterances: Vec<Utterance>,
}

impl SpeakerRecord {
    /// Mean over all utterance embeddings.
    pub fn mean_embedding(&self) -> Vec<f64> {
        let vs: Vec<&[f64]> = self.utterances.iter().map(|u| u.vec.as_slice()).collect();
        linalg::mean_of(&vs)
    }
}

/// One JSON Lines record. Extra keys (e.g. edit provenance) are ignored on read.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EmbeddingLine {
    pub speaker: String,
    pub gender: Gender,
    pub utt: String,
    pub dim: usize,
    pub vec: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct EmbeddingStore {
    dim: usize,
    speakers: BTreeMap<String, SpeakerRecord>,
}

impl EmbeddingStore {
    pub fn new(dim: usize) -> Self {
        Self {
            dim,
            speakers: BTreeMap::new(),
        }
    }

    pub fn dim(&self) -> usize {
        self.dim
    }

    /// Number of speakers.
    pub fn len(&self) -> usize {
        self.speakers.len()
    }

    pub fn num_utterances(&self) -> usize {
        self.speakers.values().map(|r| r.utterances.len()).sum()
    }

    pub fn is_empty(&self) -> bool {
        self.speakers.is_empty()
    }

    pub fn speaker(&self, id: &str) -> Option<&SpeakerRecord> {
        self.speakers.get(id)
    }

    pub fn speakers(&self) -> impl Iterator<Item = &SpeakerRecord> {
        self.speakers.values()
    }

    pub fn speakers_of(&self, gender: Gender) -> impl Iterator<Item = &SpeakerRecord> {
        self.speakers.values().filter(move |r| r.gender == gender)
    }

    /// Adds one utterance, creating the speaker on first sight.
    pub fn insert(&mut self, speaker: &str, gender: Gender, utt: &str, vec: Vec<f64>) -> Result<()> {
        if vec.len() != self.dim {
            return Err(Error::dim(self.dim, vec.len(), format!("utterance {speaker}/{utt}")));
        }
        let rec = self
            .speakers
            .entry(speaker.to_string())
            .or_insert_with(|| SpeakerRecord {
                speaker_id: speaker.to_string(),
                gender,
                utterances: Vec::new(),
            });
        if rec.gender != gender {
            return Err(Error::Data(format!(
                "speaker `{speaker}` listed as both {} and {gender}",
                rec.gender
            )));
        }
        if rec.utterances.iter().any(|u| u.id == utt) {
            return Err(Error::Data(format!("duplicate utterance {speaker}/{utt}")));
        }
        rec.utterances.push(Utterance {
            id: utt.to_string(),
            vec,
        });
        Ok(())
    }

    /// Moves the last `k` utterances of every speaker into a second store.
    /// Speakers with `k` or fewer utterances keep everything.
    pub fn split_holdout(&self, k: usize) -> (EmbeddingStore, EmbeddingStore) {
        let mut train = EmbeddingStore::new(self.dim);
        let mut held = EmbeddingStore::new(self.dim);
        for rec in self.speakers.values() {
            let n = rec.utterances.len();
            let cut = if n > k { n - k } else { n };
            let mut a = rec.clone();
            let b_utts = a.utterances.split_off(cut);
            train.speakers.insert(a.speaker_id.clone(), a);
            if !b_utts.is_empty() {
                held.speakers.insert(
                    rec.speaker_id.clone(),
                    SpeakerRecord {
                        utterances: b_utts,
                        ..rec.clone()
                    },
                );
            }
        }
        (train, held)
    }

    pub fn lines(&self) -> impl Iterator<Item = EmbeddingLine> + '_ {
        self.speakers.values().flat_map(move |rec| {
            rec.utterances.iter().map(move |u| EmbeddingLine {
                speaker: rec.speaker_id.clone(),
                gender: rec.gender,
                utt: u.id.clone(),
                dim: self.dim,
                vec: u.vec.clone(),
            })
        })
    }

    /// Order-independent-of-hashing checksum of every stored value.
    pub fn checksum(&self) -> u64 {
        // FNV-1a over names and raw f64 bits.
        let mut h: u64 = 0xcbf2_9ce4_8422_2325;
        let mut feed = |bytes: &[u8]| {
            for b in bytes {
                h ^= u64::from(*b);
                h = h.wrapping_mul(0x0100_0000_01b3);
            }
        };
        for rec in self.speakers.values() {
            feed(rec.speaker_id.as_bytes());
            for u in &rec.utterances {
                feed(u.id.as_bytes());
                for v in &u.vec {
                    feed(&v.to_bits().to_le_bytes());
                }
            }
        }
        h
    }
}

pub fn load_embeddings(path: impl AsRef<Path>) -> Result<EmbeddingStore> {
    let path = path.as_ref();
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    parse_embeddings_str(&text, path)
}

pub fn parse_embeddings_str(text: &str, origin: impl Into<PathBuf>) -> Result<EmbeddingStore> {
    let origin = origin.into();
    let mut store: Option<EmbeddingStore> = None;
    for (idx, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() {
            continue;
        }
        let err = |msg: String| Error::Parse {
            path: origin.clone(),
            line: idx + 1,
            msg,
        };
        let rec: EmbeddingLine = serde_json::from_str(line).map_err(|e| err(e.to_string()))?;
        if rec.dim != rec.vec.len() {
            return Err(err(format!(
                "dim {} does not match vector length {}",
                rec.dim,
                rec.vec.len()
            )));
        }
        if rec.vec.iter().any(|v| !v.is_finite()) {
            return Err(err("non-finite embedding value".into()));
        }
        let store = store.get_or_insert_with(|| EmbeddingStore::new(rec.dim));
        store
            .insert(&rec.speaker, rec.gender, &rec.utt, rec.vec)
            .map_err(|e| err(e.to_string()))?;
    }
    store.ok_or_else(|| Error::Data(format!("{}: no embedding records", origin.display())))
}

pub fn write_embeddings(path: impl AsRef<Path>, store: &EmbeddingStore) -> Result<()> {
    let path = path.as_ref();
    let mut buf = Vec::new();
    for line in store.lines() {
        serde_json::to_writer(&mut buf, &line)?;
        buf.push(b'\n');
    }
    let mut f = std::fs::File::create(path).map_err(|e| Error::io(path, e))?;
    f.write_all(&buf).map_err(|e| Error::io(path, e))
}
