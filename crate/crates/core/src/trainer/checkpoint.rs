use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::config::TrainConfig;
use super::model::{ModelParams, BLOCK_NAMES};
use super::optim::Moments;
use crate::dataset::DescriptorVocab;
use crate::error::{Error, Result};
use crate::rng::RngState;

pub const CHECKPOINT_FORMAT: &str = "timbre-checkpoint/v1";

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct LossRecord {
    pub step: u64,
    pub total: f64,
    pub rec: f64,
    pub align: f64,
}

/// Everything needed to continue training or to edit without the original
/// vocabulary file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub config: TrainConfig,
    pub vocab: DescriptorVocab,
    pub params: ModelParams,
    /// One entry per parameter block, in block order.
    pub moments: Vec<Moments>,
    pub step: u64,
    pub rng: RngState,
    pub optimizer: String,
    /// Checksum of the embedding store the run was trained on.
    pub data_checksum: u64,
    pub loss_history: Vec<LossRecord>,
}

impl Checkpoint {
    pub fn validate(&self) -> Result<()> {
        if self.format != CHECKPOINT_FORMAT {
            return Err(Error::Data(format!(
                "unsupported checkpoint format `{}` (expected `{CHECKPOINT_FORMAT}`)",
                self.format
            )));
        }
        self.params.validate()?;
        if self.params.encoder.vocab_size() != self.vocab.len() {
            return Err(Error::dim(
                self.vocab.len(),
                self.params.encoder.vocab_size(),
                "checkpoint vocabulary vs descriptor table",
            ));
        }
        let blocks = self.params.blocks();
        if self.moments.len() != BLOCK_NAMES.len() {
            return Err(Error::dim(
                BLOCK_NAMES.len(),
                self.moments.len(),
                "optimizer moment blocks",
            ));
        }
        for ((m, b), name) in self.moments.iter().zip(blocks).zip(BLOCK_NAMES) {
            if m.m.len() != b.data.len() || m.v.len() != b.data.len() {
                return Err(Error::dim(b.data.len(), m.m.len(), name));
            }
        }
        Ok(())
    }

    pub fn to_json(&self) -> Result<String> {
        let mut s = serde_json::to_string_pretty(self)?;
        s.push('\n');
        Ok(s)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let ck: Checkpoint = serde_json::from_str(text)?;
        ck.validate()?;
        Ok(ck)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        fs::write(path, self.to_json()?).map_err(|e| Error::io(path, e))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        Self::from_json(&text)
    }
}
