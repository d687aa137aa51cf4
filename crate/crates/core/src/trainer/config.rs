use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Which variant of the model is trained or used for editing.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum AblationMode {
    #[default]
    Full,
    /// Residual voice memory removed.
    NoVoiceRes,
    /// No slot memory at all: raw encoder outputs are interpolated.
    NoResmem,
    /// No degree predictor: fixed, α-free combination.
    NoVadp,
}

impl AblationMode {
    pub const ALL: [AblationMode; 4] = [
        AblationMode::Full,
        AblationMode::NoVoiceRes,
        AblationMode::NoResmem,
        AblationMode::NoVadp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AblationMode::Full => "full",
            AblationMode::NoVoiceRes => "no_voice_res",
            AblationMode::NoResmem => "no_resmem",
            AblationMode::NoVadp => "no_vadp",
        }
    }
}

impl fmt::Display for AblationMode {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl FromStr for AblationMode {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        Self::ALL
            .into_iter()
            .find(|m| m.as_str() == s)
            .ok_or_else(|| Error::InvalidArgument(format!("unknown mode `{s}`")))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lambda_rec: f64,
    pub lambda_align: f64,
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub weight_decay: f64,
    pub adam_eps: f64,
    pub batch_size: usize,
    pub steps: u64,
    pub seed: u64,
    pub tau: f64,
    /// Main voice-value / descriptor-key slot count `M`.
    pub main_slots: usize,
    /// Residual voice-value slot count `N`.
    pub residual_slots: usize,
    /// Embedding width `D`; taken from the data when unset.
    pub dim: Option<usize>,
    /// VADP hidden width `H`; defaults to `D`.
    pub hidden: Option<usize>,
    /// Vocabulary size `V`; taken from the vocabulary when unset.
    pub vocab_size: Option<usize>,
    pub mode: AblationMode,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            lambda_rec: 20.0,
            lambda_align: 200.0,
            learning_rate: 2e-4,
            beta1: 0.8,
            beta2: 0.99,
            weight_decay: 0.01,
            adam_eps: 1e-8,
            batch_size: 64,
            steps: 1000,
            seed: 0,
            tau: 1.0,
            main_slots: 32,
            residual_slots: 4,
            dim: None,
            hidden: None,
            vocab_size: None,
            mode: AblationMode::Full,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if !(self.lambda_rec >= 0.0 && self.lambda_align >= 0.0) {
            return bad("loss weights must be >= 0".into());
        }
        if !(self.beta1 > 0.0 && self.beta1 < 1.0 && self.beta2 > 0.0 && self.beta2 < 1.0) {
            return bad(format!("betas must lie in (0,1): {}, {}", self.beta1, self.beta2));
        }
        if !(self.learning_rate >= 0.0) || !(self.weight_decay >= 0.0) || !(self.adam_eps > 0.0) {
            return bad("learning rate and weight decay must be >= 0, adam_eps > 0".into());
        }
        if !(self.tau > 0.0) {
            return bad(format!("tau must be positive, got {}", self.tau));
        }
        if self.batch_size == 0 || self.main_slots == 0 || self.residual_slots == 0 {
            return bad("batch size and slot counts must be >= 1".into());
        }
        if self.hidden == Some(0) {
            return bad("hidden width must be >= 1".into());
        }
        Ok(())
    }

    /// Resolves `D`, `H` and `V` against the data, rejecting contradictions.
    pub fn resolve_dims(&self, data_dim: usize, vocab_size: usize) -> Result<Dims> {
        if let Some(d) = self.dim {
            if d != data_dim {
                return Err(Error::dim(d, data_dim, "configured D vs embedding data"));
            }
        }
        if let Some(v) = self.vocab_size {
            if v != vocab_size {
                return Err(Error::dim(v, vocab_size, "configured V vs vocabulary"));
            }
        }
        Ok(Dims {
            main: self.main_slots,
            residual: self.residual_slots,
            dim: data_dim,
            hidden: self.hidden.unwrap_or(data_dim),
            vocab: vocab_size,
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Dims {
    pub main: usize,
    pub residual: usize,
    pub dim: usize,
    pub hidden: usize,
    pub vocab: usize,
}
