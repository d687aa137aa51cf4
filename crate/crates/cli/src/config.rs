//! Layered run configuration: built-in defaults, then a TOML file, then flags.

use std::path::{Path, PathBuf};
use std::time::Duration;

use serde::{Deserialize, Serialize};
use timbre_core::dataset::SyntheticSpec;
use timbre_core::editor::{Backend, LlmConfig, DEFAULT_ALPHA, LLM_TOKEN_ENV};
use timbre_core::metrics::default_alpha_grid;
use timbre_core::trainer::{AblationMode, TrainConfig};

use crate::error::CliError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct CliConfig {
    pub paths: Paths,
    pub train: TrainConfig,
    pub llm: LlmSettings,
    pub edit: EditSettings,
    pub eval: EvalSettings,
    pub synth: SynthSettings,
    pub gradcheck: GradcheckSettings,
    /// Worker threads for batch gradients and sweeps; 1 runs sequentially.
    pub jobs: usize,
}

impl Default for CliConfig {
    fn default() -> Self {
        Self {
            paths: Paths::default(),
            train: TrainConfig::default(),
            llm: LlmSettings::default(),
            edit: EditSettings::default(),
            eval: EvalSettings::default(),
            synth: SynthSettings::default(),
            gradcheck: GradcheckSettings::default(),
            jobs: 1,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Paths {
    pub embeddings: Option<PathBuf>,
    pub annotations: Option<PathBuf>,
    /// One descriptor per line; the built-in 18-word vocabulary when unset.
    pub vocab: Option<PathBuf>,
    pub checkpoint: Option<PathBuf>,
    pub output_dir: PathBuf,
}

impl Default for Paths {
    fn default() -> Self {
        Self {
            embeddings: None,
            annotations: None,
            vocab: None,
            checkpoint: None,
            output_dir: PathBuf::from("out"),
        }
    }
}

/// Chat-completion endpoint. The token is never read from here.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub timeout_secs: u64,
    pub retries: u32,
}

impl Default for LlmSettings {
    fn default() -> Self {
        Self {
            base_url: None,
            model: None,
            timeout_secs: 10,
            retries: 1,
        }
    }
}

impl LlmSettings {
    pub fn client(&self) -> LlmConfig {
        LlmConfig {
            timeout: Duration::from_secs(self.timeout_secs),
            retries: self.retries,
            ..LlmConfig::from_env(self.base_url.clone(), self.model.clone())
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EditSettings {
    pub alpha: f64,
    pub backend: Backend,
    /// Falls back to the mode the checkpoint was trained in.
    pub mode: Option<AblationMode>,
}

impl Default for EditSettings {
    fn default() -> Self {
        Self {
            alpha: DEFAULT_ALPHA,
            backend: Backend::Lexical,
            mode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EvalSettings {
    pub grid: Vec<f64>,
    /// Embeddings whose speakers are edited; `paths.embeddings` when unset.
    pub sources: Option<PathBuf>,
    /// Keep only the first `k` source speakers (by id) of each gender.
    pub sources_per_gender: Option<usize>,
    pub mode: Option<AblationMode>,
}

impl Default for EvalSettings {
    fn default() -> Self {
        Self {
            grid: default_alpha_grid(),
            sources: None,
            sources_per_gender: None,
            mode: None,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SynthSettings {
    /// Last `k` utterances of each speaker go to `heldout.jsonl`.
    pub holdout_utterances: usize,
    pub corpus: SyntheticSpec,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct GradcheckSettings {
    pub cases: u64,
    pub first_seed: u64,
    pub step: f64,
    pub tolerance: f64,
    pub mode: AblationMode,
}

impl Default for GradcheckSettings {
    fn default() -> Self {
        Self {
            cases: 20,
            first_seed: 0,
            step: 1e-5,
            tolerance: 1e-4,
            mode: AblationMode::Full,
        }
    }
}

const SECRET_KEYS: [&str; 4] = ["token", "api_key", "apikey", "secret"];

fn find_secret(table: &toml::Table, prefix: &str) -> Option<String> {
    for (k, v) in table {
        let key = format!("{prefix}{k}");
        if SECRET_KEYS.contains(&k.to_lowercase().as_str()) {
            return Some(key);
        }
        if let toml::Value::Table(t) = v {
            if let Some(found) = find_secret(t, &format!("{key}.")) {
                return Some(found);
            }
        }
    }
    None
}

impl CliConfig {
    pub fn from_toml(text: &str, origin: &Path) -> Result<Self, CliError> {
        let table: toml::Table = text
            .parse()
            .map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))?;
        if let Some(key) = find_secret(&table, "") {
            return Err(CliError::Usage(format!(
                "{}: `{key}` is not allowed in config files; set {LLM_TOKEN_ENV} instead",
                origin.display()
            )));
        }
        toml::from_str(text).map_err(|e| CliError::Usage(format!("{}: {e}", origin.display())))
    }

    pub fn load(path: Option<&Path>) -> Result<Self, CliError> {
        match path {
            None => Ok(Self::default()),
            Some(p) => {
                let text = std::fs::read_to_string(p)
                    .map_err(|e| CliError::Usage(format!("cannot read config {}: {e}", p.display())))?;
                Self::from_toml(&text, p)
            }
        }
    }
}

/// Parses `start:step:end` or a comma-separated list.
pub fn parse_grid(s: &str) -> Result<Vec<f64>, String> {
    let num = |t: &str| t.trim().parse::<f64>().map_err(|_| format!("bad number `{t}` in grid"));
    let parts: Vec<&str> = s.split(':').collect();
    if parts.len() == 3 {
        let (start, step, end) = (num(parts[0])?, num(parts[1])?, num(parts[2])?);
        if !(step > 0.0) || end < start {
            return Err(format!("grid `{s}` is empty"));
        }
        // Index-based so 0.1 steps land on the exact decimal values.
        let n = ((end - start) / step + 1e-9).floor() as usize;
        let decimals = parts[1].trim().split('.').nth(1).map_or(0, str::len) as i32;
        let p = 10f64.powi(decimals);
        return Ok((0..=n).map(|i| ((start + i as f64 * step) * p).round() / p).collect());
    }
    s.split(',').map(num).collect()
}
