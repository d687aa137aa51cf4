//! Descriptor extraction and embedding editing.

mod extract;
mod llm;

use serde::{Deserialize, Serialize};

pub use extract::{extract_lexical, ExtractionResult, MatchedDescriptor, Provenance, NEAREST_THRESHOLD};
pub use llm::{extract_llm, parse_numbered_reply, LlmConfig, LLM_INSTRUCTION, LLM_TOKEN_ENV};

use crate::dataset::{DescriptorId, DescriptorVocab, Gender};
use crate::error::{Error, Result};
use crate::linalg;
use crate::memnet::{encode_descriptor, readout_descriptor, readout_main, recall_speaker};
use crate::trainer::{AblationMode, ModelParams};

pub const DEFAULT_ALPHA: f64 = 0.7;

/// Sentence patterns for sweep prompts; `[Descriptor]` is the placeholder.
pub const PROMPT_TEMPLATES: &str = include_str!("../../resources/templates.txt");

pub fn prompt_templates() -> Vec<&'static str> {
    PROMPT_TEMPLATES
        .lines()
        .map(str::trim)
        .filter(|l| !l.is_empty() && !l.starts_with('#'))
        .collect()
}

pub fn fill_template(template: &str, descriptor: &str) -> String {
    template.replace("[Descriptor]", &descriptor.to_lowercase())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Backend {
    #[default]
    Lexical,
    Llm,
}

impl std::str::FromStr for Backend {
    type Err = Error;
    fn from_str(s: &str) -> Result<Self> {
        match s {
            "lexical" => Ok(Backend::Lexical),
            "llm" => Ok(Backend::Llm),
            _ => Err(Error::InvalidArgument(format!("unknown extraction backend `{s}`"))),
        }
    }
}

fn mix(alpha: f64, a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().zip(b).map(|(x, y)| alpha * x + (1.0 - alpha) * y).collect()
}

/// Single-descriptor edit of `s` with degree `alpha`.
///
/// | mode | result |
/// |---|---|
/// | full | `α·t̂ + (1−α)·ŝ_m + ŝ_r` |
/// | no_voice_res | `α·t̂ + (1−α)·ŝ_m` |
/// | no_resmem | `α·t + (1−α)·s` |
/// | no_vadp | `t̂ + ŝ_m` (α unused) |
pub fn edit_once(params: &ModelParams, s: &[f64], x: DescriptorId, alpha: f64, mode: AblationMode) -> Result<Vec<f64>> {
    let d = params.memory.dim();
    if s.len() != d {
        return Err(Error::dim(d, s.len(), "source embedding"));
    }
    let alpha_ok = (0.0..=1.0).contains(&alpha);
    if mode == AblationMode::NoVadp {
        if !alpha_ok {
            log::warn!("alpha {alpha} is ignored in no_vadp mode");
        }
    } else if !alpha_ok {
        return Err(Error::InvalidArgument(format!("alpha must lie in [0,1], got {alpha}")));
    }
    let t = encode_descriptor(&params.encoder, x)?;
    let out = match mode {
        AblationMode::NoResmem => mix(alpha, &t, s),
        AblationMode::NoVoiceRes => {
            let t_hat = readout_descriptor(&params.memory, &t)?.recalled;
            let s_m = readout_main(&params.memory, s)?.recalled;
            mix(alpha, &t_hat, &s_m)
        }
        AblationMode::NoVadp => {
            let t_hat = readout_descriptor(&params.memory, &t)?.recalled;
            let s_m = readout_main(&params.memory, s)?.recalled;
            linalg::add(&t_hat, &s_m)
        }
        AblationMode::Full => {
            let t_hat = readout_descriptor(&params.memory, &t)?.recalled;
            let r = recall_speaker(&params.memory, s)?;
            linalg::add(&mix(alpha, &t_hat, &r.main.recalled), &r.residual.recalled)
        }
    };
    if out.iter().any(|v| !v.is_finite()) {
        return Err(Error::Numerical("edited embedding is not finite".into()));
    }
    Ok(out)
}

/// Applies the descriptors in order, feeding each output forward. `alphas`
/// holds one degree per step, or a single degree shared by all steps.
pub fn edit_chain(
    params: &ModelParams,
    s: &[f64],
    descriptors: &[DescriptorId],
    alphas: &[f64],
    mode: AblationMode,
) -> Result<Vec<f64>> {
    if descriptors.is_empty() {
        return Err(Error::InvalidArgument("descriptor list is empty".into()));
    }
    if alphas.len() != 1 && alphas.len() != descriptors.len() {
        return Err(Error::InvalidArgument(format!(
            "{} degrees given for {} descriptors",
            alphas.len(),
            descriptors.len()
        )));
    }
    let mut cur = s.to_vec();
    for (i, &x) in descriptors.iter().enumerate() {
        let a = if alphas.len() == 1 { alphas[0] } else { alphas[i] };
        cur = edit_once(params, &cur, x, a, mode)?;
    }
    Ok(cur)
}

#[derive(Debug, Clone)]
pub struct PromptEdit {
    pub edited: Vec<f64>,
    pub extraction: ExtractionResult,
}

/// Extracts descriptors from `prompt` and edits `s` through them in order.
#[allow(clippy::too_many_arguments)]
pub fn edit_prompt(
    params: &ModelParams,
    vocab: &DescriptorVocab,
    s: &[f64],
    prompt: &str,
    alpha: f64,
    backend: Backend,
    llm: Option<&LlmConfig>,
    mode: AblationMode,
) -> Result<PromptEdit> {
    let extraction = match backend {
        Backend::Lexical => extract_lexical(prompt, vocab)?,
        Backend::Llm => {
            let cfg = llm.ok_or(Error::LlmConfig("base_url"))?;
            extract_llm(prompt, vocab, cfg)?
        }
    };
    let ids: Vec<DescriptorId> = extraction.descriptors.iter().map(|m| m.id).collect();
    let edited = edit_chain(params, s, &ids, &[alpha], mode)?;
    Ok(PromptEdit { edited, extraction })
}

/// One line of the edited-embedding JSON Lines output. Readable by the
/// embedding loader, which ignores the provenance fields.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EditedEmbedding {
    pub speaker: String,
    pub gender: Gender,
    pub utt: String,
    pub dim: usize,
    pub vec: Vec<f64>,
    pub source_speaker: String,
    pub descriptors: Vec<String>,
    pub alpha: f64,
    pub mode: AblationMode,
}

impl EditedEmbedding {
    pub fn new(
        source_speaker: &str,
        source_utt: Option<&str>,
        gender: Gender,
        descriptors: Vec<String>,
        alpha: f64,
        mode: AblationMode,
        vec: Vec<f64>,
    ) -> Self {
        Self {
            speaker: format!("{source_speaker}+{}@{alpha}", descriptors.join("+")),
            gender,
            utt: source_utt.unwrap_or("mean").to_string(),
            dim: vec.len(),
            vec,
            source_speaker: source_speaker.to_string(),
            descriptors,
            alpha,
            mode,
        }
    }
}

pub fn write_edited(path: impl AsRef<std::path::Path>, rows: &[EditedEmbedding]) -> Result<()> {
    let path = path.as_ref();
    let mut out = String::new();
    for r in rows {
        out.push_str(&serde_json::to_string(r)?);
        out.push('\n');
    }
    std::fs::write(path, out).map_err(|e| Error::io(path, e))
}
