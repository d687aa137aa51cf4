//! Chat-completion backend for descriptor extraction.
//!
//! The request replays a fixed three-turn dialogue: the instruction, the
//! assistant's acknowledgement, then the user's prompt. The reply is expected
//! to contain a numbered list (`1. Magnetic 2. Bright`). Transport failures
//! and unusable replies fall back to the lexical extractor.

use std::sync::OnceLock;
use std::time::Duration;

use regex::Regex;
use serde_json::{json, Value};

use super::extract::{extract_lexical, match_word, ExtractionResult, MatchedDescriptor, Provenance};
use crate::dataset::{DescriptorId, DescriptorVocab};
use crate::error::{Error, Result};

pub const LLM_INSTRUCTION: &str = include_str!("../../resources/llm_instruction.txt");

const ACKNOWLEDGEMENT: &str =
    "Sure, please provide the text prompt for me to analyze and extract the relevant voice attribute descriptors.";

/// Environment variable holding the bearer token.
pub const LLM_TOKEN_ENV: &str = "TIMBRE_LLM_TOKEN";

#[derive(Debug, Clone)]
pub struct LlmConfig {
    /// e.g. `https://api.example.com/v1`; `/chat/completions` is appended.
    pub base_url: Option<String>,
    pub model: Option<String>,
    pub token: Option<String>,
    pub timeout: Duration,
    pub retries: u32,
}

impl Default for LlmConfig {
    fn default() -> Self {
        Self {
            base_url: None,
            model: None,
            token: None,
            timeout: Duration::from_secs(10),
            retries: 1,
        }
    }
}

impl LlmConfig {
    /// Endpoint and model as given; token from [`LLM_TOKEN_ENV`].
    pub fn from_env(base_url: Option<String>, model: Option<String>) -> Self {
        Self {
            base_url,
            model,
            token: std::env::var(LLM_TOKEN_ENV).ok().filter(|t| !t.is_empty()),
            ..Self::default()
        }
    }

    fn resolved(&self) -> Result<(&str, &str, &str)> {
        let url = self.base_url.as_deref().ok_or(Error::LlmConfig("base_url"))?;
        let model = self.model.as_deref().ok_or(Error::LlmConfig("model"))?;
        let token = self.token.as_deref().ok_or(Error::LlmConfig(LLM_TOKEN_ENV))?;
        Ok((url, model, token))
    }
}

fn list_item() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\b\d+\.\s*([A-Za-z]+)").expect("valid regex"))
}

/// Descriptors named in a numbered-list reply, or `None` when the reply has
/// no list or names something outside the vocabulary.
pub fn parse_numbered_reply(reply: &str, vocab: &DescriptorVocab) -> Option<Vec<DescriptorId>> {
    let mut ids = Vec::new();
    for cap in list_item().captures_iter(reply) {
        let word = cap[1].to_lowercase();
        let (id, _) = match_word(&word, vocab)?;
        if !ids.contains(&id) {
            ids.push(id);
        }
    }
    (!ids.is_empty()).then_some(ids)
}

fn request(prompt: &str, url: &str, model: &str, token: &str, timeout: Duration) -> Result<String> {
    let agent: ureq::Agent = ureq::Agent::config_builder()
        .timeout_global(Some(timeout))
        .build()
        .into();
    let body = json!({
        "model": model,
        "temperature": 0,
        "messages": [
            {"role": "user", "content": LLM_INSTRUCTION.trim_end()},
            {"role": "assistant", "content": ACKNOWLEDGEMENT},
            {"role": "user", "content": prompt},
        ],
    });
    let endpoint = format!("{}/chat/completions", url.trim_end_matches('/'));
    let reply: Value = agent
        .post(&endpoint)
        .header("Authorization", &format!("Bearer {token}"))
        .send_json(&body)
        .and_then(|mut r| r.body_mut().read_json())
        .map_err(|e| Error::Llm(e.to_string()))?;
    reply["choices"][0]["message"]["content"]
        .as_str()
        .map(str::to_string)
        .ok_or_else(|| Error::Llm("reply has no message content".into()))
}

pub fn extract_llm(prompt: &str, vocab: &DescriptorVocab, cfg: &LlmConfig) -> Result<ExtractionResult> {
    if prompt.trim().is_empty() {
        return Err(Error::InvalidArgument("prompt is empty".into()));
    }
    let (url, model, token) = cfg.resolved()?;
    let mut last = None;
    for attempt in 0..=cfg.retries {
        match request(prompt, url, model, token, cfg.timeout) {
            Ok(text) => match parse_numbered_reply(&text, vocab) {
                Some(ids) => {
                    return Ok(ExtractionResult {
                        prompt: prompt.to_string(),
                        descriptors: ids
                            .into_iter()
                            .map(|id| MatchedDescriptor {
                                id,
                                name: vocab.name(id).unwrap_or_default().to_string(),
                                provenance: Provenance::Llm,
                            })
                            .collect(),
                    });
                }
                None => {
                    last = Some(format!("unusable reply: {text:?}"));
                    break;
                }
            },
            Err(e) => {
                log::debug!("llm attempt {} failed: {e}", attempt + 1);
                last = Some(e.to_string());
            }
        }
    }
    log::warn!(
        "llm extraction failed ({}); using lexical extraction",
        last.unwrap_or_default()
    );
    extract_lexical(prompt, vocab)
}
