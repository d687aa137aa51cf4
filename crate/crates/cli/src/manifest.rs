//! Run manifests: enough to reproduce a command invocation.

use std::path::Path;

use serde::Serialize;
use timbre_core::rng::RNG_ALGORITHM;
use timbre_core::trainer::CHECKPOINT_FORMAT;

use crate::config::CliConfig;
use crate::error::CliError;

#[derive(Serialize)]
struct Manifest<'a> {
    command: &'a str,
    tool_version: &'a str,
    checkpoint_format: &'a str,
    rng: &'a str,
    parallel_feature: bool,
    config: &'a CliConfig,
    details: serde_json::Value,
}

/// Writes `<dir>/<command>.manifest.json`. No timestamps, so identical runs
/// give identical manifests.
pub(crate) fn write(dir: &Path, command: &str, config: &CliConfig, details: serde_json::Value) -> Result<(), CliError> {
    let m = Manifest {
        command,
        tool_version: env!("CARGO_PKG_VERSION"),
        checkpoint_format: CHECKPOINT_FORMAT,
        rng: RNG_ALGORITHM,
        parallel_feature: cfg!(feature = "parallel"),
        config,
        details,
    };
    let path = dir.join(format!("{command}.manifest.json"));
    let mut text = serde_json::to_string_pretty(&m)?;
    text.push('\n');
    std::fs::write(&path, text).map_err(|e| CliError::Core(timbre_core::Error::Io { path, source: e }))
}
