use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {msg}")]
    Parse { path: PathBuf, line: usize, msg: String },

    #[error("{path}:{line}: unknown descriptor `{token}`")]
    UnknownDescriptor { path: PathBuf, line: usize, token: String },

    #[error("dimension mismatch: expected {expected}, got {got} ({context})")]
    DimensionMismatch {
        expected: usize,
        got: usize,
        context: String,
    },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("query vector has (near) zero norm")]
    ZeroNorm,

    #[error("non-finite value at node {node} ({op})")]
    NonFinite { node: usize, op: &'static str },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("no voice attribute found in prompt `{0}`")]
    NoAttributeFound(String),

    #[error("llm backend misconfigured: missing {0}")]
    LlmConfig(&'static str),

    #[error("llm request failed: {0}")]
    Llm(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn dim(expected: usize, got: usize, context: impl Into<String>) -> Self {
        Error::DimensionMismatch {
            expected,
            got,
            context: context.into(),
        }
    }

    /// True for failures caused by the numbers themselves (overflow, NaN,
    /// degenerate slots), as opposed to bad input data or configuration.
    pub fn is_numerical(&self) -> bool {
        matches!(self, Error::NonFinite { .. } | Error::Numerical(_) | Error::ZeroNorm)
    }
}
