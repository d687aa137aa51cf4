use std::fmt;

use timbre_core::Error;

/// Exit codes: 0 success, 1 usage, 2 data, 3 numerical.
#[derive(Debug)]
pub enum CliError {
    Usage(String),
    Core(Error),
    /// A check ran to completion and failed (gradient certification).
    CheckFailed(String),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Usage(_) => 1,
            CliError::Core(e) if e.is_numerical() => 3,
            CliError::Core(Error::InvalidArgument(_) | Error::LlmConfig(_)) => 1,
            CliError::Core(_) => 2,
            CliError::CheckFailed(_) => 3,
        }
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Usage(m) => write!(f, "usage error: {m}"),
            CliError::Core(e) => e.fmt(f),
            CliError::CheckFailed(m) => f.write_str(m),
        }
    }
}

impl std::error::Error for CliError {}

impl From<Error> for CliError {
    fn from(e: Error) -> Self {
        CliError::Core(e)
    }
}

impl From<serde_json::Error> for CliError {
    fn from(e: serde_json::Error) -> Self {
        CliError::Core(Error::Json(e))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn codes() {
        assert_eq!(CliError::Usage("x".into()).exit_code(), 1);
        assert_eq!(CliError::Core(Error::Data("x".into())).exit_code(), 2);
        assert_eq!(CliError::Core(Error::Numerical("x".into())).exit_code(), 3);
        assert_eq!(CliError::Core(Error::ZeroNorm).exit_code(), 3);
        assert_eq!(CliError::Core(Error::InvalidArgument("x".into())).exit_code(), 1);
    }
}
