//! Error-to-exit-code mapping: 0 success, 2 validation failure,
//! 3 diagnostics failure under `--strict`.

use std::fmt;

pub const EXIT_OK: i32 = 0;
pub const EXIT_VALIDATION: i32 = 2;
pub const EXIT_DIAGNOSTICS: i32 = 3;

#[derive(Debug)]
pub enum CliError {
    /// Bad inputs: unreadable files, schema violations, invariant failures,
    /// checksum mismatches.
    Validation(anyhow::Error),
    /// `--strict` was set and the fit failed its diagnostic thresholds.
    Diagnostics(String),
    /// Unexpected internal failure (IO on outputs and similar).
    Other(anyhow::Error),
}

impl CliError {
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Validation(_) => EXIT_VALIDATION,
            CliError::Diagnostics(_) => EXIT_DIAGNOSTICS,
            CliError::Other(_) => 1,
        }
    }

    pub fn validation<E: Into<anyhow::Error>>(e: E) -> CliError {
        CliError::Validation(e.into())
    }
}

impl fmt::Display for CliError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            CliError::Validation(e) => write!(f, "validation error: {e:#}"),
            CliError::Diagnostics(msg) => write!(f, "diagnostics failure: {msg}"),
            CliError::Other(e) => write!(f, "{e:#}"),
        }
    }
}

impl std::error::Error for CliError {}

impl From<anyhow::Error> for CliError {
    fn from(e: anyhow::Error) -> Self {
        CliError::Other(e)
    }
}

impl From<std::io::Error> for CliError {
    fn from(e: std::io::Error) -> Self {
        CliError::Other(e.into())
    }
}
