//! Command errors and their exit codes.

use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    /// Config schema or semantic violation.
    #[error("{0}")]
    Config(String),
    /// Bad input data (quote file, grid file contents).
    #[error("{0}")]
    Data(String),
    /// Grid file built for a different model or schedule.
    #[error("provenance mismatch: {0}")]
    Provenance(String),
    /// Numerical failure; details were written to `diagnostics`.
    #[error("numerical failure: {message} (diagnostics in {})", diagnostics.display())]
    Numerical { message: String, diagnostics: PathBuf },
    #[error("{}: {source}", path.display())]
    Io { path: PathBuf, source: std::io::Error },
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Config(_) | CliError::Data(_) | CliError::Io { .. } => 2,
            CliError::Provenance(_) => 3,
            CliError::Numerical { .. } => 4,
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
