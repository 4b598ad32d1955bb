use std::path::PathBuf;

use qreg_core::optim::Aborted;

/// Process exit codes.
pub mod exit {
    pub const OK: i32 = 0;
    pub const OTHER: i32 = 1;
    pub const CONFIG: i32 = 2;
    pub const NUMERICAL: i32 = 3;
    pub const TOLERANCE: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error("training aborted: {0}")]
    Aborted(String),
    #[error("gradient check failed: max relative error {max:.3e} exceeds {tolerance:.1e}")]
    Tolerance { max: f64, tolerance: f64 },
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] qreg_core::Error),
    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl CliError {
    pub fn code(&self) -> i32 {
        match self {
            CliError::Config(_) => exit::CONFIG,
            CliError::Aborted(_) => exit::NUMERICAL,
            CliError::Tolerance { .. } => exit::TOLERANCE,
            _ => exit::OTHER,
        }
    }

    pub fn config(msg: impl std::fmt::Display) -> Self {
        CliError::Config(msg.to_string())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io { path: path.into(), source }
    }
}

impl From<Box<Aborted>> for CliError {
    fn from(a: Box<Aborted>) -> Self {
        CliError::Aborted(a.error.to_string())
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
