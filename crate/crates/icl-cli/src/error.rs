//! CLI error type and the exit-code policy: 0 success, 1 usage or
//! configuration problems, 2 numerical failures inside the experiments.

use icl_core::CoreError;
use std::process::ExitCode;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("config error in {path}: {detail}")]
    Config { path: String, detail: String },
    #[error(transparent)]
    Core(#[from] CoreError),
}

impl CliError {
    pub fn usage(msg: impl Into<String>) -> Self {
        CliError::Usage(msg.into())
    }

    /// 1 for usage/config/i-o problems, 2 for numerical failures.
    pub fn exit_code(&self) -> ExitCode {
        match self {
            CliError::Core(e) if e.is_numerical() => ExitCode::from(2),
            _ => ExitCode::from(1),
        }
    }
}

pub type Result<T> = std::result::Result<T, CliError>;
