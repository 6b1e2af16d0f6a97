//! Command-line front end for `occhmm`: scenario simulation, filtering,
//! tracking, evaluation and the exact oracle, over NDJSON streams and CSV
//! traces.
//!
//! Exit codes: 0 success, 1 I/O failure, 2 configuration error, 3 stream
//! error, 4 evaluation error.

pub mod commands;
pub mod config;
pub mod format;

use std::path::PathBuf;

use thiserror::Error;

use config::ConfigError;
use format::FormatError;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },
    #[error(transparent)]
    Config(#[from] ConfigError),
    #[error("stream {path}: {source}")]
    Stream { path: PathBuf, source: FormatError },
    #[error("evaluation: {0}")]
    Eval(String),
}

impl CliError {
    pub fn exit_code(&self) -> u8 {
        match self {
            CliError::Io { .. } => 1,
            CliError::Config(_) => 2,
            CliError::Stream { .. } => 3,
            CliError::Eval(_) => 4,
        }
    }
}
