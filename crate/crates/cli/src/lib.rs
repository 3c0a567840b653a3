//! Command implementations behind the `n2n` binary.
//!
//! Every command writes its human-readable output to a caller-supplied
//! writer and, when it produces files, a `manifest.json` describing how to
//! reproduce them.

pub mod args;
pub mod commands;
pub mod config;
pub mod dataset;
pub mod experiments;
pub mod manifest;

use std::path::PathBuf;

pub use args::{Cli, Command};

/// Process exit codes.
pub mod exit {
    pub const SUCCESS: i32 = 0;
    pub const USAGE: i32 = 2;
    pub const DATA: i32 = 3;
    pub const NUMERIC: i32 = 4;
}

#[derive(Debug, thiserror::Error)]
pub enum CliError {
    #[error("{0}")]
    Usage(String),
    #[error("{0}")]
    Data(String),
    #[error("{0}")]
    Numeric(String),
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error(transparent)]
    Core(#[from] n2n_core::Error),
}

impl CliError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    pub fn exit_code(&self) -> i32 {
        use n2n_core::Error as E;
        match self {
            CliError::Usage(_) => exit::USAGE,
            CliError::Numeric(_) => exit::NUMERIC,
            CliError::Data(_) | CliError::Io { .. } => exit::DATA,
            CliError::Core(e) => match e {
                E::InvalidConfig(_) | E::InvalidNoise(_) | E::InvalidArchitecture(_) | E::InvalidCellSize(_) => {
                    exit::USAGE
                }
                E::NonFiniteLoss { .. } => exit::NUMERIC,
                _ => exit::DATA,
            },
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
