use std::path::{Path, PathBuf};

use npn_quilt::QuiltError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error("config error: {0}")]
    Config(String),

    #[error("unknown config keys: {}", .0.join(", "))]
    UnknownKeys(Vec<String>),

    #[error("invalid input in {path}: {message}")]
    Input { path: PathBuf, message: String },

    #[error("{0}")]
    Quilt(#[from] QuiltError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl CliError {
    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_path_buf(),
            source,
        }
    }

    pub fn input(path: &Path, message: impl Into<String>) -> Self {
        CliError::Input {
            path: path.to_path_buf(),
            message: message.into(),
        }
    }

    /// 2 for config and validation problems, 3 for numerical failures, 4 for I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::UnknownKeys(_) | CliError::Input { .. } => 2,
            CliError::Io { .. } => 4,
            CliError::Quilt(e) => match e {
                QuiltError::NotPositiveDefinite(_)
                | QuiltError::NonConvergence { .. }
                | QuiltError::AllCandidatesFailed(_)
                | QuiltError::SweepFailed { .. } => 3,
                _ => 2,
            },
        }
    }
}

pub type CliResult<T> = std::result::Result<T, CliError>;
