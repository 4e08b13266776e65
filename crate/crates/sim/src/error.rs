use std::io;
use std::path::PathBuf;

use thiserror::Error;

/// Errors surfaced by the harness and CLI.
#[derive(Debug, Error)]
pub enum SimError {
    #[error(transparent)]
    Core(#[from] fpp_core::Error),

    /// Invalid or unknown configuration keys; the message names the key path.
    #[error("config error: {0}")]
    Config(String),

    #[error("{}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },

    #[error("{}: {reason}", path.display())]
    Format { path: PathBuf, reason: String },

    #[error("csv output: {0}")]
    Csv(#[from] csv::Error),
}

impl SimError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        SimError::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        SimError::Format {
            path: path.into(),
            reason: reason.into(),
        }
    }

    /// Process exit code: 2 for configuration problems, 3 for protocol or
    /// data errors raised while running, 1 for I/O failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            SimError::Config(_) => 2,
            SimError::Core(e) if e.is_config() => 2,
            SimError::Core(_) => 3,
            SimError::Format { .. } => 3,
            SimError::Io { .. } | SimError::Csv(_) => 1,
        }
    }
}

pub type Result<T> = std::result::Result<T, SimError>;
