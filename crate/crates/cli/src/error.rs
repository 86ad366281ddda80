use std::path::{Path, PathBuf};

use thiserror::Error;

/// Command failure, mapped onto the process exit status.
#[derive(Debug, Error)]
pub enum CliError {
    #[error("{0}")]
    Config(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Backend(anchormark::Error),
}

impl CliError {
    pub fn config(msg: impl Into<String>) -> Self {
        CliError::Config(msg.into())
    }

    pub fn io(path: &Path, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.to_owned(),
            source,
        }
    }

    /// 2 for configuration and input problems, 3 for backend failures.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Config(_) | CliError::Io { .. } => 2,
            CliError::Backend(_) => 3,
        }
    }
}

impl From<anchormark::Error> for CliError {
    fn from(e: anchormark::Error) -> Self {
        if e.is_backend() {
            CliError::Backend(e)
        } else {
            CliError::Config(e.to_string())
        }
    }
}

pub type CliResult<T> = Result<T, CliError>;
