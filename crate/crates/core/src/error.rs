use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("not found: {}", .0.display())]
    NotFound(PathBuf),

    #[error("{path}: line {line}: {msg}")]
    Parse { path: String, line: u64, msg: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("unsupported image format: {0}")]
    Format(String),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("fit failed: {0}")]
    Fit(String),

    #[error("unknown condition: {0}")]
    UnknownCondition(String),

    #[error("numerical error: {0}")]
    Numerical(String),

    #[error("configuration error: {0}")]
    Configuration(String),

    #[error("training diverged at step {step}: {msg}")]
    Diverged { step: u64, msg: String },

    #[error("checkpoint error: {0}")]
    Checkpoint(String),

    #[error("i/o error on {}: {source}", path.display())]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        let path = path.into();
        if source.kind() == std::io::ErrorKind::NotFound {
            Error::NotFound(path)
        } else {
            Error::Io { path, source }
        }
    }

    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
