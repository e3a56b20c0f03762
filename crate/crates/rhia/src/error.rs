use std::io;
use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum RunError {
    #[error("usage: {0}")]
    Usage(String),
    #[error("data: {0}")]
    Data(String),
    #[error("numeric: {0}")]
    Numeric(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: io::Error,
    },
    #[error(transparent)]
    Model(#[from] rhia_core::Error),
}

impl RunError {
    pub fn io(path: impl Into<PathBuf>, source: io::Error) -> Self {
        RunError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit status: 1 usage, 2 data, 3 numeric.
    pub fn exit_code(&self) -> i32 {
        match self {
            RunError::Usage(_) => 1,
            RunError::Numeric(_) => 3,
            RunError::Model(e) => match e {
                rhia_core::Error::NonFinite(_) | rhia_core::Error::GradCheck { .. } => 3,
                rhia_core::Error::Config(_) => 1,
                _ => 2,
            },
            RunError::Data(_) | RunError::Io { .. } => 2,
        }
    }
}

pub type Result<T, E = RunError> = std::result::Result<T, E>;
