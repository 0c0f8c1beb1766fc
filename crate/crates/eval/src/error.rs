use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum EvalError {
    #[error(transparent)]
    Core(#[from] uvcloth_core::Error),

    #[error(transparent)]
    Net(#[from] uvcloth_net::NetError),

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),

    #[error("garment vertex {vertex} is not bound to the body")]
    Unbound { vertex: usize },

    #[error("mismatch: {0}")]
    Mismatch(String),

    #[error("{0}")]
    Invalid(String),
}

impl EvalError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        EvalError::Io {
            path: path.into(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, EvalError>;
