use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = NetError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum NetError {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("training diverged at epoch {epoch}, batch {batch}: {what} is not finite")]
    Diverged { epoch: usize, batch: usize, what: String },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bad checkpoint: {0}")]
    Checkpoint(String),

    #[error("normalization stats {found} do not match the checkpoint ({expected})")]
    StatsMismatch { expected: String, found: String },

    #[error(transparent)]
    Core(#[from] uvcloth_core::Error),
}

impl NetError {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        NetError::Io {
            path: path.into(),
            source,
        }
    }
}
