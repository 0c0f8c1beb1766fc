use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("invalid mesh: {0}")]
    InvalidMesh(String),

    #[error("invalid skeleton: {0}")]
    InvalidSkeleton(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("shape mismatch: {0}")]
    Mismatch(String),

    #[error("overlapping UV layout: {overlapping} of {covered} covered pixels claimed twice")]
    OverlappingLayout { overlapping: usize, covered: usize },

    #[error("degenerate normalization channel {channel} of {semantic}")]
    DegenerateChannel { semantic: String, channel: char },

    #[error("garment binding covers only {fraction:.3} of the vertices")]
    IncompatibleGarment { fraction: f64 },

    #[error("simulation exploded at vertex {vertex}: {reason}")]
    Explosion { vertex: usize, reason: String },

    #[error("bad file format: {0}")]
    Format(String),

    #[error("dataset error: {0}")]
    Dataset(String),
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
