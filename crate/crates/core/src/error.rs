use std::path::PathBuf;

use thiserror::Error;

/// Errors raised anywhere in the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("validation error: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("config parse error at line {line}: {msg}")]
    ConfigParse { line: usize, msg: String },

    #[error("insufficient samples: buffer holds {size}, minibatch needs {needed}")]
    InsufficientSamples { size: usize, needed: usize },

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("track file error at line {line}: {msg}")]
    TrackParse { line: usize, msg: String },

    #[error("invalid track: {0}")]
    Track(String),

    #[error("robot is off track ({distance:.3} m from the centerline)")]
    OffTrack { distance: f64 },

    #[error("no path found in frame")]
    NoPath,

    #[error("degenerate geometry: {0}")]
    Degenerate(String),

    #[error("transition is not terminal")]
    NotTerminal,

    #[error("iteration cap of {cap} exceeded without convergence (last delta {delta:e})")]
    NonConvergence { cap: usize, delta: f64 },

    #[error("non-finite loss during training: {0}")]
    NonFinite(String),

    #[error("corrupt checkpoint: {0}")]
    CorruptCheckpoint(String),

    #[error("checkpoint version {found} is not supported (expected {expected})")]
    CheckpointVersion { found: u32, expected: u32 },

    #[error("checkpoint does not match run: {0}")]
    Mismatch(String),

    #[error("bad image: {0}")]
    Image(String),

    #[error("usage: {0}")]
    Usage(String),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
