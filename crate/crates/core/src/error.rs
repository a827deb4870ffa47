use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    /// A configuration value or constructor argument violated an invariant.
    #[error("invalid `{key}`: {message}")]
    Validation { key: String, message: String },

    #[error("shape mismatch in {context}: expected {expected}, got {actual}")]
    Shape {
        context: &'static str,
        expected: usize,
        actual: usize,
    },

    #[error("{what} {value} out of range [0, {bound})")]
    OutOfRange {
        what: &'static str,
        value: usize,
        bound: usize,
    },

    #[error("non-finite value in {0}")]
    NonFinite(&'static str),

    #[error("{rule} requires strictly positive inputs after softplus, got {value}")]
    Positivity { rule: &'static str, value: f64 },

    #[error("invalid probability distribution: {0}")]
    Distribution(String),

    #[error("environment error: {0}")]
    Environment(String),

    #[error("value iteration did not converge after {iterations} sweeps (last delta {delta})")]
    NonConvergence { iterations: usize, delta: f64 },

    #[error(transparent)]
    Checkpoint(#[from] CheckpointError),

    #[error("config error at `{path}`: {message}")]
    Config { path: String, message: String },

    #[error("training worker panicked")]
    WorkerPanic,

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub fn validation(key: impl Into<String>, message: impl Into<String>) -> Self {
        Error::Validation {
            key: key.into(),
            message: message.into(),
        }
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}

#[derive(Debug, Error)]
pub enum CheckpointError {
    #[error("bad magic bytes: not a checkpoint file")]
    BadMagic,
    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },
    #[error("checkpoint truncated while reading {0}")]
    Truncated(&'static str),
    #[error("{0} trailing bytes after checkpoint payload")]
    TrailingBytes(usize),
    #[error("config hash mismatch (use --force to override)")]
    HashMismatch,
    #[error("malformed arch descriptor: {0}")]
    Descriptor(String),
    #[error("checkpoint arrays inconsistent with descriptor: {0}")]
    Inconsistent(String),
}
