use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = SimError> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("behavior at t={behavior} is later than request time {request}")]
    InputOrder { behavior: u64, request: u64 },

    #[error("configuration error: {0}")]
    Config(String),

    #[error("{path}:{line}: {message}")]
    Ingest {
        path: PathBuf,
        line: usize,
        message: String,
    },

    #[error("dimension mismatch: expected {expected}, got {actual}")]
    Dimension { expected: usize, actual: usize },

    #[error("probability {0} outside (0, 1)")]
    NumericDomain(f64),

    #[error("non-finite value in {0}")]
    NonFinite(String),

    #[error("undefined metric: {0}")]
    UndefinedMetric(&'static str),

    #[error("bad magic header: expected {expected:?}")]
    BadMagic { expected: &'static str },

    #[error("unsupported format version {found} (expected {expected})")]
    VersionMismatch { expected: u32, found: u32 },

    #[error("checksum mismatch: stored {stored:#018x}, computed {computed:#018x}")]
    Checksum { stored: u64, computed: u64 },

    #[error("corrupt file: {0}")]
    Corrupt(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("snapshot rejected: {0}")]
    SnapshotRejected(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
