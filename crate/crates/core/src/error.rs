use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: usize,
        message: String,
    },
    #[error("input is empty: {0}")]
    EmptyInput(String),
    #[error("every session was filtered out")]
    EmptyResult,
    #[error("cannot split {0} sessions into train/valid/test (need at least 3)")]
    Split(usize),
    #[error("cannot draw {count} negatives from a catalog of {vocab} items")]
    Sampling { count: usize, vocab: usize },
    #[error("dimension mismatch in {op}: {lhs:?} vs {rhs:?}")]
    Dimension {
        op: &'static str,
        lhs: [usize; 2],
        rhs: [usize; 2],
    },
    #[error("contract violated: {0}")]
    Contract(String),
    #[error("session of length {len} exceeds positional table of {max}")]
    Length { len: usize, max: usize },
    #[error("degenerate combination: norm {0:e} below 1e-12")]
    Degenerate(f64),
    #[error("non-finite value: {0}")]
    NonFinite(String),
    #[error("checkpoint: {0}")]
    Checkpoint(String),
    #[error("config: {}", .0.join("; "))]
    Config(Vec<String>),
    #[error("incompatible: {0}")]
    Compatibility(String),
    #[error("evaluation protocol: {0}")]
    Protocol(String),
    #[error("metric undefined on an empty instance list")]
    UndefinedMetric,
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

/// Coarse classification used to pick a process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Usage,
    Data,
    Numeric,
}

impl Error {
    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) => ErrorClass::Usage,
            Error::Dimension { .. }
            | Error::Degenerate(_)
            | Error::NonFinite(_)
            | Error::Contract(_) => ErrorClass::Numeric,
            _ => ErrorClass::Data,
        }
    }
}
