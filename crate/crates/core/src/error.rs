use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by calibrators, channels, analysis and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("protocol error: {0}")]
    Protocol(String),

    #[error("input error: {0}")]
    Input(String),

    #[error("ingestion error at row {row}: {message}")]
    Ingestion { row: usize, message: String },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("predictor singularity: effective corruption rate {0} makes p/(2p-1) undefined")]
    Singularity(f64),

    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("bound violation in trial {trial}: {bound} rhs={rhs} < observed={observed} (trace dumped to {dump})")]
    BoundViolation {
        trial: usize,
        bound: String,
        rhs: f64,
        observed: f64,
        dump: String,
    },

    #[error("experiment ran zero trials")]
    EmptyRun,
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
