use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid configuration: {0}")]
    InvalidConfiguration(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("precondition violated: {0}")]
    PreconditionViolation(String),

    #[error("numerical failure at t={time}, node {node}: non-finite state")]
    NumericalFailure { time: u64, node: usize },

    #[error("enumeration of C({n},{m}) = {count} subsets exceeds cap {cap}")]
    CapacityExceeded {
        n: usize,
        m: usize,
        count: u128,
        cap: u128,
    },

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("operation requires a full trajectory record, got a streaming one")]
    UnsupportedRecordingMode,

    #[error("sampling failed after {tries} tries ({accepted} accepted, rate {rate:.3e})")]
    SamplingFailure {
        tries: u64,
        accepted: u64,
        rate: f64,
    },

    #[error("degenerate estimate: {0}")]
    DegenerateEstimate(String),

    #[error("trial {trial} failed: {source}")]
    Trial {
        trial: u64,
        #[source]
        source: Box<Error>,
    },

    #[error("config parse error: {0}")]
    ConfigParse(String),

    #[error("i/o error on {path}: {source}")]
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
