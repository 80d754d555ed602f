use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("io error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: {message}")]
    MalformedLine { line: usize, message: String },

    #[error("empty corpus")]
    EmptyCorpus,

    #[error("invalid argument `{arg}`: {reason}")]
    InvalidArgument { arg: &'static str, reason: String },

    #[error("not enough candidate spans: requested {requested}, available {available}")]
    InsufficientCandidates { requested: usize, available: usize },

    #[error("not a checkpoint: {0}")]
    NotACheckpoint(String),

    #[error("unsupported checkpoint version {found} (expected {expected})")]
    VersionMismatch { found: u32, expected: u32 },

    #[error("truncated checkpoint: {0}")]
    Truncated(String),

    #[error("dimension mismatch: {left} vs {right}")]
    DimensionMismatch { left: usize, right: usize },

    #[error("item {index} has no generation but negative mode {mode} requires one")]
    MissingGeneration { index: usize, mode: &'static str },

    #[error("no document has at least {batch_size} items; try a smaller batch_size (largest has {largest})")]
    NoEligibleDocument { batch_size: usize, largest: usize },

    #[error("generator failed on item {index}: {source}")]
    Generation {
        index: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("round {round}: {source}")]
    Round {
        round: usize,
        #[source]
        source: Box<Error>,
    },

    #[error("instance {index}: {reason}")]
    BadInstance { index: usize, reason: String },

    #[error("bridge transport error: {0}")]
    Transport(String),

    #[error("bridge returned HTTP {status}: {body}")]
    HttpStatus { status: u16, body: String },

    #[error("bridge response schema violation: {0}")]
    Schema(String),

    #[error("bridge response is not valid JSON at byte {offset}: {message}")]
    Parse { offset: usize, message: String },

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn invalid(arg: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            arg,
            reason: reason.into(),
        }
    }
}
