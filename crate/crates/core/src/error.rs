use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("cannot read {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: u64,
        column: usize,
        message: String,
    },

    #[error("non-uniform/descending timestamps at line {line}: {message}")]
    NonUniformTimestamps { line: u64, message: String },

    #[error("duplicate sensor id {id:?} in header column {column}")]
    DuplicateSensor { id: String, column: usize },

    #[error("split too small: {split} split has {rows} rows, need at least {needed}")]
    SplitTooSmall {
        split: &'static str,
        rows: usize,
        needed: usize,
    },

    #[error("insufficient rows: have {rows}, need at least {needed}")]
    InsufficientRows { rows: usize, needed: usize },

    #[error("degenerate normalization: need at least two distinct non-missing values")]
    DegenerateNormalization,

    #[error("too few samples for density estimation: have {got}, need at least {needed}")]
    TooFewSamples { got: usize, needed: usize },

    #[error("zero bandwidth: samples are constant")]
    ZeroBandwidth,

    #[error("zero scale: series is constant")]
    ZeroScale,

    #[error("empty segment [{start}, {end})")]
    EmptySegment { start: usize, end: usize },

    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("no valid targets")]
    NoValidTargets,

    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),

    #[error("balanced MSE candidate count {size} exceeds the limit of {limit}")]
    BatchTooLarge { size: usize, limit: usize },

    #[error("empty selection: no entries in scope")]
    EmptySelection,

    #[error("training diverged at epoch {epoch}: non-finite loss")]
    Divergence { epoch: usize },

    #[error("unknown sensor {0:?}")]
    UnknownSensor(String),

    #[error("config error: {0}")]
    Config(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }

    pub fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
