use std::path::PathBuf;

use thiserror::Error;

/// Errors produced by the inference pipeline.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("{path}:{line}: {message}")]
    Parse {
        path: PathBuf,
        line: u64,
        message: String,
    },

    #[error("duplicate label for community `{0}`")]
    DuplicateLabel(String),

    #[error("offset {minutes} min for community `{community}` is not a multiple of 15 minutes")]
    OffsetNotQuarterHour { community: String, minutes: i32 },

    #[error("offset {minutes} min for community `{community}` is outside [-720, 840]")]
    OffsetOutOfRange { community: String, minutes: i32 },

    #[error("negative count {count} for community `{community}` at hour {hour}")]
    NegativeCount {
        community: String,
        hour: i64,
        count: f64,
    },

    #[error("invalid stage: expected {expected}, found {found}")]
    Stage {
        expected: &'static str,
        found: &'static str,
    },

    #[error("insufficient span: {len} hours available, at least {required} needed")]
    InsufficientSpan { len: usize, required: usize },

    #[error("degenerate input: {0}")]
    Degenerate(&'static str),

    #[error("reference pool is empty")]
    EmptyPool,

    #[error("method {method} requires {missing}")]
    MissingFeature {
        method: &'static str,
        missing: &'static str,
    },

    #[error("offset class {offset_minutes} min has {size} member(s); at least 2 are required")]
    ClassTooSmall { offset_minutes: i32, size: usize },

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("json: {0}")]
    Json(#[from] serde_json::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
