use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("line {line}: malformed JSON: {source}")]
    Malformed {
        line: usize,
        #[source]
        source: serde_json::Error,
    },

    #[error("line {line}: missing required field `{field}`")]
    MissingField { line: usize, field: &'static str },

    #[error("line {line}: {message}")]
    Schema { line: usize, message: String },

    #[error("span {start}..{end} out of bounds for question `{question_id}` ({len} chars)")]
    SpanOutOfBounds {
        question_id: String,
        start: usize,
        end: usize,
        len: usize,
    },

    #[error("training split is empty")]
    EmptyTrainSplit,

    #[error("invalid k = {0}; k must be positive")]
    InvalidK(i64),

    #[error("unsupported report format `{0}`")]
    UnsupportedFormat(String),

    #[error("unknown schema `{0}`")]
    UnknownSchema(String),

    #[error("invalid bin edges: {0}")]
    InvalidBins(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("report decode error: {0}")]
    Report(String),

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }
}
