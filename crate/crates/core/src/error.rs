use std::io;

use thiserror::Error;

/// Everything that can go wrong inside the library.
#[derive(Debug, Error)]
pub enum Error {
    #[error("{op}: shape mismatch: {detail}")]
    Shape { op: &'static str, detail: String },

    #[error("{0}")]
    InvalidArgument(String),

    #[error("{op}: out of bounds: {detail}")]
    OutOfBounds { op: &'static str, detail: String },

    #[error("malformed file at {location}: {detail}")]
    Format { location: String, detail: String },

    #[error("rank-deficient design matrix (condition estimate {condition:e})")]
    RankDeficient { condition: f64 },

    #[error("non-finite loss at step {step}")]
    NonFinite { step: usize },

    #[error("rejected: {0}")]
    Rejected(String),

    #[error("no metric table for `{model}`; did stage `{stage}` run?")]
    MissingTable { stage: String, model: String },

    #[error("stage `{stage}` failed: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn shape_err(op: &'static str, detail: impl Into<String>) -> Error {
    Error::Shape {
        op,
        detail: detail.into(),
    }
}

pub(crate) fn format_err(location: impl Into<String>, detail: impl Into<String>) -> Error {
    Error::Format {
        location: location.into(),
        detail: detail.into(),
    }
}
