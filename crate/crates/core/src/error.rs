use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid polygon: {0}")]
    InvalidPolygon(String),
    #[error("degenerate edge at vertex {index}")]
    DegenerateEdge { index: usize },
    #[error("iou undefined for zero-area union")]
    UndefinedIou,
    #[error("degenerate result: {0}")]
    DegenerateResult(String),
    #[error("capacity exceeded: {what} ({got} > {limit})")]
    Capacity {
        what: &'static str,
        got: usize,
        limit: usize,
    },
    #[error("degenerate extent: {0}")]
    DegenerateExtent(String),
    #[error("empty mask")]
    EmptyMask,
    #[error("scene generation failed: {0}")]
    Generation(String),
    #[error("schema error in {path}: {msg}")]
    Schema { path: PathBuf, msg: String },
    #[error("dimension mismatch: expected {expected:?}, got {got:?}")]
    DimensionMismatch {
        expected: (usize, usize),
        got: (usize, usize),
    },
    #[error("shape error: {0}")]
    Shape(String),
    #[error("contract violation: {0}")]
    Contract(String),
    #[error("numeric failure: {0}")]
    Numeric(String),
    #[error("frame mismatch: prediction {pred:?} vs ground truth {gt:?}")]
    FrameMismatch {
        pred: (usize, usize),
        gt: (usize, usize),
    },
    #[error("coverage error: {0}")]
    Coverage(String),
    #[error("config error: {0}")]
    Config(String),
    #[error("{path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("{path}: {source}")]
    Json {
        path: PathBuf,
        #[source]
        source: serde_json::Error,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn json(path: impl Into<PathBuf>, source: serde_json::Error) -> Self {
        Error::Json {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn schema(path: impl Into<PathBuf>, msg: impl Into<String>) -> Self {
        Error::Schema {
            path: path.into(),
            msg: msg.into(),
        }
    }

    /// True for errors caused by bad input data rather than numerics or misuse.
    pub fn is_data_error(&self) -> bool {
        matches!(
            self,
            Error::Schema { .. }
                | Error::DimensionMismatch { .. }
                | Error::Io { .. }
                | Error::Json { .. }
                | Error::InvalidPolygon(_)
                | Error::EmptyMask
                | Error::FrameMismatch { .. }
                | Error::Coverage(_)
                | Error::Capacity { .. }
                | Error::Generation(_)
        )
    }
}
