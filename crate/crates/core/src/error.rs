use std::path::PathBuf;

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch in {op}: {detail}")]
    Dimension { op: &'static str, detail: String },

    #[error("numerical failure: {0}")]
    Numerical(String),

    #[error("view has no valid depth pixels")]
    EmptyView,

    #[error("point cloud is empty")]
    EmptyCloud,

    #[error("scene has no valid tokens or points")]
    EmptyScene,

    #[error("stream {stream}: frame {got} does not follow last stored frame {last}")]
    Ordering { stream: String, last: usize, got: usize },

    #[error("lookup failed: {0}")]
    Lookup(String),

    #[error("invalid state: {0}")]
    State(String),

    #[error("assignment infeasible: {ground_truths} ground truths but only {queries} queries")]
    Infeasible { queries: usize, ground_truths: usize },

    #[error("failed to ingest {}: {reason}", path.display())]
    Ingestion { path: PathBuf, reason: String },

    #[error("validation failed: {0}")]
    Validation(String),

    #[error("configuration error: {0}")]
    Config(String),

    #[error("scene generation failed: {0}")]
    Generation(String),

    #[error("training diverged at step {step}: loss {loss}")]
    Divergence { step: usize, loss: f64 },

    #[error("weight file error: {0}")]
    WeightFormat(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn dim(op: &'static str, detail: impl Into<String>) -> Self {
        Error::Dimension { op, detail: detail.into() }
    }

    pub(crate) fn ingest(path: impl Into<PathBuf>, reason: impl Into<String>) -> Self {
        Error::Ingestion { path: path.into(), reason: reason.into() }
    }
}
