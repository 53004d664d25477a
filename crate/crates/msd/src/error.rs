//! Error types shared across the library.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    /// An operator was applied to tensors whose shapes do not conform.
    #[error("{op}: invalid shape {lhs:?} vs {rhs:?}")]
    InvalidShape {
        op: String,
        lhs: Vec<usize>,
        rhs: Vec<usize>,
    },

    /// A caller violated an API precondition (non-scalar backward root,
    /// out-of-range label, stale graph handle, mismatched parameter names, ...).
    #[error("contract violation: {0}")]
    Contract(String),

    /// A loss became non-finite during an inner-loop update.
    #[error("non-finite loss at inner step {step}")]
    Divergence { step: usize },

    /// A numeric quantity outside an inner loop became non-finite.
    #[error("numeric error: {0}")]
    Numeric(String),

    /// A dataset cannot satisfy a sampling request.
    #[error("capacity error: {0}")]
    Capacity(String),

    /// An operation was applied to data of the wrong modality.
    #[error("modality error: {0}")]
    Modality(String),

    /// A byte stream could not be parsed; `offset` points at the failure.
    #[error("parse error at byte {offset}: {msg}")]
    Parse { offset: usize, msg: String },

    /// A checkpoint container failed validation; `offset` points at the failure.
    #[error("corrupt checkpoint at byte {offset}: {msg}")]
    CorruptCheckpoint { offset: usize, msg: String },

    /// A run configuration is unreadable or inconsistent.
    #[error("config error: {0}")]
    Config(String),

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn invalid_shape(op: &str, lhs: &[usize], rhs: &[usize]) -> Self {
        Error::InvalidShape {
            op: op.to_string(),
            lhs: lhs.to_vec(),
            rhs: rhs.to_vec(),
        }
    }

    /// Diagnostic category and process exit code for the CLI.
    pub fn category(&self) -> (&'static str, i32) {
        match self {
            Error::Config(_) => ("config", 3),
            Error::InvalidShape { .. }
            | Error::Capacity(_)
            | Error::Modality(_)
            | Error::Parse { .. } => ("data", 4),
            Error::Divergence { .. } | Error::Numeric(_) => ("numeric", 5),
            Error::Io(_) | Error::Json(_) | Error::CorruptCheckpoint { .. } => ("io", 6),
            Error::Contract(_) => ("contract", 7),
        }
    }
}
