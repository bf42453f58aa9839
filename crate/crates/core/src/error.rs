use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("format error at byte {offset}: {msg}")]
    Format { offset: u64, msg: String },

    #[error("malformed manifest: {0}")]
    MalformedManifest(String),

    #[error("precondition failed: {0}")]
    Precondition(String),

    #[error("missing soft labels for utterances: {}", .0.join(", "))]
    MissingSoftLabels(Vec<String>),

    #[error("class '{class}' short by {shortfall} utterances for its quota of {quota}")]
    Quota {
        class: String,
        quota: usize,
        shortfall: usize,
    },

    #[error("insufficient data: {rows} rows for {k} clusters")]
    InsufficientData { rows: usize, k: usize },

    #[error("non-finite value at row {row}, column {col}")]
    NonFinite { row: usize, col: usize },

    #[error("degenerate input at row {row}: {msg}")]
    Degenerate { row: usize, msg: String },

    #[error("distribution not normalized: sum = {sum}")]
    Normalization { sum: f64 },

    #[error("class coverage: no training examples for class(es) {}", .0.join(", "))]
    ClassCoverage(Vec<String>),

    #[error("depth {depth} outside [1, {max}]")]
    DepthOutOfRange { depth: usize, max: usize },

    #[error("empty input: {0}")]
    EmptyInput(String),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("unknown emotion label '{0}'")]
    UnknownLabel(String),

    #[error("i/o error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("serialization: {0}")]
    Serde(String),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Coarse classification used by the CLI for exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Validation,
    Data,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Shape(_)
            | Error::Precondition(_)
            | Error::MissingSoftLabels(_)
            | Error::Quota { .. }
            | Error::InsufficientData { .. }
            | Error::DepthOutOfRange { .. }
            | Error::ClassCoverage(_)
            | Error::Config(_)
            | Error::UnknownLabel(_) => ErrorClass::Validation,
            Error::Format { .. }
            | Error::MalformedManifest(_)
            | Error::NonFinite { .. }
            | Error::Degenerate { .. }
            | Error::Normalization { .. }
            | Error::EmptyInput(_)
            | Error::Io { .. }
            | Error::Serde(_) => ErrorClass::Data,
        }
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    pub(crate) fn format(offset: u64, msg: impl Into<String>) -> Self {
        Error::Format {
            offset,
            msg: msg.into(),
        }
    }
}
