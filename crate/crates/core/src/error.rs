//! Crate-wide error type.

use std::path::PathBuf;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// An argument or value violated a documented range or shape rule.
    #[error("validation error: {0}")]
    Validation(String),

    /// A required CSV column is missing from the header.
    #[error("schema error: missing required column `{column}`")]
    Schema { column: String },

    /// A data row could not be parsed.
    #[error("line {line}: {message}")]
    Row { line: u64, message: String },

    /// Every rating fell in one category, so chance agreement is 1 and kappa is undefined.
    #[error("degenerate agreement: all ratings fall in a single category, kappa is undefined")]
    DegenerateAgreement,

    /// Ground truth has zero variance, so R² is undefined.
    #[error("undefined variance: truth values are all identical")]
    UndefinedVariance,

    /// Experiment configuration failed validation; each entry names a key.
    #[error("invalid configuration: {}", .0.join("; "))]
    Config(Vec<String>),

    /// Checkpoint bytes are malformed (magic, version, truncation).
    #[error("checkpoint format error: {0}")]
    Format(String),

    /// Checkpoint tensors conflict with the network layout.
    #[error("incompatible checkpoint: {}", .names.join(", "))]
    Incompatible { names: Vec<String> },

    /// A non-finite gradient or loss appeared during training.
    #[error("training diverged: non-finite value in `{param}`")]
    Divergence { param: String },

    /// An operation was invoked in the wrong state (e.g. backward without a forward pass).
    #[error("state error: {0}")]
    State(String),

    /// Cross-validation ended with too few successful trials.
    #[error("aggregation error: {successful} successful trial(s), at least 2 required")]
    Aggregation { successful: usize },

    #[error("I/O error on {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },

    #[error("image decode error on {path}: {message}")]
    Image { path: PathBuf, message: String },

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub(crate) fn validation(msg: impl Into<String>) -> Self {
        Error::Validation(msg.into())
    }

    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error class: 2 validation/config, 3 runtime, 4 I/O.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Validation(_)
            | Error::Schema { .. }
            | Error::Row { .. }
            | Error::DegenerateAgreement
            | Error::UndefinedVariance
            | Error::Config(_)
            | Error::Format(_)
            | Error::Incompatible { .. }
            | Error::Image { .. }
            | Error::Json(_) => 2,
            Error::Divergence { .. } | Error::State(_) | Error::Aggregation { .. } => 3,
            Error::Io { .. } => 4,
        }
    }
}
