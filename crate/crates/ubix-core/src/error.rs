//! Crate-wide error type.

use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-finite value in {context}")]
    NonFinite { context: String },

    #[error("class index {value} out of range 1..={n_classes}")]
    InvalidClass { value: usize, n_classes: usize },

    #[error("invalid shape: {reason}")]
    InvalidShape { reason: String },

    #[error("bag '{bag_id}' has no instances")]
    EmptyBag { bag_id: String },

    #[error("{context}: expected shape (M={expected_m}, C={expected_c}), found (M={found_m}, C={found_c})")]
    ShapeMismatch {
        context: String,
        expected_m: usize,
        expected_c: usize,
        found_m: usize,
        found_c: usize,
    },

    #[error("invalid probability vector: {reason}")]
    InvalidProbability { reason: String },

    #[error("validation set is empty")]
    EmptyValidation,

    #[error("bags without labels: {}", bag_ids.join(", "))]
    UnlabeledBags { bag_ids: Vec<String> },

    #[error("validation labels are degenerate: {distinct} distinct class(es), need at least 2")]
    DegenerateLabels { distinct: usize },

    #[error("length mismatch in {context}: {left} vs {right}")]
    LengthMismatch {
        context: String,
        left: usize,
        right: usize,
    },

    #[error("{metric} undefined: {reason}")]
    MetricUndefined { metric: &'static str, reason: String },

    #[error("invalid parameters: {reason}")]
    InvalidParams { reason: String },

    #[error("invalid configuration: {reason}")]
    InvalidConfig { reason: String },

    #[error("line {line}: {message}")]
    FixtureParse { line: usize, message: String },

    #[error("failed to decode {context}: {message}")]
    Decode { context: String, message: String },

    #[error("bag ids with no counterpart: {}", bag_ids.join(", "))]
    UnmatchedBags { bag_ids: Vec<String> },

    #[error("dataset contains no artifact-corrupted instances")]
    NoArtifacts,

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    /// Process exit code for the CLI: 2 for I/O failures, 1 for everything
    /// else (validation of inputs, shapes, parameters).
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Io(_) => 2,
            _ => 1,
        }
    }
}
