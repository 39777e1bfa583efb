// SPDX-License-Identifier: MIT OR Apache-2.0

//! Crate-wide error type.

use std::path::PathBuf;

/// Result alias used throughout the crate.
pub type Result<T> = std::result::Result<T, Error>;

/// Errors produced by the probing and steering toolkit.
#[derive(Debug, thiserror::Error)]
pub enum Error {
    /// A comment span does not originate from the source it was paired with.
    #[error("span {start}..{end} does not belong to the source (len {len})")]
    ForeignSpan {
        /// Span start offset.
        start: usize,
        /// Span end offset.
        end: usize,
        /// Source length in bytes.
        len: usize,
    },

    /// A numeric or structural argument is outside its domain.
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    /// Not enough records to satisfy a split or curve request.
    #[error("insufficient data: need {required}, have {available}")]
    InsufficientData {
        /// Records required.
        required: usize,
        /// Records available.
        available: usize,
    },

    /// Vector lengths disagree.
    #[error("dimension mismatch: expected {expected}, got {found}")]
    DimensionMismatch {
        /// Expected length.
        expected: usize,
        /// Observed length.
        found: usize,
    },

    /// An input collection that must be non-empty was empty.
    #[error("empty input: {0}")]
    Empty(&'static str),

    /// A probe whose weight vector is identically zero has no direction.
    #[error("probe weight vector is zero")]
    ZeroWeight,

    /// The requested steering direction would need a negative step.
    #[error("direction condition violated: logit {logit} vs target logit {target_logit}")]
    DirectionViolated {
        /// Current probe logit.
        logit: f64,
        /// Target logit.
        target_logit: f64,
    },

    /// A steering plan has no probe for a layer it was asked about.
    #[error("no probe for layer {0}")]
    MissingProbe(usize),

    /// Relative delta against a zero baseline.
    #[error("relative delta is undefined for a zero baseline")]
    UndefinedBaseline,

    /// Token sequence longer than the model context.
    #[error("sequence of {len} tokens exceeds max_seq {max}")]
    SequenceTooLong {
        /// Sequence length.
        len: usize,
        /// Model limit.
        max: usize,
    },

    /// Malformed model file.
    #[error("model file: {0}")]
    ModelFormat(String),

    /// A type invariant failed at construction.
    #[error("invariant violated: {0}")]
    Invariant(String),

    /// Filesystem failure with the offending path.
    #[error("{path}: {source}")]
    Io {
        /// Path being read or written.
        path: PathBuf,
        /// Underlying error.
        #[source]
        source: std::io::Error,
    },

    /// JSON (de)serialization failure.
    #[error("json: {0}")]
    Json(#[from] serde_json::Error),

    /// A pipeline stage failed.
    #[error("stage `{stage}` failed: {message}")]
    Stage {
        /// Stage name.
        stage: String,
        /// Failure description.
        message: String,
    },
}

impl Error {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        Error::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this error: 2 for data problems, 3 for
    /// internal invariant violations.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::Invariant(_) => 3,
            _ => 2,
        }
    }
}
