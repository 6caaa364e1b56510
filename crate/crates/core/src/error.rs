//! Shared error type for the whole crate.

use thiserror::Error;

/// Errors produced by any operation in this crate.
///
/// The CLI maps these onto exit codes: everything except
/// [`Error::NumericalFailure`] is a data/usage problem.
#[derive(Debug, Error)]
pub enum Error {
    /// An argument violated a precondition (empty matrix, bad size, ...).
    #[error("invalid input: {0}")]
    InvalidInput(String),

    /// Two operands had incompatible shapes.
    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    /// Training data contains only one class.
    #[error("degenerate labels: {0}")]
    DegenerateLabels(String),

    /// A feature row is identically zero where a strictly positive
    /// row norm is required; drop empty rows before calling.
    #[error("degenerate feature: {0}")]
    DegenerateFeature(String),

    /// A factorization or matrix square root failed beyond repair.
    #[error("numerical failure: {reason} (condition estimate {condition:.3e})")]
    NumericalFailure { reason: String, condition: f64 },

    /// A text or binary input could not be parsed.
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    /// Filesystem trouble, annotated with the offending path.
    #[error("io error on {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    /// A layer of the stack failed; wraps the underlying error.
    #[error("layer {layer}: {source}")]
    Layer {
        layer: usize,
        #[source]
        source: Box<Error>,
    },

    /// A pipeline stage failed; wraps the underlying error.
    #[error("stage {stage}: {source}")]
    Stage {
        stage: String,
        #[source]
        source: Box<Error>,
    },
}

impl Error {
    /// Walks wrapper variants down to the root cause.
    pub fn root(&self) -> &Error {
        match self {
            Error::Layer { source, .. } | Error::Stage { source, .. } => source.root(),
            other => other,
        }
    }

    /// True when the root cause is a numerical (not data) failure.
    pub fn is_numerical(&self) -> bool {
        matches!(self.root(), Error::NumericalFailure { .. })
    }

    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Error::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, Error>;
