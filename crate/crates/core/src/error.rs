//! Error type shared by every stage of the pipeline.

use thiserror::Error;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad class of an [`Error`], used by the CLI to pick an exit status.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorKind {
    /// Bad input file, header or cell.
    Ingestion,
    /// The numbers could not be processed (singular, degenerate, ...).
    Numerical,
    /// Invalid arguments or configuration.
    Config,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("non-positive entry {value} at row {row}, column {column}")]
    NonPositiveEntry { row: usize, column: usize, value: f64 },

    #[error("{what} must be at least {min}, found {found}")]
    DimensionTooSmall {
        what: &'static str,
        found: usize,
        min: usize,
    },

    #[error("index {index} out of range for {len} parts")]
    IndexOutOfRange { index: usize, len: usize },

    #[error("index set must not be empty")]
    EmptyIndexSet,

    #[error("index set contains {0} more than once")]
    DuplicateIndex(usize),

    #[error("a permutation is required to build {0}")]
    MissingPermutation(&'static str),

    #[error("invalid permutation: {0}")]
    InvalidPermutation(String),

    #[error("incompatible reference: {0}")]
    IncompatibleReference(String),

    #[error("dimension mismatch: expected {expected}, found {found}")]
    DimensionMismatch { expected: String, found: String },

    #[error("degenerate data: {0}")]
    DegenerateData(String),

    #[error(
        "covariance is singular or ill-conditioned (condition number {condition:.3e}); \
         consider --shrinkage"
    )]
    SingularCovariance { condition: f64 },

    #[error("shrinkage intensity {0} outside [0, 1]")]
    LambdaOutOfRange(f64),

    #[error("explanatory covariance is singular (condition number {condition:.3e})")]
    SingularExplanatory { condition: f64 },

    #[error(
        "reference part {reference} is not among the controlled parts; \
         the residual would depend on the reference"
    )]
    InadmissibleReference { reference: usize },

    #[error("pseudoinverse diagonal entry {index} is {value}, expected > 0")]
    NonPositiveDiagonal { index: usize, value: f64 },

    #[error("part {index} has zero variance")]
    ZeroVariance { index: usize },

    #[error("invalid subset: {0}")]
    InvalidSubset(String),

    #[error("residuals disagree across admissible references (max deviation {max_deviation:.3e})")]
    ReferenceDisagreement { max_deviation: f64 },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("parse error at line {line}, column {column}: {message}")]
    Parse {
        line: usize,
        column: usize,
        message: String,
    },

    #[error("duplicate column header {0:?}")]
    DuplicateHeader(String),

    #[error("unknown column {0:?}")]
    UnknownColumn(String),

    #[error("{context}: {source}")]
    Context {
        context: String,
        #[source]
        source: Box<Error>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl Error {
    pub fn kind(&self) -> ErrorKind {
        match self {
            Error::NonPositiveEntry { .. }
            | Error::Parse { .. }
            | Error::DuplicateHeader(_)
            | Error::Io(_) => ErrorKind::Ingestion,
            Error::InvalidConfig(_)
            | Error::UnknownColumn(_)
            | Error::LambdaOutOfRange(_)
            | Error::IndexOutOfRange { .. }
            | Error::EmptyIndexSet
            | Error::DuplicateIndex(_)
            | Error::MissingPermutation(_)
            | Error::InvalidPermutation(_)
            | Error::InvalidSubset(_)
            | Error::IncompatibleReference(_)
            | Error::InadmissibleReference { .. } => ErrorKind::Config,
            Error::Context { source, .. } => source.kind(),
            _ => ErrorKind::Numerical,
        }
    }

    /// Wraps the error with a human-readable context prefix.
    pub fn context(self, context: impl Into<String>) -> Self {
        Error::Context {
            context: context.into(),
            source: Box::new(self),
        }
    }
}
