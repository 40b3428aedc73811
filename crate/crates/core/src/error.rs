use std::path::PathBuf;

use thiserror::Error;

use crate::taxonomy::TaxonomyError;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Errors raised by the library. Every variant maps onto one CLI exit code
/// (see [`Error::exit_code`]) and one HTTP status in the service layer.
#[derive(Debug, Error)]
pub enum Error {
    #[error("object {value} is not in the value domain of predicate `{predicate}`")]
    DomainMismatch { predicate: String, value: String },

    #[error("invariant violation: {0}")]
    InvariantViolation(String),

    #[error("value out of range: {what} = {value} (expected {expected})")]
    OutOfRange {
        what: &'static str,
        value: f64,
        expected: &'static str,
    },

    #[error("unknown id `{0}`")]
    UnknownId(String),

    #[error("unknown source `{0}`")]
    UnknownSource(String),

    #[error("unknown predicate `{0}`")]
    UnknownPredicate(String),

    #[error("duplicate {what} `{id}`")]
    Duplicate { what: &'static str, id: String },

    #[error(transparent)]
    Taxonomy(#[from] TaxonomyError),

    #[error("invalid configuration: {0}")]
    Config(String),

    #[error("forward chaining did not reach a fixpoint after {iterations} iterations ({pending} triples still changing)")]
    NonTermination { iterations: usize, pending: usize },

    #[error("verdict `{0}` is undetermined; nothing to propagate")]
    VerdictUndetermined(String),

    #[error("verdict `{0}` has already been propagated")]
    AlreadyApplied(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("unsupported format version {found} (this build reads version {supported})")]
    VersionMismatch { found: u32, supported: u32 },

    #[error("integrity violation: {0}")]
    Integrity(String),

    #[error("state directory {0} is locked by another process")]
    Locked(PathBuf),

    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),

    #[error("JSON error: {0}")]
    Json(#[from] serde_json::Error),
}

impl Error {
    /// Process exit code used by the `ukg` binary: 2 for data and integrity
    /// problems, 3 for the forward-chaining guard. Usage errors (1) never
    /// originate in the library.
    pub fn exit_code(&self) -> i32 {
        match self {
            Error::NonTermination { .. } => 3,
            _ => 2,
        }
    }
}
