use thiserror::Error;

use crate::ingest::ValidationReport;

pub type Result<T, E = Error> = std::result::Result<T, E>;

/// Broad classification used by front ends to pick exit codes.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    /// Bad arguments, unknown ids, lock contention.
    User,
    /// Input data or analysis expectations not met.
    Data,
    /// Storage or I/O failure.
    Internal,
}

#[derive(Debug, Error)]
pub enum Error {
    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("domain error: {0}")]
    Domain(String),

    #[error("dataset {} failed validation ({} error(s))", .0.dataset_ref, .0.error_count())]
    Validation(ValidationReport),

    #[error("store schema version {found} is newer than supported version {supported}")]
    Version { found: i64, supported: i64 },

    #[error("parameter error: {0}")]
    Params(String),

    #[error("invalid standard definition: {0}")]
    Definition(String),

    #[error("analysis failed: {0}")]
    Analysis(String),

    #[error("duplicate result key {0}")]
    Duplicate(String),

    #[error("{0} not found")]
    NotFound(String),

    #[error("store is locked: {0}")]
    Locked(String),

    #[error("cannot open store: {0}")]
    Open(String),

    #[error("render error: {0}")]
    Render(String),

    #[error("pivot collision at {0}")]
    Pivot(String),

    #[error("invalid argument: {0}")]
    Argument(String),

    #[error("store error: {0}")]
    Sqlite(#[from] rusqlite::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Parse { .. }
            | Error::Domain(_)
            | Error::Validation(_)
            | Error::Analysis(_)
            | Error::Duplicate(_) => ErrorClass::Data,
            Error::Params(_)
            | Error::Definition(_)
            | Error::NotFound(_)
            | Error::Locked(_)
            | Error::Open(_)
            | Error::Render(_)
            | Error::Pivot(_)
            | Error::Argument(_)
            | Error::Version { .. } => ErrorClass::User,
            Error::Sqlite(_) | Error::Io(_) | Error::Json(_) => ErrorClass::Internal,
        }
    }
}
