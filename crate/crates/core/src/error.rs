use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("shape mismatch in {context}: expected {expected}, got {got}")]
    Shape {
        context: &'static str,
        expected: usize,
        got: usize,
    },

    #[error("non-finite value produced by {term}")]
    NonFinite { term: String },

    #[error("schema error: {0}")]
    Schema(String),

    #[error("row {row}: {message}")]
    Row { row: usize, message: String },

    #[error("invalid data: {0}")]
    Data(String),

    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("both treatment cohorts are required, found only {present}")]
    SingleCohort { present: &'static str },

    #[error("degenerate model: {0}")]
    Degenerate(String),

    #[error("every training restart aborted ({0} attempted)")]
    AllRestartsFailed(usize),

    #[error("config error: {0}")]
    Config(String),

    #[error("config error: {0}")]
    Toml(#[from] toml::de::Error),

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

/// Coarse failure classes, used by the CLI to pick an exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ErrorClass {
    Config,
    Data,
    Numeric,
    Io,
}

impl Error {
    pub fn class(&self) -> ErrorClass {
        match self {
            Error::Config(_) | Error::Toml(_) | Error::InvalidArgument(_) => ErrorClass::Config,
            Error::Schema(_) | Error::Row { .. } | Error::Data(_) | Error::SingleCohort { .. } => {
                ErrorClass::Data
            }
            Error::Csv(_) => ErrorClass::Data,
            Error::Shape { .. }
            | Error::NonFinite { .. }
            | Error::Degenerate(_)
            | Error::AllRestartsFailed(_) => ErrorClass::Numeric,
            Error::Io(_) | Error::Json(_) => ErrorClass::Io,
        }
    }

    pub(crate) fn non_finite(term: impl Into<String>) -> Self {
        Error::NonFinite { term: term.into() }
    }
}
