use thiserror::Error;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("dimension mismatch: expected {expected}, got {got}")]
    DimensionMismatch { expected: usize, got: usize },
    #[error("non-finite input in {0}")]
    NonFinite(&'static str),
    #[error("invalid label {label} for {kind}")]
    InvalidLabel { label: f64, kind: &'static str },
    #[error("invalid argument `{field}`: {reason}")]
    InvalidArgument { field: &'static str, reason: String },
    #[error("covariance matrix is not positive semi-definite")]
    NotPsd,
    #[error("unsupported loss kind for {0}")]
    UnsupportedKind(&'static str),
    #[error("teacher returned a non-finite prediction on {split} row {row}")]
    PoisonedTeacher { split: &'static str, row: usize },
    #[error("degenerate input: {0}")]
    Degenerate(&'static str),
    #[error("empty data: {0}")]
    EmptyData(String),
    #[error("non-finite value produced by {0}")]
    Diverged(&'static str),
    #[error("csv: {0}")]
    Csv(String),
    #[error("io: {0}")]
    Io(String),
}

impl Error {
    pub(crate) fn invalid(field: &'static str, reason: impl Into<String>) -> Self {
        Error::InvalidArgument {
            field,
            reason: reason.into(),
        }
    }
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
