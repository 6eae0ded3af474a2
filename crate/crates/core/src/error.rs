use thiserror::Error;

/// Every fallible operation in the crate reports one of these.
#[derive(Debug, Error, Clone, PartialEq)]
pub enum Error {
    #[error("invalid argument: {0}")]
    InvalidArgument(String),

    #[error("parse error in field `{field}`: {message}")]
    Parse { field: String, message: String },

    #[error("contract violation: {0}")]
    Contract(String),

    #[error("unsupported operation: {0}")]
    Unsupported(String),

    #[error("matching condition violated: {0}")]
    Matching(String),

    #[error("analysis error: {0}")]
    Analysis(String),

    #[error("degenerate neck length T = {t}: system rank {rank} below expected {expected}")]
    DegenerateT { t: f64, rank: usize, expected: usize },

    #[error("right-hand side not orthogonal to the substitute cokernel (inconsistency {inconsistency:.3e})")]
    NotOrthogonal { inconsistency: f64 },

    #[error("no contraction: measured eta = {eta:.4} (increase T)")]
    NoContraction { eta: f64 },

    #[error("insufficient eigenvalues: window up to {window:.6e} not covered (largest computed {largest:.6e})")]
    InsufficientEigenvalues { window: f64, largest: f64 },

    #[error("resolution error: {0}")]
    Resolution(String),

    #[error("invalid test function: {0}")]
    InvalidTestFunction(String),

    #[error("io error: {0}")]
    Io(String),
}

impl From<std::io::Error> for Error {
    fn from(e: std::io::Error) -> Self {
        Error::Io(e.to_string())
    }
}

impl From<csv::Error> for Error {
    fn from(e: csv::Error) -> Self {
        Error::Io(e.to_string())
    }
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn parse_err(field: impl Into<String>, message: impl Into<String>) -> Error {
    Error::Parse {
        field: field.into(),
        message: message.into(),
    }
}
