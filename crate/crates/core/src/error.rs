use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("shape mismatch: {0}")]
    Shape(String),

    #[error("matrix is not positive definite (pivot {pivot}){context}")]
    NotPositiveDefinite { pivot: usize, context: String },

    #[error("numeric failure in {what} after {iterations} iterations")]
    NumericFailure { what: String, iterations: usize },

    #[error("incomplete data: {total} missing cells, first: {}", .missing.join(", "))]
    IncompleteData { missing: Vec<String>, total: usize },

    #[error("invalid value {value} at row {row}, column {column}")]
    InvalidValue {
        row: usize,
        column: String,
        value: String,
    },

    #[error("duplicate item name: {0}")]
    DuplicateItem(String),

    #[error("value out of domain: {0}")]
    Domain(String),

    #[error("enumeration refused: {items} items exceeds cap {cap}")]
    CapExceeded { items: usize, cap: usize },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub(crate) fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidInput(msg.into())
    }

    pub(crate) fn shape(msg: impl Into<String>) -> Self {
        Error::Shape(msg.into())
    }
}
