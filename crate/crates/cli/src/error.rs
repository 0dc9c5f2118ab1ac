use std::path::PathBuf;

use thiserror::Error;

#[derive(Debug, Error)]
pub enum CliError {
    #[error(transparent)]
    Core(#[from] fisheropt::Error),

    /// A configuration document failed to deserialize; `pointer` is a JSON pointer
    /// into `file`.
    #[error("{file}: schema error at {pointer}: {message}")]
    Schema {
        file: String,
        pointer: String,
        message: String,
    },

    #[error("{}: {source}", .path.display())]
    Io {
        path: PathBuf,
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error("invalid argument: {0}")]
    Invalid(String),

    #[error("no solution records in {}", .0.display())]
    NoData(PathBuf),

    #[error("sweep check failed:\n{}", .0.join("\n"))]
    SweepCheck(Vec<String>),

    #[error("solution check failed: {}", .0.join("; "))]
    CheckFailed(Vec<String>),

    #[error("no feasible selection at budget ${0}")]
    Infeasible(i64),

    #[error("report parse error: {0}")]
    Report(String),
}

pub type Result<T> = std::result::Result<T, CliError>;

impl CliError {
    pub(crate) fn io(path: impl Into<PathBuf>, source: std::io::Error) -> Self {
        CliError::Io {
            path: path.into(),
            source,
        }
    }

    /// Process exit code for this failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            CliError::Infeasible(_) => 2,
            CliError::CheckFailed(_) | CliError::SweepCheck(_) => 3,
            _ => 1,
        }
    }
}
