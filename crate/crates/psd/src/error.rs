use thiserror::Error;

/// Errors produced by tree construction, mechanisms, and the harness.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("degenerate region: {0}")]
    DegenerateRegion(String),

    #[error("budget audit failed: {0}")]
    BudgetAudit(String),

    #[error("invalid tree: {0}")]
    InvalidTree(String),

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("workload generation gave up after {attempts} rejected placements; use larger query shapes")]
    WorkloadRejection { attempts: usize },

    #[error("io error: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T> = std::result::Result<T, Error>;

impl Error {
    pub fn invalid(msg: impl Into<String>) -> Self {
        Error::InvalidParameter(msg.into())
    }
}
