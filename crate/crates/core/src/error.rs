use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),

    #[error("insufficient items: informative size measure needs at least 7 columns, got {0}")]
    InsufficientItems(usize),

    #[error("invalid design: {0}")]
    Design(String),

    #[error("covariates collinear: weighted gram matrix is not positive definite")]
    Collinear,

    #[error("non-finite value on observed cell ({row}, {col})")]
    NonFiniteObserved { row: usize, col: usize },

    #[error("cross-validation: {0}")]
    CrossValidation(String),

    #[error("invalid input: {0}")]
    Invalid(String),

    #[error("too many replicate failures: {failed} of {total}")]
    TooManyFailures { failed: usize, total: usize },

    #[error("csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("io: {0}")]
    Io(#[from] std::io::Error),
}

pub type Result<T, E = Error> = std::result::Result<T, E>;
