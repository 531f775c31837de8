use thiserror::Error;

/// Errors raised across the crate.
#[derive(Debug, Error)]
pub enum Error {
    #[error("dimension mismatch: {0}")]
    Dimension(String),
    #[error("invalid argument: {0}")]
    InvalidArgument(String),
    #[error("system is not observable")]
    NotObservable,
    #[error("system is not controllable")]
    NotControllable,
    #[error("input is not persistently exciting of order {order} (rank {rank} < {required})")]
    NotPersistentlyExciting { order: usize, rank: usize, required: usize },
    #[error("data too short: need at least {required} samples, got {got}")]
    DataTooShort { required: usize, got: usize },
    #[error("matrix is rank deficient: {0}")]
    RankDeficient(String),
    #[error("Riccati iteration did not converge after {0} steps")]
    RiccatiNotConverged(usize),
    #[error("optimization problem is infeasible")]
    Infeasible,
    #[error("optimization problem is unbounded")]
    Unbounded,
    #[error("solver failed: {0}")]
    NumericalFailure(String),
    #[error("configuration error: {0}")]
    Config(String),
    #[error("I/O error: {0}")]
    Io(#[from] std::io::Error),
    #[error("CSV error: {0}")]
    Csv(#[from] csv::Error),
    #[error("parse error: {0}")]
    Parse(String),
}

pub type Result<T> = std::result::Result<T, Error>;

pub(crate) fn dim_err<T>(msg: impl Into<String>) -> Result<T> {
    Err(Error::Dimension(msg.into()))
}
