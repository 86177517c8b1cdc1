use caosd_core::CoreError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum MarketError {
    #[error("incomplete series: line {line} has a missing cell")]
    IncompleteSeries { line: u64 },

    #[error("unsorted input: date on line {line} does not follow the previous row")]
    UnsortedInput { line: u64 },

    #[error("invalid price {value} for {column} on line {line}")]
    InvalidPrice {
        line: u64,
        column: String,
        value: String,
    },

    #[error("invalid date {value:?} on line {line}")]
    InvalidDate { line: u64, value: String },

    #[error("malformed csv: {0}")]
    Csv(#[from] csv::Error),

    #[error("insufficient data: {0}")]
    InsufficientData(String),

    #[error("invalid model: {0}")]
    InvalidModel(String),

    #[error("covariance of state {state} is singular even after regularization")]
    SingularCovariance { state: usize },

    #[error("action violates the allocation constraints (max violation {violation:.3e})")]
    ConstraintViolation { violation: f64 },

    #[error("episode finished; call reset")]
    EpisodeFinished,

    #[error("policy failed: {0}")]
    Policy(String),

    #[error(transparent)]
    Core(#[from] CoreError),
}

pub type Result<T> = std::result::Result<T, MarketError>;
