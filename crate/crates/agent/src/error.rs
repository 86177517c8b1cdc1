use caosd_core::CoreError;
use caosd_market::MarketError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum AgentError {
    #[error("non-finite input: {0}")]
    NonFiniteInput(String),

    #[error(
        "non-finite loss in update (policy {policy_loss}, value {value_loss}, entropy {entropy})"
    )]
    NonFiniteLoss {
        policy_loss: f64,
        value_loss: f64,
        entropy: f64,
    },

    #[error("invalid configuration: {0}")]
    InvalidConfig(String),

    #[error("checkpoint mismatch: {0}")]
    Checkpoint(String),

    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),

    #[error("json error: {0}")]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Market(#[from] MarketError),
}

pub type Result<T> = std::result::Result<T, AgentError>;
