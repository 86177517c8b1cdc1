use caosd_agent::AgentError;
use caosd_core::CoreError;
use caosd_market::MarketError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid input: {0}")]
    InvalidInput(String),

    #[error("missing input: {0}")]
    MissingInput(String),

    #[error("experiment sets differ: {0}")]
    MismatchedExperiments(String),

    #[error("io error on {path}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },

    #[error(transparent)]
    Json(#[from] serde_json::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Core(#[from] CoreError),

    #[error(transparent)]
    Market(#[from] MarketError),

    #[error(transparent)]
    Agent(#[from] AgentError),
}

impl HarnessError {
    pub(crate) fn io(path: &std::path::Path, source: std::io::Error) -> Self {
        Self::Io {
            path: path.display().to_string(),
            source,
        }
    }
}

pub type Result<T> = std::result::Result<T, HarnessError>;
