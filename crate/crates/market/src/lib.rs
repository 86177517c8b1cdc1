//! Market side of the portfolio task: monthly price ingestion, a Gaussian HMM
//! return model, and the simulation and backtesting environments.
//!
//! Asset 0 is cash by convention (zero return, zero variance) whenever the
//! first label is `CASH`.

pub mod env;
pub mod error;
pub mod hmm;
mod linalg;
pub mod prices;

pub use env::{
    run_backtest, run_episode, AllocationPolicy, EnvConfig, EpisodeRecord, HistoricalMarket,
    Observation, PortfolioEnv, ReturnSource, SimulatedMarket, StepOutcome, StepRecord,
};
pub use error::{MarketError, Result};
pub use hmm::{fit_hmm, CovarianceKind, FitOptions, FitReport, MarketModel};
pub use prices::{ingest_prices, ingest_prices_path, to_returns, PriceTable, ReturnMatrix};
