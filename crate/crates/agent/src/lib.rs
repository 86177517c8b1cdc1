//! The constrained allocation agent: an autoregressive Dirichlet policy whose
//! samples are composed into feasible allocations, and a clipped
//! policy-gradient trainer for it.

pub mod dirichlet;
pub mod error;
pub mod nn;
pub mod policy;
pub mod trainer;

pub use error::{AgentError, Result};
pub use policy::{
    BranchParams, CaosdPolicy, Checkpoint, Cotangent, EncoderConfig, Evaluation, Greedy,
    PolicyConfig, PolicyOutput, Stochastic,
};
pub use trainer::{
    collect_rollouts, compute_gae, derive_seed, evaluate_greedy, normal_ci, ppo_update, train,
    Adam, CurveRow, RolloutBatch, RolloutCollector, TrainConfig, TrainOutcome, UpdateStats,
};
