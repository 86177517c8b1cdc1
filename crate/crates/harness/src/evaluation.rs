use std::path::Path;
use std::sync::Arc;

use caosd_agent::{derive_seed, evaluate_greedy, CaosdPolicy, Greedy};
use caosd_core::{init_sampler_with, ConstraintConfig, SamplerOptions};
use caosd_market::{
    run_backtest, run_episode, EnvConfig, HistoricalMarket, MarketModel, Observation, PortfolioEnv,
    ReturnMatrix, SimulatedMarket,
};
use rayon::prelude::*;

use crate::error::{HarnessError, Result};
use crate::io::read_nu;

#[derive(Debug, Clone, Copy)]
pub enum Market<'a> {
    Sim(&'a Arc<MarketModel>),
    Backtest(&'a ReturnMatrix),
}

#[derive(Debug, Clone, Copy)]
pub enum Approach<'a> {
    Caosd(&'a CaosdPolicy),
    Random,
    /// Per-episode results produced elsewhere, read from a CSV `nu` column.
    External(&'a Path),
}

#[derive(Debug, Clone, Copy)]
pub struct EvalSettings {
    pub env: EnvConfig,
    pub episodes: usize,
    pub seed: u64,
    pub sampler: SamplerOptions,
}

/// Episode returns of `approach` under `cfg`.
///
/// Simulated episode `j` uses market seed `derive_seed(seed, j)` for every
/// approach. In a backtest the deterministic policy yields one return and the
/// random baseline `episodes` returns.
pub fn evaluate_approach(
    approach: Approach<'_>,
    cfg: &ConstraintConfig,
    market: Market<'_>,
    s: &EvalSettings,
) -> Result<Vec<f64>> {
    if s.episodes < 2
        && !matches!(
            (approach, market),
            (Approach::Caosd(_), Market::Backtest(_))
        )
    {
        return Err(HarnessError::InvalidInput(
            "at least 2 evaluation episodes are required".into(),
        ));
    }
    match (approach, market) {
        (Approach::Caosd(p), _) if p.constraints() != cfg => Err(HarnessError::InvalidInput(
            "policy was trained for a different constraint config".into(),
        )),
        (Approach::Caosd(p), Market::Sim(model)) => {
            Ok(evaluate_greedy(p, model, &s.env, s.episodes, s.seed)?)
        }
        (Approach::Caosd(p), Market::Backtest(returns)) => {
            Ok(vec![run_backtest(returns, &mut Greedy(p), cfg, &s.env)?.nu])
        }
        (Approach::Random, Market::Sim(model)) => (0..s.episodes)
            .into_par_iter()
            .map(|j| {
                let episode_seed = derive_seed(s.seed, j as u64);
                let market = SimulatedMarket::new(model.clone(), episode_seed);
                let env = PortfolioEnv::new(s.env, cfg.clone(), market)?;
                random_episode(env, cfg, derive_seed(episode_seed, 1), s.sampler)
            })
            .collect(),
        (Approach::Random, Market::Backtest(returns)) => {
            let needed = s.env.horizon + 1;
            if returns.n_rows() < needed {
                return Err(HarnessError::InvalidInput(format!(
                    "backtest needs {needed} return rows, got {}",
                    returns.n_rows()
                )));
            }
            (0..s.episodes)
                .into_par_iter()
                .map(|j| {
                    let env =
                        PortfolioEnv::new(s.env, cfg.clone(), HistoricalMarket::new(returns)?)?;
                    random_episode(env, cfg, derive_seed(s.seed, j as u64), s.sampler)
                })
                .collect()
        }
        (Approach::External(path), _) => read_nu(path),
    }
}

fn random_episode<S: caosd_market::ReturnSource>(
    mut env: PortfolioEnv<S>,
    cfg: &ConstraintConfig,
    seed: u64,
    options: SamplerOptions,
) -> Result<f64> {
    let mut sampler = init_sampler_with(cfg, seed, options)?;
    let mut policy = |_: &Observation| Ok(sampler.next_allocation());
    Ok(run_episode(&mut env, &mut policy)?.nu)
}
