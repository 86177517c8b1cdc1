//! Portfolio environments: a simulated market driven by a [`MarketModel`] and a
//! historical replay for backtests.
//!
//! Timeline of one step: the agent observes `(wealth, a_{t-1}, ϑ_{t-1})`,
//! picks `a_t`, the market realizes `ϑ_t`, and the reward is
//! `r = a_tᵀϑ_t − κ·‖a_t − drift(a_{t-1})‖₁`, where `drift` is the previous
//! allocation after it was carried through `ϑ_{t-1}`.

use std::sync::Arc;

use caosd_core::simplex_decomp::SIMPLEX_TOL;
use caosd_core::{lp::chebyshev_center, Allocation, ConstraintConfig, HPolytope};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::hmm::MarketModel;
use crate::prices::ReturnMatrix;

pub const DEFAULT_HORIZON: usize = 12;
pub const DEFAULT_COST_RATE: f64 = 0.001;
pub const MAX_COST_RATE: f64 = 0.02;
/// Simulated per-asset returns are floored here so wealth stays positive.
pub const RETURN_FLOOR: f64 = -0.95;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnvConfig {
    pub horizon: usize,
    pub initial_wealth: f64,
    /// Proportional turnover cost κ.
    pub cost_rate: f64,
    /// Reject non-member actions instead of repairing them.
    pub strict_membership: bool,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            horizon: DEFAULT_HORIZON,
            initial_wealth: 1.0,
            cost_rate: DEFAULT_COST_RATE,
            strict_membership: true,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self) -> Result<()> {
        if self.horizon == 0 {
            return Err(MarketError::InsufficientData(
                "horizon must be positive".into(),
            ));
        }
        if !(self.initial_wealth > 0.0 && self.initial_wealth.is_finite()) {
            return Err(MarketError::InvalidModel(
                "initial wealth must be positive".into(),
            ));
        }
        if !(0.0..=MAX_COST_RATE).contains(&self.cost_rate) {
            return Err(MarketError::InvalidModel(format!(
                "cost rate must lie in [0, {MAX_COST_RATE}]"
            )));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Observation {
    pub wealth: f64,
    pub allocation: Vec<f64>,
    pub last_returns: Vec<f64>,
}

impl Observation {
    pub fn n_assets(&self) -> usize {
        self.allocation.len()
    }

    pub fn is_finite(&self) -> bool {
        self.wealth.is_finite()
            && self.allocation.iter().all(|v| v.is_finite())
            && self.last_returns.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StepRecord {
    pub observation: Observation,
    pub allocation: Vec<f64>,
    pub returns: Vec<f64>,
    pub transaction_cost: f64,
    pub reward: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeRecord {
    pub steps: Vec<StepRecord>,
    /// Cumulative return ν, the sum of step rewards.
    pub nu: f64,
    pub final_wealth: f64,
    pub violations: usize,
}

/// Where the per-step asset returns come from.
pub trait ReturnSource {
    fn n_assets(&self) -> usize;

    /// Starts a new episode and returns the returns shown in the first observation.
    fn reset(&mut self) -> Result<Vec<f64>>;

    fn next_returns(&mut self) -> Result<Vec<f64>>;
}

/// Returns drawn from a shared HMM; the hidden state and RNG are owned per instance.
#[derive(Debug, Clone)]
pub struct SimulatedMarket {
    model: Arc<MarketModel>,
    rng: ChaCha8Rng,
    state: usize,
}

impl SimulatedMarket {
    pub fn new(model: Arc<MarketModel>, seed: u64) -> Self {
        Self {
            model,
            rng: ChaCha8Rng::seed_from_u64(seed),
            state: 0,
        }
    }

    pub fn model(&self) -> &MarketModel {
        &self.model
    }

    fn floor(mut x: Vec<f64>) -> Vec<f64> {
        x.iter_mut().for_each(|v| *v = v.max(RETURN_FLOOR));
        x
    }
}

impl ReturnSource for SimulatedMarket {
    fn n_assets(&self) -> usize {
        self.model.n_assets()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.state = self.model.sample_initial_state(&mut self.rng);
        Ok(Self::floor(self.model.emit(self.state, &mut self.rng)))
    }

    fn next_returns(&mut self) -> Result<Vec<f64>> {
        let (s, x) = self.model.simulate_step(self.state, &mut self.rng);
        self.state = s;
        Ok(Self::floor(x))
    }
}

/// Replays realized return rows: row 0 seeds the first observation, rows 1.. are traded.
#[derive(Debug, Clone)]
pub struct HistoricalMarket {
    rows: Vec<Vec<f64>>,
    cursor: usize,
}

impl HistoricalMarket {
    pub fn new(returns: &ReturnMatrix) -> Result<Self> {
        if returns.n_rows() < 2 {
            return Err(MarketError::InsufficientData(
                "a backtest needs at least two return rows".into(),
            ));
        }
        Ok(Self {
            rows: returns.rows().to_vec(),
            cursor: 0,
        })
    }

    pub fn n_rows(&self) -> usize {
        self.rows.len()
    }
}

impl ReturnSource for HistoricalMarket {
    fn n_assets(&self) -> usize {
        self.rows[0].len()
    }

    fn reset(&mut self) -> Result<Vec<f64>> {
        self.cursor = 1;
        Ok(self.rows[0].clone())
    }

    fn next_returns(&mut self) -> Result<Vec<f64>> {
        let row = self.rows.get(self.cursor).ok_or_else(|| {
            MarketError::InsufficientData(format!(
                "historical returns exhausted after {} rows",
                self.rows.len()
            ))
        })?;
        self.cursor += 1;
        Ok(row.clone())
    }
}

#[derive(Debug, Clone)]
pub struct StepOutcome {
    pub observation: Observation,
    pub reward: f64,
    pub transaction_cost: f64,
    pub done: bool,
}

#[derive(Debug, Clone)]
pub struct PortfolioEnv<S> {
    config: EnvConfig,
    constraints: ConstraintConfig,
    polytope: HPolytope,
    center: Vec<f64>,
    source: S,
    t: usize,
    wealth: f64,
    holdings: Vec<f64>,
    observation: Option<Observation>,
    steps: Vec<StepRecord>,
    violations: usize,
}

impl<S: ReturnSource> PortfolioEnv<S> {
    pub fn new(config: EnvConfig, constraints: ConstraintConfig, source: S) -> Result<Self> {
        config.validate()?;
        let n = constraints.n_assets();
        if source.n_assets() != n {
            return Err(MarketError::InvalidModel(format!(
                "market has {} assets but the constraints cover {n}",
                source.n_assets()
            )));
        }
        let polytope = constraints.to_h_polytope();
        let center = chebyshev_center(&polytope)
            .ok_or(MarketError::Core(
                caosd_core::CoreError::InfeasibleConfiguration,
            ))?
            .center;
        Ok(Self {
            config,
            constraints,
            polytope,
            center,
            source,
            t: 0,
            wealth: config.initial_wealth,
            holdings: Allocation::unit(n, 0).into_vec(),
            observation: None,
            steps: Vec::new(),
            violations: 0,
        })
    }

    pub fn config(&self) -> &EnvConfig {
        &self.config
    }

    pub fn constraints(&self) -> &ConstraintConfig {
        &self.constraints
    }

    pub fn source(&self) -> &S {
        &self.source
    }

    pub fn n_assets(&self) -> usize {
        self.constraints.n_assets()
    }

    /// Actions that failed membership over the lifetime of this environment.
    pub fn violations(&self) -> usize {
        self.violations
    }

    pub fn step_index(&self) -> usize {
        self.t
    }

    /// Starts an episode at initial wealth with everything in asset 0.
    pub fn reset(&mut self) -> Result<Observation> {
        let n = self.n_assets();
        let last_returns = self.source.reset()?;
        self.t = 0;
        self.wealth = self.config.initial_wealth;
        self.holdings = Allocation::unit(n, 0).into_vec();
        self.steps.clear();
        let obs = Observation {
            wealth: self.wealth,
            allocation: self.holdings.clone(),
            last_returns,
        };
        self.observation = Some(obs.clone());
        Ok(obs)
    }

    pub fn step(&mut self, action: &Allocation) -> Result<StepOutcome> {
        let obs = self
            .observation
            .clone()
            .ok_or(MarketError::EpisodeFinished)?;
        if self.t >= self.config.horizon {
            return Err(MarketError::EpisodeFinished);
        }
        if action.len() != self.n_assets() {
            return Err(MarketError::Core(
                caosd_core::CoreError::DimensionMismatch {
                    expected: self.n_assets(),
                    got: action.len(),
                },
            ));
        }
        let a = self.admit(action.values())?;

        let returns = self.source.next_returns()?;
        let gross: f64 = a.iter().zip(&returns).map(|(w, x)| w * x).sum();
        let turnover: f64 = a
            .iter()
            .zip(&self.holdings)
            .map(|(x, y)| (x - y).abs())
            .sum();
        let tc = self.config.cost_rate * turnover;
        let reward = gross - tc;

        self.wealth *= 1.0 + reward;
        let denom = 1.0 + gross;
        self.holdings = a
            .iter()
            .zip(&returns)
            .map(|(w, x)| w * (1.0 + x) / denom)
            .collect();
        self.t += 1;

        self.steps.push(StepRecord {
            observation: obs,
            allocation: a.clone(),
            returns: returns.clone(),
            transaction_cost: tc,
            reward,
        });
        let next = Observation {
            wealth: self.wealth,
            allocation: a,
            last_returns: returns,
        };
        self.observation = Some(next.clone());
        Ok(StepOutcome {
            observation: next,
            reward,
            transaction_cost: tc,
            done: self.t >= self.config.horizon,
        })
    }

    /// Record of the episode so far.
    pub fn record(&self) -> EpisodeRecord {
        EpisodeRecord {
            nu: self.steps.iter().map(|s| s.reward).sum(),
            final_wealth: self.wealth,
            steps: self.steps.clone(),
            violations: self.violations,
        }
    }

    fn admit(&mut self, a: &[f64]) -> Result<Vec<f64>> {
        let violation = self.polytope.max_violation(a);
        if violation <= SIMPLEX_TOL {
            return Ok(a.to_vec());
        }
        self.violations += 1;
        if self.config.strict_membership {
            return Err(MarketError::ConstraintViolation { violation });
        }
        log::warn!("repairing non-member action (max violation {violation:.3e})");
        Ok(self.repair(a))
    }

    /// Clips to the simplex, then moves toward the interior center just far enough to satisfy both constraints.
    fn repair(&self, a: &[f64]) -> Vec<f64> {
        let mut x: Vec<f64> = a
            .iter()
            .map(|v| if v.is_finite() { v.max(0.0) } else { 0.0 })
            .collect();
        let s: f64 = x.iter().sum();
        if s > 0.0 {
            x.iter_mut().for_each(|v| *v /= s);
        } else {
            x = self.center.clone();
        }
        let mut lambda: f64 = 0.0;
        for c in [self.constraints.first(), self.constraints.second()] {
            let at_x = c.mass(&x);
            let at_center = c.mass(&self.center);
            if at_x < c.threshold() && at_center > at_x {
                lambda = lambda.max((c.threshold() - at_x) / (at_center - at_x));
            }
        }
        let lambda = lambda.min(1.0);
        x.iter()
            .zip(&self.center)
            .map(|(p, q)| (1.0 - lambda) * p + lambda * q)
            .collect()
    }
}

/// Maps observations to allocations.
pub trait AllocationPolicy {
    fn act(&mut self, observation: &Observation) -> Result<Allocation>;
}

impl<F> AllocationPolicy for F
where
    F: FnMut(&Observation) -> Result<Allocation>,
{
    fn act(&mut self, observation: &Observation) -> Result<Allocation> {
        self(observation)
    }
}

/// Runs one full episode.
pub fn run_episode<S: ReturnSource, P: AllocationPolicy + ?Sized>(
    env: &mut PortfolioEnv<S>,
    policy: &mut P,
) -> Result<EpisodeRecord> {
    let mut obs = env.reset()?;
    loop {
        let a = policy.act(&obs)?;
        let out = env.step(&a)?;
        obs = out.observation;
        if out.done {
            return Ok(env.record());
        }
    }
}

/// Replays `returns` (horizon + 1 rows; the first seeds the observation) under `policy`.
pub fn run_backtest<P: AllocationPolicy + ?Sized>(
    returns: &ReturnMatrix,
    policy: &mut P,
    constraints: &ConstraintConfig,
    config: &EnvConfig,
) -> Result<EpisodeRecord> {
    let needed = config.horizon + 1;
    if returns.n_rows() < needed {
        return Err(MarketError::InsufficientData(format!(
            "backtest over {} steps needs {needed} return rows, got {}",
            config.horizon,
            returns.n_rows()
        )));
    }
    let mut env = PortfolioEnv::new(
        *config,
        constraints.clone(),
        HistoricalMarket::new(returns)?,
    )?;
    run_episode(&mut env, policy)
}
