//! Clipped-surrogate policy-gradient training with generalized advantage estimation.

use std::sync::Arc;

use caosd_core::{Allocation, ConstraintConfig, SurrogateAction};
use caosd_market::{
    run_episode, EnvConfig, MarketModel, Observation, PortfolioEnv, ReturnSource, SimulatedMarket,
};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::error::{AgentError, Result};
use crate::policy::{CaosdPolicy, Cotangent, Greedy, PolicyConfig};

/// Per-sample gradients are summed in fixed-size chunks so the reduction order
/// does not depend on the thread count.
const GRAD_CHUNK: usize = 8;
const ADV_STD_FLOOR: f64 = 1e-8;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct TrainConfig {
    pub total_env_steps: usize,
    pub rollout_length: usize,
    pub minibatch_size: usize,
    pub epochs_per_batch: usize,
    pub clip_epsilon: f64,
    pub gamma: f64,
    pub gae_lambda: f64,
    pub learning_rate: f64,
    pub entropy_coef: f64,
    pub value_coef: f64,
    pub max_grad_norm: f64,
    /// Remaining epochs of a batch are skipped once the KL estimate exceeds this.
    pub target_kl: f64,
    pub eval_interval: usize,
    pub eval_episodes: usize,
    pub seed: u64,
    pub env: EnvConfig,
}

impl Default for TrainConfig {
    fn default() -> Self {
        Self {
            total_env_steps: 100_000,
            rollout_length: 1200,
            minibatch_size: 240,
            epochs_per_batch: 10,
            clip_epsilon: 0.2,
            gamma: 0.99,
            gae_lambda: 0.95,
            learning_rate: 3e-4,
            entropy_coef: 0.0,
            value_coef: 0.5,
            max_grad_norm: 0.5,
            target_kl: 0.05,
            eval_interval: 5000,
            eval_episodes: 200,
            seed: 0,
            env: EnvConfig::default(),
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(AgentError::InvalidConfig(m.to_string()));
        if !(self.clip_epsilon > 0.0 && self.clip_epsilon < 1.0) {
            return bad("clip_epsilon must lie in (0, 1)");
        }
        if !(self.gamma > 0.0 && self.gamma <= 1.0)
            || !(self.gae_lambda > 0.0 && self.gae_lambda <= 1.0)
        {
            return bad("gamma and gae_lambda must lie in (0, 1]");
        }
        if self.rollout_length == 0 || self.minibatch_size == 0 || self.epochs_per_batch == 0 {
            return bad("rollout_length, minibatch_size and epochs_per_batch must be positive");
        }
        if self.eval_interval == 0 || self.eval_episodes < 2 {
            return bad("eval_interval must be positive and eval_episodes at least 2");
        }
        if !(self.learning_rate > 0.0) || !(self.max_grad_norm > 0.0) {
            return bad("learning_rate and max_grad_norm must be positive");
        }
        self.env.validate()?;
        Ok(())
    }
}

#[derive(Debug, Clone, Default)]
pub struct RolloutBatch {
    pub observations: Vec<Observation>,
    pub surrogates: Vec<SurrogateAction>,
    pub actions: Vec<Allocation>,
    pub log_probs: Vec<f64>,
    pub rewards: Vec<f64>,
    pub values: Vec<f64>,
    /// `true` where the transition ended an episode.
    pub dones: Vec<bool>,
    /// Normalized per batch.
    pub advantages: Vec<f64>,
    pub returns: Vec<f64>,
    /// Value of the observation following the last transition (0 after a terminal step).
    pub last_value: f64,
    pub completed_episodes: Vec<f64>,
    pub violations: usize,
}

impl RolloutBatch {
    pub fn len(&self) -> usize {
        self.rewards.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rewards.is_empty()
    }
}

/// One environment plus the policy-sampling RNG; episodes continue across batches.
#[derive(Debug)]
pub struct RolloutCollector<S> {
    env: PortfolioEnv<S>,
    pending: Option<Observation>,
    rng: ChaCha8Rng,
}

impl<S: ReturnSource> RolloutCollector<S> {
    pub fn new(env: PortfolioEnv<S>, seed: u64) -> Self {
        Self {
            env,
            pending: None,
            rng: ChaCha8Rng::seed_from_u64(seed),
        }
    }

    pub fn env(&self) -> &PortfolioEnv<S> {
        &self.env
    }

    /// Raw transitions; advantages and returns are left empty.
    pub fn collect(&mut self, policy: &CaosdPolicy, steps: usize) -> Result<RolloutBatch> {
        let before = self.env.violations();
        let mut b = RolloutBatch::default();
        for _ in 0..steps {
            let obs = match self.pending.take() {
                Some(o) => o,
                None => self.env.reset()?,
            };
            let out = policy.sample_action(&obs, &mut self.rng)?;
            let step = self.env.step(&out.action)?;
            b.observations.push(obs);
            b.surrogates.push(out.surrogate);
            b.actions.push(out.action);
            b.log_probs.push(out.joint_log_prob);
            b.values.push(out.value);
            b.rewards.push(step.reward);
            b.dones.push(step.done);
            if step.done {
                b.completed_episodes.push(self.env.record().nu);
            } else {
                self.pending = Some(step.observation);
            }
        }
        b.last_value = match &self.pending {
            Some(o) => policy.value(o)?,
            None => 0.0,
        };
        b.violations = self.env.violations() - before;
        Ok(b)
    }
}

/// Collects `rollout_length` transitions and fills normalized advantages and returns.
pub fn collect_rollouts<S: ReturnSource>(
    collector: &mut RolloutCollector<S>,
    policy: &CaosdPolicy,
    tconf: &TrainConfig,
) -> Result<RolloutBatch> {
    let mut b = collector.collect(policy, tconf.rollout_length)?;
    let (adv, ret) = compute_gae(
        &b.rewards,
        &b.values,
        &b.dones,
        b.last_value,
        tconf.gamma,
        tconf.gae_lambda,
    );
    b.returns = ret;
    b.advantages = normalize(&adv);
    Ok(b)
}

/// GAE advantages and returns (`advantage + value`), reset at episode ends.
pub fn compute_gae(
    rewards: &[f64],
    values: &[f64],
    dones: &[bool],
    last_value: f64,
    gamma: f64,
    lambda: f64,
) -> (Vec<f64>, Vec<f64>) {
    let n = rewards.len();
    let mut adv = vec![0.0; n];
    let mut gae = 0.0;
    for t in (0..n).rev() {
        let live = if dones[t] { 0.0 } else { 1.0 };
        let next_value = if t + 1 < n { values[t + 1] } else { last_value };
        let delta = rewards[t] + gamma * next_value * live - values[t];
        gae = delta + gamma * lambda * live * gae;
        adv[t] = gae;
    }
    let ret = adv.iter().zip(values).map(|(a, v)| a + v).collect();
    (adv, ret)
}

fn normalize(x: &[f64]) -> Vec<f64> {
    if x.is_empty() {
        return Vec::new();
    }
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean).powi(2)).sum::<f64>() / n;
    let sd = var.sqrt().max(ADV_STD_FLOOR);
    x.iter().map(|v| (v - mean) / sd).collect()
}

#[derive(Debug, Clone)]
pub struct Adam {
    pub learning_rate: f64,
    pub beta1: f64,
    pub beta2: f64,
    pub eps: f64,
    m: Vec<f64>,
    v: Vec<f64>,
    t: i32,
}

impl Adam {
    pub fn new(n_params: usize, learning_rate: f64) -> Self {
        Self {
            learning_rate,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            m: vec![0.0; n_params],
            v: vec![0.0; n_params],
            t: 0,
        }
    }

    pub fn step(&mut self, params: &mut [f64], grad: &[f64]) {
        self.t += 1;
        let c1 = 1.0 - self.beta1.powi(self.t);
        let c2 = 1.0 - self.beta2.powi(self.t);
        for i in 0..params.len() {
            self.m[i] = self.beta1 * self.m[i] + (1.0 - self.beta1) * grad[i];
            self.v[i] = self.beta2 * self.v[i] + (1.0 - self.beta2) * grad[i] * grad[i];
            params[i] -=
                self.learning_rate * (self.m[i] / c1) / ((self.v[i] / c2).sqrt() + self.eps);
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Serialize)]
pub struct UpdateStats {
    pub policy_loss: f64,
    pub value_loss: f64,
    pub entropy: f64,
    pub approx_kl: f64,
    pub clip_fraction: f64,
    pub epochs_completed: usize,
    pub minibatches: usize,
    pub early_stopped: bool,
    /// Largest `|ρ − 1|` in the first minibatch, evaluated before any parameter step.
    pub first_ratio_deviation: f64,
    pub grad_norm: f64,
}

#[derive(Debug, Clone, Default)]
struct Partial {
    grad: Vec<f64>,
    policy_loss: f64,
    value_loss: f64,
    entropy: f64,
    kl: f64,
    clipped: usize,
    ratio_dev: f64,
}

fn minibatch_gradient(
    policy: &CaosdPolicy,
    batch: &RolloutBatch,
    idx: &[usize],
    tconf: &TrainConfig,
) -> Result<Partial> {
    let m = idx.len() as f64;
    let eps = tconf.clip_epsilon;
    let partials: Vec<Partial> = idx
        .par_chunks(GRAD_CHUNK)
        .map(|chunk| {
            let mut p = Partial {
                grad: vec![0.0; policy.n_params()],
                ..Partial::default()
            };
            for &i in chunk {
                let eval = policy.evaluate(&batch.observations[i], &batch.surrogates[i])?;
                let a = batch.advantages[i];
                let log_ratio = eval.log_prob - batch.log_probs[i];
                let ratio = log_ratio.exp();
                let clipped_ratio = ratio.clamp(1.0 - eps, 1.0 + eps);
                let unclipped_active = ratio * a <= clipped_ratio * a;
                p.policy_loss -= (ratio * a).min(clipped_ratio * a) / m;
                if !unclipped_active {
                    p.clipped += 1;
                }
                p.kl += ((ratio - 1.0) - log_ratio) / m;
                p.ratio_dev = p.ratio_dev.max((ratio - 1.0).abs());

                let (v, v_old, ret) = (eval.value, batch.values[i], batch.returns[i]);
                let v_clip = v_old + (v - v_old).clamp(-eps, eps);
                let (l1, l2) = ((v - ret).powi(2), (v_clip - ret).powi(2));
                p.value_loss += 0.5 * l1.max(l2) / m;
                let dv = if l1 >= l2 {
                    v - ret
                } else if (v - v_old).abs() < eps {
                    v_clip - ret
                } else {
                    0.0
                };
                p.entropy += eval.entropy / m;

                let cot = Cotangent {
                    log_prob: if unclipped_active {
                        -a * ratio / m
                    } else {
                        0.0
                    },
                    entropy: -tconf.entropy_coef / m,
                    value: tconf.value_coef * dv / m,
                };
                policy.backward(&eval, cot, &mut p.grad);
            }
            Ok(p)
        })
        .collect::<Result<_>>()?;

    let mut total = Partial {
        grad: vec![0.0; policy.n_params()],
        ..Partial::default()
    };
    for p in partials {
        total
            .grad
            .iter_mut()
            .zip(&p.grad)
            .for_each(|(x, y)| *x += y);
        total.policy_loss += p.policy_loss;
        total.value_loss += p.value_loss;
        total.entropy += p.entropy;
        total.kl += p.kl;
        total.clipped += p.clipped;
        total.ratio_dev = total.ratio_dev.max(p.ratio_dev);
    }
    Ok(total)
}

/// `epochs_per_batch` passes over shuffled minibatches with gradient clipping and KL early stop.
pub fn ppo_update(
    policy: &mut CaosdPolicy,
    adam: &mut Adam,
    batch: &RolloutBatch,
    tconf: &TrainConfig,
    rng: &mut ChaCha8Rng,
) -> Result<UpdateStats> {
    let mut stats = UpdateStats::default();
    let mut order: Vec<usize> = (0..batch.len()).collect();
    let mut seen = 0usize;
    'epochs: for epoch in 0..tconf.epochs_per_batch {
        order.shuffle(rng);
        for idx in order.chunks(tconf.minibatch_size) {
            let part = minibatch_gradient(policy, batch, idx, tconf)?;
            let objective = part.policy_loss + tconf.value_coef * part.value_loss
                - tconf.entropy_coef * part.entropy;
            if !objective.is_finite() || part.grad.iter().any(|g| !g.is_finite()) {
                return Err(AgentError::NonFiniteLoss {
                    policy_loss: part.policy_loss,
                    value_loss: part.value_loss,
                    entropy: part.entropy,
                });
            }
            if seen == 0 {
                stats.first_ratio_deviation = part.ratio_dev;
            }
            let w = idx.len() as f64;
            stats.policy_loss += part.policy_loss * w;
            stats.value_loss += part.value_loss * w;
            stats.entropy += part.entropy * w;
            stats.approx_kl = part.kl;
            stats.clip_fraction += part.clipped as f64;
            seen += idx.len();
            if part.kl > tconf.target_kl {
                stats.early_stopped = true;
                log::debug!(
                    "KL {:.4} above target after {epoch} epochs; stopping batch",
                    part.kl
                );
                break 'epochs;
            }
            let mut grad = part.grad;
            let norm = grad.iter().map(|g| g * g).sum::<f64>().sqrt();
            stats.grad_norm = norm;
            if norm > tconf.max_grad_norm {
                let s = tconf.max_grad_norm / norm;
                grad.iter_mut().for_each(|g| *g *= s);
            }
            adam.step(policy.params_mut(), &grad);
            stats.minibatches += 1;
        }
        stats.epochs_completed = epoch + 1;
    }
    if seen > 0 {
        let n = seen as f64;
        stats.policy_loss /= n;
        stats.value_loss /= n;
        stats.entropy /= n;
        stats.clip_fraction /= n;
    }
    Ok(stats)
}

/// Mean with a 95% normal-approximation interval (sample standard deviation).
pub fn normal_ci(xs: &[f64]) -> (f64, f64, f64) {
    let n = xs.len() as f64;
    if xs.windows(2).all(|w| w[0] == w[1]) {
        let x = xs.first().copied().unwrap_or(f64::NAN);
        return (x, x, x);
    }
    let mean = xs.iter().sum::<f64>() / n;
    let sd = (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
    let half = 1.96 * sd / n.sqrt();
    (mean, mean - half, mean + half)
}

/// SplitMix64 finalizer, used to derive independent stream seeds.
pub fn derive_seed(seed: u64, stream: u64) -> u64 {
    let mut z = seed
        ^ stream
            .wrapping_mul(0x9E37_79B9_7F4A_7C15)
            .wrapping_add(0x6A09_E667_F3BC_C909);
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58_476D_1CE4_E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D0_49BB_1331_11EB);
    z ^ (z >> 31)
}

/// ν of `episodes` deterministic-policy episodes, episode `j` on market seed `derive_seed(seed, j)`.
pub fn evaluate_greedy(
    policy: &CaosdPolicy,
    model: &Arc<MarketModel>,
    env: &EnvConfig,
    episodes: usize,
    seed: u64,
) -> Result<Vec<f64>> {
    (0..episodes)
        .into_par_iter()
        .map(|j| {
            let market = SimulatedMarket::new(model.clone(), derive_seed(seed, j as u64));
            let mut e = PortfolioEnv::new(*env, policy.constraints().clone(), market)?;
            Ok(run_episode(&mut e, &mut Greedy(policy))?.nu)
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub step: usize,
    pub mean_nu: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

#[derive(Debug, Clone)]
pub struct TrainOutcome {
    pub policy: CaosdPolicy,
    pub best: CaosdPolicy,
    pub curve: Vec<CurveRow>,
    pub env_steps: usize,
    /// Training actions that failed membership.
    pub violations: usize,
    pub updates: Vec<UpdateStats>,
}

/// Trains a fresh policy on the simulated market of `model`.
pub fn train(
    constraints: &ConstraintConfig,
    model: Arc<MarketModel>,
    tconf: &TrainConfig,
    pconf: PolicyConfig,
) -> Result<TrainOutcome> {
    tconf.validate()?;
    let mut policy = CaosdPolicy::new(constraints, pconf, derive_seed(tconf.seed, 0))?;
    let env = PortfolioEnv::new(
        tconf.env,
        constraints.clone(),
        SimulatedMarket::new(model.clone(), derive_seed(tconf.seed, 1)),
    )?;
    let mut collector = RolloutCollector::new(env, derive_seed(tconf.seed, 2));
    let mut update_rng = ChaCha8Rng::seed_from_u64(derive_seed(tconf.seed, 3));
    let mut adam = Adam::new(policy.n_params(), tconf.learning_rate);

    let mut curve = Vec::new();
    let mut updates = Vec::new();
    let mut best: Option<(f64, CaosdPolicy)> = None;
    let mut steps = 0usize;
    let mut violations = 0usize;
    let mut next_eval = tconf.eval_interval;
    while steps < tconf.total_env_steps {
        let len = tconf.rollout_length.min(tconf.total_env_steps - steps);
        let batch = collect_rollouts(
            &mut collector,
            &policy,
            &TrainConfig {
                rollout_length: len,
                ..tconf.clone()
            },
        )?;
        steps += len;
        violations += batch.violations;
        let stats = ppo_update(&mut policy, &mut adam, &batch, tconf, &mut update_rng)?;
        log::debug!(
            "step {steps}: policy {:.4} value {:.5} entropy {:.3} kl {:.4}",
            stats.policy_loss,
            stats.value_loss,
            stats.entropy,
            stats.approx_kl
        );
        updates.push(stats);

        while next_eval <= steps {
            let nus = evaluate_greedy(
                &policy,
                &model,
                &tconf.env,
                tconf.eval_episodes,
                derive_seed(tconf.seed, 4),
            )?;
            let (mean_nu, ci_lo, ci_hi) = normal_ci(&nus);
            log::info!("step {next_eval}: mean ν {mean_nu:.4} [{ci_lo:.4}, {ci_hi:.4}]");
            curve.push(CurveRow {
                step: next_eval,
                mean_nu,
                ci_lo,
                ci_hi,
            });
            if best.as_ref().is_none_or(|(b, _)| mean_nu > *b) {
                best = Some((mean_nu, policy.clone()));
            }
            next_eval += tconf.eval_interval;
        }
    }
    let best = best.map_or_else(|| policy.clone(), |(_, p)| p);
    Ok(TrainOutcome {
        policy,
        best,
        curve,
        env_steps: steps,
        violations,
        updates,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn gae_limits() {
        let r = [1.0, 0.0, 2.0, 0.5];
        let v = [0.3, -0.2, 0.1, 0.4];
        let d = [false, false, true, false];
        // γ = λ = 1: return-to-go minus value within each episode
        let (adv, ret) = compute_gae(&r, &v, &d, 0.7, 1.0, 1.0);
        assert_eq!(adv[0], 3.0 - 0.3);
        assert_eq!(adv[2], 2.0 - 0.1);
        assert_eq!(adv[3], 0.5 + 0.7 - 0.4);
        assert_eq!(ret[0], 3.0);
        // λ = 0: one-step TD residuals
        let (adv, _) = compute_gae(&r, &v, &d, 0.7, 0.9, 0.0);
        assert!((adv[0] - (1.0 + 0.9 * -0.2 - 0.3)).abs() < 1e-12);
        assert!((adv[2] - (2.0 - 0.1)).abs() < 1e-12);
    }

    #[test]
    fn normalization_guards_constant_input() {
        assert_eq!(normalize(&[0.0, 0.0, 0.0]), vec![0.0, 0.0, 0.0]);
        let z = normalize(&[1.0, 2.0, 3.0]);
        assert!(z.iter().sum::<f64>().abs() < 1e-12);
    }

    #[test]
    fn ci_of_identical_values_is_a_point() {
        assert_eq!(normal_ci(&[0.2, 0.2, 0.2]), (0.2, 0.2, 0.2));
    }

    #[test]
    fn adam_first_step_moves_by_the_learning_rate() {
        let mut p = vec![1.0, -1.0];
        let mut adam = Adam::new(2, 0.01);
        adam.step(&mut p, &[3.0, -0.5]);
        assert!((p[0] - 0.99).abs() < 1e-9 && (p[1] + 0.99).abs() < 1e-9);
    }
}
