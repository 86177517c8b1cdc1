use std::sync::Arc;

use caosd_agent::{
    collect_rollouts, compute_gae, ppo_update, train, Adam, CaosdPolicy, EncoderConfig,
    PolicyConfig, RolloutCollector, TrainConfig,
};
use caosd_core::{AssetUniverse, ConstraintConfig};
use caosd_market::{EnvConfig, MarketModel, PortfolioEnv, SimulatedMarket};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn small() -> PolicyConfig {
    PolicyConfig {
        encoder: EncoderConfig {
            hidden_sizes: vec![32, 32],
            embedding_size: 16,
            use_attention: false,
        },
        branch_hidden: vec![32, 16],
        value_hidden: vec![16],
    }
}

fn constant_market(returns: &[f64]) -> Arc<MarketModel> {
    let n = returns.len();
    let labels = (0..n).map(|i| format!("A{i}")).collect();
    Arc::new(MarketModel::single_state(labels, returns.to_vec(), vec![vec![0.0; n]; n]).unwrap())
}

fn noisy_market(n: usize) -> Arc<MarketModel> {
    let labels = (0..n).map(|i| format!("A{i}")).collect();
    let cov = (0..n)
        .map(|i| (0..n).map(|j| if i == j { 0.002 } else { 0.0 }).collect())
        .collect();
    Arc::new(MarketModel::single_state(labels, vec![0.01; n], cov).unwrap())
}

fn free(n: usize) -> ConstraintConfig {
    ConstraintConfig::from_sets(AssetUniverse::anonymous(n).unwrap(), [0], 0.0, [1], 0.0).unwrap()
}

fn env(kappa: f64) -> EnvConfig {
    EnvConfig {
        cost_rate: kappa,
        strict_membership: false,
        ..EnvConfig::default()
    }
}

fn collector(
    cfg: &ConstraintConfig,
    model: &Arc<MarketModel>,
    seed: u64,
) -> RolloutCollector<SimulatedMarket> {
    let e = PortfolioEnv::new(
        env(0.001),
        cfg.clone(),
        SimulatedMarket::new(model.clone(), seed),
    )
    .unwrap();
    RolloutCollector::new(e, seed + 1)
}

#[test]
fn gae_hand_example() {
    // r = (1, 0, 2), V = 0, γ = λ = 0.5, terminal at the end:
    // δ = r, A2 = 2, A1 = 0 + 0.25·2 = 0.5, A0 = 1 + 0.25·0.5 = 1.125
    let oracle = |r: &[f64], g: f64, l: f64| {
        let mut out = vec![0.0; r.len()];
        for t in 0..r.len() {
            out[t] = (t..r.len())
                .map(|k| (g * l).powi((k - t) as i32) * r[k])
                .sum();
        }
        out
    };
    let r = [1.0, 0.0, 2.0];
    let (adv, ret) = compute_gae(&r, &[0.0; 3], &[false, false, true], 0.0, 0.5, 0.5);
    assert_eq!(adv, oracle(&r, 0.5, 0.5));
    assert_eq!(adv, vec![1.125, 0.5, 2.0]);
    assert_eq!(ret, adv);
}

#[test]
fn gae_with_unit_discount_is_the_monte_carlo_return() {
    let r = [0.3, -0.1, 0.2, 0.05, 0.4, -0.2];
    let v = [0.1, 0.2, -0.3, 0.0, 0.5, 0.1];
    let d = [false, false, true, false, false, true];
    let (adv, ret) = compute_gae(&r, &v, &d, 9.0, 1.0, 1.0);
    let mc = [0.4, 0.1, 0.2, 0.25, 0.2, -0.2];
    for t in 0..6 {
        assert!((ret[t] - mc[t]).abs() < 1e-12, "t = {t}");
        assert!((adv[t] - (mc[t] - v[t])).abs() < 1e-12);
    }
}

#[test]
fn rollout_of_two_horizons_holds_two_episodes() {
    let cfg = free(3);
    let model = noisy_market(3);
    let p = CaosdPolicy::new(&cfg, small(), 0).unwrap();
    let tconf = TrainConfig {
        rollout_length: 24,
        ..TrainConfig::default()
    };
    let b = collect_rollouts(&mut collector(&cfg, &model, 5), &p, &tconf).unwrap();
    assert_eq!(b.len(), 24);
    assert_eq!(b.dones.iter().filter(|d| **d).count(), 2);
    assert!(b.dones[11] && b.dones[23]);
    assert_eq!(b.completed_episodes.len(), 2);
    assert_eq!(b.last_value, 0.0);
    let mean: f64 = b.advantages.iter().sum::<f64>() / 24.0;
    assert!(mean.abs() < 1e-12);

    let again = collect_rollouts(&mut collector(&cfg, &model, 5), &p, &tconf).unwrap();
    assert_eq!(b.rewards, again.rewards);
    assert_eq!(b.log_probs, again.log_probs);
}

#[test]
fn first_minibatch_ratio_is_one() {
    let cfg = free(4);
    let model = noisy_market(4);
    let mut p = CaosdPolicy::new(&cfg, small(), 1).unwrap();
    let tconf = TrainConfig {
        rollout_length: 96,
        minibatch_size: 32,
        epochs_per_batch: 2,
        ..TrainConfig::default()
    };
    let b = collect_rollouts(&mut collector(&cfg, &model, 9), &p, &tconf).unwrap();
    let mut adam = Adam::new(p.n_params(), tconf.learning_rate);
    let stats = ppo_update(
        &mut p,
        &mut adam,
        &b,
        &tconf,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(stats.first_ratio_deviation, 0.0);
    assert!(stats.minibatches > 0);
}

#[test]
fn zero_advantages_leave_parameters_unchanged() {
    let cfg = free(3);
    let model = noisy_market(3);
    let mut p = CaosdPolicy::new(&cfg, small(), 2).unwrap();
    let tconf = TrainConfig {
        rollout_length: 48,
        minibatch_size: 16,
        value_coef: 0.0,
        ..TrainConfig::default()
    };
    let mut b = collect_rollouts(&mut collector(&cfg, &model, 3), &p, &tconf).unwrap();
    b.advantages.iter_mut().for_each(|a| *a = 0.0);
    let before = p.params().to_vec();
    let mut adam = Adam::new(p.n_params(), tconf.learning_rate);
    ppo_update(
        &mut p,
        &mut adam,
        &b,
        &tconf,
        &mut ChaCha8Rng::seed_from_u64(0),
    )
    .unwrap();
    assert_eq!(p.params(), &before[..]);
}

#[test]
fn value_loss_falls_on_a_fixed_batch() {
    let cfg = free(3);
    let model = noisy_market(3);
    let mut p = CaosdPolicy::new(&cfg, small(), 3).unwrap();
    let tconf = TrainConfig {
        rollout_length: 120,
        minibatch_size: 120,
        epochs_per_batch: 1,
        learning_rate: 1e-3,
        target_kl: f64::INFINITY,
        ..TrainConfig::default()
    };
    let mut b = collect_rollouts(&mut collector(&cfg, &model, 4), &p, &tconf).unwrap();
    b.advantages.iter_mut().for_each(|a| *a = 0.0);
    let mut adam = Adam::new(p.n_params(), tconf.learning_rate);
    let mut rng = ChaCha8Rng::seed_from_u64(0);
    let mut losses = Vec::new();
    for _ in 0..100 {
        let stats = ppo_update(&mut p, &mut adam, &b, &tconf, &mut rng).unwrap();
        losses.push(stats.value_loss);
        // move the clipping anchor with the network
        for (v, o) in b.values.iter_mut().zip(&b.observations) {
            *v = p.value(o).unwrap();
        }
    }
    assert!(
        losses[99] < 0.2 * losses[0],
        "{} -> {}",
        losses[0],
        losses[99]
    );
}

#[test]
fn bandit_prefers_the_paying_asset() {
    let model = constant_market(&[0.1, 0.0]);
    let tconf = TrainConfig {
        total_env_steps: 50_000,
        eval_interval: 10_000,
        eval_episodes: 4,
        seed: 5,
        env: env(0.0),
        ..TrainConfig::default()
    };
    let out = train(&free(2), model, &tconf, small()).unwrap();
    let a = out.policy.deterministic_action(&caosd_market::Observation {
        wealth: 1.0,
        allocation: vec![1.0, 0.0],
        last_returns: vec![0.0, 0.0],
    });
    let a = a.unwrap();
    assert!(a.values()[0] >= 0.9, "{:?}", a.values());
    assert_eq!(out.curve.len(), 5);
}

#[test]
fn training_is_deterministic() {
    let cfg = free(3);
    let model = noisy_market(3);
    let tconf = TrainConfig {
        total_env_steps: 480,
        rollout_length: 120,
        minibatch_size: 40,
        epochs_per_batch: 2,
        eval_interval: 240,
        eval_episodes: 8,
        seed: 11,
        env: env(0.001),
        ..TrainConfig::default()
    };
    let a = train(&cfg, model.clone(), &tconf, small()).unwrap();
    let b = train(&cfg, model, &tconf, small()).unwrap();
    assert_eq!(a.policy.params(), b.policy.params());
    assert_eq!(a.curve, b.curve);
    assert_eq!(a.curve.len(), 2);
    assert_eq!(a.env_steps, 480);
}
