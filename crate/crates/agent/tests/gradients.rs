//! Analytic gradients of the policy against central finite differences.

use caosd_agent::{CaosdPolicy, Cotangent, EncoderConfig, PolicyConfig};
use caosd_core::{generate_random_config, AssetUniverse, SurrogateAction};
use caosd_market::Observation;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

const STEP: f64 = 1e-5;
/// Gradients below this magnitude are compared on an absolute scale.
const FLOOR: f64 = 1e-4;

fn small(attention: bool) -> PolicyConfig {
    PolicyConfig {
        encoder: EncoderConfig {
            hidden_sizes: vec![12, 8],
            embedding_size: 6,
            use_attention: attention,
        },
        branch_hidden: vec![8, 5],
        value_hidden: vec![6],
    }
}

fn random_obs(n: usize, rng: &mut ChaCha8Rng) -> Observation {
    let raw: Vec<f64> = (0..n).map(|_| rng.gen_range(0.0..1.0)).collect();
    let s: f64 = raw.iter().sum();
    Observation {
        wealth: rng.gen_range(0.8..1.3),
        allocation: raw.iter().map(|v| v / s).collect(),
        last_returns: (0..n).map(|_| rng.gen_range(-0.1..0.1)).collect(),
    }
}

fn objective(p: &CaosdPolicy, obs: &Observation, s: &SurrogateAction, c: Cotangent) -> f64 {
    let e = p.evaluate(obs, s).unwrap();
    c.log_prob * e.log_prob + c.entropy * e.entropy + c.value * e.value
}

/// Returns the worst relative error over `indices`.
fn check(
    policy: &mut CaosdPolicy,
    obs: &Observation,
    s: &SurrogateAction,
    c: Cotangent,
    indices: &[usize],
) -> f64 {
    let eval = policy.evaluate(obs, s).unwrap();
    let mut grad = vec![0.0; policy.n_params()];
    policy.backward(&eval, c, &mut grad);
    let mut worst: f64 = 0.0;
    for &i in indices {
        let orig = policy.params()[i];
        policy.params_mut()[i] = orig + STEP;
        let up = objective(policy, obs, s, c);
        policy.params_mut()[i] = orig - STEP;
        let down = objective(policy, obs, s, c);
        policy.params_mut()[i] = orig;
        let fd = (up - down) / (2.0 * STEP);
        let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(FLOOR);
        worst = worst.max(err);
    }
    worst
}

#[test]
fn log_prob_gradients_over_random_draws() {
    let mut rng = ChaCha8Rng::seed_from_u64(100);
    for draw in 0..30u64 {
        let n = rng.gen_range(3..=7);
        let cfg =
            generate_random_config(&AssetUniverse::with_cash(n).unwrap(), draw, 1000).unwrap();
        let mut p = CaosdPolicy::new(&cfg, small(draw % 2 == 0), draw).unwrap();
        p.params_mut()
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.3..0.3));
        let obs = random_obs(n, &mut rng);
        let s = p.sample_action(&obs, &mut rng).unwrap().surrogate;
        let all: Vec<usize> = (0..p.n_params()).collect();
        let err = check(
            &mut p,
            &obs,
            &s,
            Cotangent {
                log_prob: 1.0,
                ..Cotangent::default()
            },
            &all,
        );
        assert!(err <= 1e-4, "draw {draw}: relative error {err}");
    }
}

#[test]
fn entropy_and_value_gradients() {
    let mut rng = ChaCha8Rng::seed_from_u64(7);
    for draw in 0..10u64 {
        let cfg =
            generate_random_config(&AssetUniverse::with_cash(5).unwrap(), 50 + draw, 1000).unwrap();
        let mut p = CaosdPolicy::new(&cfg, small(draw % 2 == 1), draw).unwrap();
        p.params_mut()
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.3..0.3));
        let obs = random_obs(5, &mut rng);
        let s = p.sample_action(&obs, &mut rng).unwrap().surrogate;
        let c = Cotangent {
            log_prob: rng.gen_range(-1.0..1.0),
            entropy: rng.gen_range(-1.0..1.0),
            value: 0.7,
        };
        let all: Vec<usize> = (0..p.n_params()).collect();
        let err = check(&mut p, &obs, &s, c, &all);
        assert!(err <= 1e-4, "draw {draw}: relative error {err}");
    }
}

#[test]
fn latent_gradient_matches_finite_differences() {
    let cfg = generate_random_config(&AssetUniverse::with_cash(4).unwrap(), 3, 1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(3);
    for attention in [false, true] {
        let mut p = CaosdPolicy::new(&cfg, small(attention), 9).unwrap();
        let obs = random_obs(4, &mut rng);
        let c: Vec<f64> = (0..6).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let f = |p: &CaosdPolicy| {
            p.encode(&obs)
                .unwrap()
                .iter()
                .zip(&c)
                .map(|(a, b)| a * b)
                .sum::<f64>()
        };
        let grad = p.encode_vjp(&obs, &c).unwrap();
        for i in 0..p.n_params() {
            let orig = p.params()[i];
            p.params_mut()[i] = orig + STEP;
            let up = f(&p);
            p.params_mut()[i] = orig - STEP;
            let down = f(&p);
            p.params_mut()[i] = orig;
            let fd = (up - down) / (2.0 * STEP);
            let err = (fd - grad[i]).abs() / fd.abs().max(grad[i].abs()).max(FLOOR);
            assert!(err <= 1e-4, "param {i}: {fd} vs {}", grad[i]);
        }
    }
}

#[test]
fn default_architecture_spot_check() {
    let cfg = generate_random_config(&AssetUniverse::with_cash(6).unwrap(), 11, 1000).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(11);
    let mut p = CaosdPolicy::new(&cfg, PolicyConfig::default(), 1).unwrap();
    let obs = random_obs(6, &mut rng);
    let s = p.sample_action(&obs, &mut rng).unwrap().surrogate;
    let picks: Vec<usize> = (0..300).map(|_| rng.gen_range(0..p.n_params())).collect();
    let err = check(
        &mut p,
        &obs,
        &s,
        Cotangent {
            log_prob: 1.0,
            entropy: 0.1,
            value: 0.5,
        },
        &picks,
    );
    assert!(err <= 1e-4, "relative error {err}");
}
