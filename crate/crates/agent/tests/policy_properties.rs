use caosd_agent::{dirichlet, CaosdPolicy, EncoderConfig, PolicyConfig};
use caosd_core::{
    generate_random_config, AssetUniverse, ConstraintConfig, PaddedSimplex, SubAction,
};
use caosd_market::Observation;
use proptest::prelude::*;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

fn small() -> PolicyConfig {
    PolicyConfig {
        encoder: EncoderConfig {
            hidden_sizes: vec![16, 8],
            embedding_size: 8,
            use_attention: false,
        },
        branch_hidden: vec![8],
        value_hidden: vec![8],
    }
}

fn start(n: usize) -> Observation {
    let mut allocation = vec![0.0; n];
    allocation[0] = 1.0;
    Observation {
        wealth: 1.0,
        allocation,
        last_returns: vec![0.0; n],
    }
}

fn set_tensor(p: &mut CaosdPolicy, name: &str, value: f64) {
    let t = p
        .tensors()
        .iter()
        .find(|t| t.name == name)
        .unwrap_or_else(|| panic!("no tensor {name}"))
        .clone();
    let len: usize = t.shape.iter().product();
    p.params_mut()[t.offset..t.offset + len]
        .iter_mut()
        .for_each(|v| *v = value);
}

fn two_asset_free() -> ConstraintConfig {
    ConstraintConfig::from_sets(AssetUniverse::anonymous(2).unwrap(), [0], 0.0, [1], 0.0).unwrap()
}

#[test]
fn density_integrates_to_one_on_a_segment() {
    let mut p = CaosdPolicy::new(&two_asset_free(), small(), 4).unwrap();
    // push both concentrations well above 1 so the density vanishes at the ends
    set_tensor(&mut p, "branch4.1.bias", 2.0);
    let obs = start(2);
    let (template, _) = p.deterministic_surrogate(&obs).unwrap();
    let spec = p.decomposition().spec(3).clone();
    let m = 20_000;
    let mut integral = 0.0;
    for i in 0..m {
        let x = (i as f64 + 0.5) / m as f64;
        let mut s = template.clone();
        s[3] = spec.embed(&[x, 1.0 - x]).unwrap();
        integral += p.log_prob(&obs, &s).unwrap().exp() / m as f64;
    }
    assert!((integral - 1.0).abs() < 1e-3, "integral {integral}");
}

#[test]
fn entropy_formula_against_quadrature_and_scaling() {
    // −∫ p ln p over the triangle, parametrized by its first two coordinates
    let quad = |alpha: &[f64]| {
        let m = 600;
        let h = 1.0 / m as f64;
        let mut acc = 0.0;
        for i in 0..m {
            for j in 0..m - i {
                let x = (i as f64 + 1.0 / 3.0) * h;
                let y = (j as f64 + 1.0 / 3.0) * h;
                let z = 1.0 - x - y;
                if z <= 0.0 {
                    continue;
                }
                let lp = dirichlet::ln_density(alpha, &[x, y, z]);
                let w = if j < m - i - 1 { h * h } else { h * h / 2.0 };
                acc -= w * lp.exp() * lp;
            }
        }
        acc
    };
    let base = [2.0, 3.0, 4.0];
    let scaled = [20.0, 30.0, 40.0];
    let (h1, h10) = (dirichlet::entropy(&base), dirichlet::entropy(&scaled));
    assert!((h1 - quad(&base)).abs() < 1e-2, "{h1} vs {}", quad(&base));
    assert!(
        (h10 - quad(&scaled)).abs() < 2e-2,
        "{h10} vs {}",
        quad(&scaled)
    );
    assert!(h10 < h1);
}

#[test]
fn branches_ignore_later_sub_actions() {
    // K1 = {1, 2}, K2 = {0, 1, 2}, K3 = {1, 2, 3}
    let cfg = ConstraintConfig::from_sets(
        AssetUniverse::anonymous(5).unwrap(),
        [0, 1, 2],
        0.7,
        [1, 2, 3],
        0.6,
    )
    .unwrap();
    let mut p = CaosdPolicy::new(&cfg, small(), 8).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    p.params_mut()
        .iter_mut()
        .for_each(|v| *v += rng.gen_range(-0.2..0.2));
    let obs = start(5);
    let latent = p.encode(&obs).unwrap();
    let a = p.sample_action(&obs, &mut rng).unwrap().surrogate;
    let b = p.sample_action(&obs, &mut rng).unwrap().surrogate;

    let mut mixed = a.clone();
    mixed[1] = b[1].clone();
    mixed[2] = b[2].clone();
    mixed[3] = b[3].clone();
    let eval_a = p.evaluate(&obs, &a).unwrap();
    let eval_m = p.evaluate(&obs, &mixed).unwrap();
    assert_eq!(eval_a.per_branch_log_prob[0], eval_m.per_branch_log_prob[0]);

    let alpha2 = |prev: &[SubAction]| p.branch_alpha(1, &latent, prev).unwrap().unwrap().alpha;
    assert_ne!(
        alpha2(&a[..1]),
        alpha2(&b[..1]),
        "branch 2 must see the first sub-action"
    );
    let alpha3 = |prev: &[SubAction]| p.branch_alpha(2, &latent, prev).unwrap().unwrap().alpha;
    assert_ne!(alpha3(&a[..2]), alpha3(&[a[0].clone(), b[1].clone()]));
}

#[test]
fn sampled_actions_are_members() {
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    for seed in 0..10u64 {
        let n = 3 + (seed as usize % 8);
        let cfg = generate_random_config(&AssetUniverse::with_cash(n).unwrap(), 900 + seed, 1000)
            .unwrap();
        let mut p = CaosdPolicy::new(&cfg, small(), seed).unwrap();
        p.params_mut()
            .iter_mut()
            .for_each(|v| *v += rng.gen_range(-0.5..0.5));
        let poly = cfg.to_h_polytope();
        for _ in 0..1000 {
            let a = p.sample_action(&start(n), &mut rng).unwrap().action;
            assert!(
                poly.contains(a.values(), 1e-9),
                "seed {seed}: {:?}",
                a.values()
            );
        }
    }
}

#[test]
fn zero_thresholds_use_only_the_last_branch() {
    let cfg =
        ConstraintConfig::from_sets(AssetUniverse::anonymous(4).unwrap(), [0, 1], 0.0, [2], 0.0)
            .unwrap();
    let p = CaosdPolicy::new(&cfg, small(), 2).unwrap();
    let mut rng = ChaCha8Rng::seed_from_u64(2);
    for _ in 0..100 {
        let out = p.sample_action(&start(4), &mut rng).unwrap();
        assert_eq!(out.weights.as_array(), [0.0, 0.0, 0.0, 1.0]);
        assert_eq!(out.action.values(), out.surrogate[3].values());
    }
}

#[test]
fn deterministic_action_is_a_member_and_repeatable() {
    let cfg = generate_random_config(&AssetUniverse::with_cash(6).unwrap(), 17, 1000).unwrap();
    let p = CaosdPolicy::new(&cfg, PolicyConfig::default(), 17).unwrap();
    let a = p.deterministic_action(&start(6)).unwrap();
    assert_eq!(a, p.deterministic_action(&start(6)).unwrap());
    assert!(cfg.to_h_polytope().contains(a.values(), 1e-9));
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn log_prob_is_finite_and_reproducible(seed in 0u64..1000, n in 3usize..9) {
        let cfg = generate_random_config(&AssetUniverse::with_cash(n).unwrap(), seed, 1000).unwrap();
        let p = CaosdPolicy::new(&cfg, small(), seed).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let out = p.sample_action(&start(n), &mut rng).unwrap();
        let lp = p.log_prob(&start(n), &out.surrogate).unwrap();
        prop_assert!(lp.is_finite());
        prop_assert_eq!(lp, out.joint_log_prob);
        let w = out.weights.as_array();
        prop_assert!(w.iter().all(|&z| z >= 0.0));
        prop_assert!((w.iter().sum::<f64>() - 1.0).abs() <= 1e-12);
    }

    #[test]
    fn embedded_dirichlet_draws_stay_on_their_face(k in 2usize..6, shift in 0usize..3) {
        let spec = PaddedSimplex::new((0..k).map(|i| i + shift), k + shift + 1).unwrap();
        let mut rng = ChaCha8Rng::seed_from_u64((k * 10 + shift) as u64);
        let s = spec.sample_dirichlet(&vec![0.7; k], &mut rng).unwrap();
        prop_assert!((s.mass_on(spec.support()) - 1.0).abs() < 1e-12);
    }
}
