//! Fitting and sampling checks for the Gaussian HMM against known generating models.

use std::sync::Arc;

use caosd_market::{
    fit_hmm, to_returns, CovarianceKind, FitOptions, MarketModel, PriceTable, ReturnMatrix,
};
use chrono::NaiveDate;
use nalgebra::{DMatrix, DVector};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

fn two_state_model() -> MarketModel {
    MarketModel::new(
        vec!["X".into(), "Y".into()],
        vec![vec![0.9, 0.1], vec![0.1, 0.9]],
        vec![vec![0.02, 0.02], vec![-0.02, -0.02]],
        vec![
            vec![vec![0.0001, 0.0], vec![0.0, 0.0001]],
            vec![vec![0.0004, 0.0001], vec![0.0001, 0.0004]],
        ],
        vec![0.5, 0.5],
    )
    .unwrap()
}

fn sample_matrix(model: &MarketModel, rows: usize, seed: u64) -> ReturnMatrix {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (_, data) = model.simulate_returns(rows, &mut rng);
    ReturnMatrix::new(model.labels().to_vec(), data).unwrap()
}

#[test]
fn ingests_a_decade_of_monthly_prices() {
    let labels: Vec<String> = (1..=12).map(|i| format!("A{i:02}")).collect();
    let model = MarketModel::single_state(labels.clone(), vec![0.005; 12], {
        let mut c = vec![vec![0.0; 12]; 12];
        (0..12).for_each(|i| c[i][i] = 0.0025);
        c
    })
    .unwrap();
    let r = sample_matrix(&model, 131, 5);
    let start = NaiveDate::from_ymd_opt(2010, 1, 31).unwrap();
    let table = PriceTable::from_returns(labels, start, &[100.0; 12], r.rows()).unwrap();
    let mut csv = Vec::new();
    table.write_csv(&mut csv).unwrap();

    let back = caosd_market::ingest_prices(csv.as_slice()).unwrap();
    assert_eq!(back.n_rows(), 132);
    assert_eq!(back.labels().len(), 12);
    assert_eq!(
        *back.dates().last().unwrap(),
        NaiveDate::from_ymd_opt(2020, 12, 31).unwrap()
    );
    let returns = to_returns(&back).unwrap();
    assert_eq!(returns.n_rows(), 131);
    let err = returns.rows()[10][3] - r.rows()[10][3];
    assert!(err.abs() < 1e-12, "{err}");
}

#[test]
fn single_state_fit_is_the_sample_moments() {
    let r = sample_matrix(&two_state_model(), 400, 1);
    let opts = FitOptions {
        n_states: 1,
        restarts: 2,
        covariance: CovarianceKind::Full,
        include_cash: false,
        ..FitOptions::default()
    };
    let fit = fit_hmm(&r, &opts).unwrap();

    let t = r.n_rows() as f64;
    let mean: Vec<f64> = (0..2)
        .map(|j| r.rows().iter().map(|x| x[j]).sum::<f64>() / t)
        .collect();
    for i in 0..2 {
        assert!((fit.model.means()[0][i] - mean[i]).abs() < 1e-12);
        for j in 0..2 {
            let c = r
                .rows()
                .iter()
                .map(|x| (x[i] - mean[i]) * (x[j] - mean[j]))
                .sum::<f64>()
                / t;
            assert!(
                (fit.model.covariances()[0][i][j] - c).abs() < 1e-12,
                "cov[{i}][{j}]"
            );
        }
    }
}

#[test]
fn recovers_a_known_two_state_model() {
    let truth = two_state_model();
    let r = sample_matrix(&truth, 5000, 11);
    let opts = FitOptions {
        n_states: 2,
        seed: 3,
        restarts: 3,
        covariance: CovarianceKind::Full,
        include_cash: false,
        ..FitOptions::default()
    };
    let fit = fit_hmm(&r, &opts).unwrap();
    let m = fit.model.means();
    let (hi, lo) = if m[0][0] > m[1][0] { (0, 1) } else { (1, 0) };
    for j in 0..2 {
        assert!(
            (m[hi][j] - 0.02).abs() < 0.005,
            "high state mean {:?}",
            m[hi]
        );
        assert!(
            (m[lo][j] + 0.02).abs() < 0.005,
            "low state mean {:?}",
            m[lo]
        );
    }
    assert!((fit.model.transition()[hi][hi] - 0.9).abs() < 0.05);

    for w in fit.log_likelihood_trace.windows(2) {
        assert!(
            w[1] - w[0] >= -1e-8 * w[0].abs(),
            "log-likelihood fell: {} -> {}",
            w[0],
            w[1]
        );
    }
}

#[test]
fn log_likelihood_is_monotone_with_default_options() {
    let r = sample_matrix(&two_state_model(), 300, 2);
    let fit = fit_hmm(
        &r,
        &FitOptions {
            seed: 9,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(fit.restart_log_likelihoods.len(), 5);
    assert!(fit.iterations <= 500);
    for w in fit.log_likelihood_trace.windows(2) {
        assert!(w[1] - w[0] >= -1e-8 * w[0].abs(), "{} -> {}", w[0], w[1]);
    }
    assert_eq!(fit.model.labels()[0], "CASH");
    assert!(fit.model.means().iter().all(|m| m[0] == 0.0));

    let again = fit_hmm(
        &r,
        &FitOptions {
            seed: 9,
            ..FitOptions::default()
        },
    )
    .unwrap();
    assert_eq!(again.model, fit.model);
}

fn stationary_oracle(p: &[Vec<f64>]) -> Vec<f64> {
    // solve πᵀ(P − I) = 0 with Σπ = 1 by replacing one equation
    let h = p.len();
    let mut a = DMatrix::<f64>::zeros(h, h);
    for i in 0..h {
        for j in 0..h {
            a[(j, i)] = p[i][j] - if i == j { 1.0 } else { 0.0 };
        }
    }
    for j in 0..h {
        a[(h - 1, j)] = 1.0;
    }
    let mut b = DVector::<f64>::zeros(h);
    b[h - 1] = 1.0;
    a.lu().solve(&b).unwrap().iter().copied().collect()
}

#[test]
fn state_occupancy_matches_the_stationary_distribution() {
    let transition = vec![
        vec![0.7, 0.2, 0.1],
        vec![0.3, 0.5, 0.2],
        vec![0.1, 0.3, 0.6],
    ];
    let zero = vec![vec![0.0; 2]; 2];
    let model = MarketModel::new(
        vec!["CASH".into(), "A".into()],
        transition.clone(),
        vec![vec![0.0, 0.0]; 3],
        vec![zero.clone(), zero.clone(), zero],
        vec![1.0, 0.0, 0.0],
    )
    .unwrap();
    let pi = stationary_oracle(&transition);

    // eigenvector cross-check of the oracle
    let pt = DMatrix::from_fn(3, 3, |i, j| transition[j][i]);
    let v = DVector::from_vec(pi.clone());
    assert!((&pt * &v - &v).norm() < 1e-12);

    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let mut counts = [0usize; 3];
    let mut s = 0;
    for _ in 0..100_000 {
        let (next, x) = model.simulate_step(s, &mut rng);
        assert_eq!(x[0], 0.0);
        counts[next] += 1;
        s = next;
    }
    for k in 0..3 {
        let freq = counts[k] as f64 / 1e5;
        assert!(
            (freq - pi[k]).abs() < 0.01,
            "state {k}: {freq} vs {}",
            pi[k]
        );
    }
}

#[test]
fn conditioned_draws_match_state_moments() {
    let model = Arc::new(two_state_model());
    let mut rng = ChaCha8Rng::seed_from_u64(21);
    let m = 100_000usize;
    for s in 0..2 {
        let draws: Vec<Vec<f64>> = (0..m).map(|_| model.emit(s, &mut rng)).collect();
        for i in 0..2 {
            let mean = draws.iter().map(|x| x[i]).sum::<f64>() / m as f64;
            let var = model.covariances()[s][i][i];
            assert!(
                (mean - model.means()[s][i]).abs() < 3.0 * (var / m as f64).sqrt(),
                "state {s} mean {i}"
            );
            for j in 0..2 {
                let mu = &model.means()[s];
                let c = draws
                    .iter()
                    .map(|x| (x[i] - mu[i]) * (x[j] - mu[j]))
                    .sum::<f64>()
                    / m as f64;
                let target = model.covariances()[s][i][j];
                // Var of a product of jointly Gaussian centred variables
                let se = ((model.covariances()[s][i][i] * model.covariances()[s][j][j]
                    + target * target)
                    / m as f64)
                    .sqrt();
                assert!(
                    (c - target).abs() < 3.0 * se,
                    "state {s} cov[{i}][{j}] = {c} vs {target}"
                );
            }
        }
    }
}
