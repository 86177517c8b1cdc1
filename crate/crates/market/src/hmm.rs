//! Gaussian hidden Markov model of monthly asset returns.
//!
//! Each hidden state carries a mean return vector and a covariance matrix;
//! states evolve by a row-stochastic transition matrix. When the first label
//! is `CASH` that asset has hard-zero mean and variance and every simulated
//! draw returns exactly 0 for it.

use caosd_core::constraints::CASH_LABEL;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{MarketError, Result};
use crate::linalg::{cholesky_pd, cholesky_psd, forward_solve, lower_mul};
use crate::prices::ReturnMatrix;

pub const DEFAULT_STATES: usize = 4;
pub const DEFAULT_RESTARTS: usize = 5;
pub const DEFAULT_MAX_ITER: usize = 500;
pub const DEFAULT_TOL: f64 = 1e-6;
pub const COVARIANCE_RIDGE: f64 = 1e-6;

const STOCHASTIC_TOL: f64 = 1e-10;
const MIN_PIVOT: f64 = 1e-12;
const LN_2PI: f64 = 1.837_877_066_409_345_5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, Default)]
#[serde(rename_all = "lowercase")]
pub enum CovarianceKind {
    #[default]
    Diagonal,
    Full,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct ModelDocument {
    n_states: usize,
    labels: Vec<String>,
    transition: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    initial_dist: Vec<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(try_from = "ModelDocument", into = "ModelDocument")]
pub struct MarketModel {
    labels: Vec<String>,
    transition: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
    covariances: Vec<Vec<Vec<f64>>>,
    initial_dist: Vec<f64>,
    factors: Vec<Vec<Vec<f64>>>,
}

impl PartialEq for MarketModel {
    fn eq(&self, other: &Self) -> bool {
        self.labels == other.labels
            && self.transition == other.transition
            && self.means == other.means
            && self.covariances == other.covariances
            && self.initial_dist == other.initial_dist
    }
}

impl TryFrom<ModelDocument> for MarketModel {
    type Error = MarketError;

    fn try_from(doc: ModelDocument) -> Result<Self> {
        if doc.n_states != doc.transition.len() {
            return Err(MarketError::InvalidModel(format!(
                "n_states = {} but transition has {} rows",
                doc.n_states,
                doc.transition.len()
            )));
        }
        MarketModel::new(
            doc.labels,
            doc.transition,
            doc.means,
            doc.covariances,
            doc.initial_dist,
        )
    }
}

impl From<MarketModel> for ModelDocument {
    fn from(m: MarketModel) -> Self {
        Self {
            n_states: m.n_states(),
            labels: m.labels,
            transition: m.transition,
            means: m.means,
            covariances: m.covariances,
            initial_dist: m.initial_dist,
        }
    }
}

fn check_distribution(p: &[f64], what: &str) -> Result<()> {
    if p.iter().any(|v| !(v.is_finite() && *v >= 0.0)) {
        return Err(MarketError::InvalidModel(format!(
            "{what} has a negative or non-finite entry"
        )));
    }
    let s: f64 = p.iter().sum();
    if (s - 1.0).abs() > STOCHASTIC_TOL {
        return Err(MarketError::InvalidModel(format!("{what} sums to {s}")));
    }
    Ok(())
}

impl MarketModel {
    pub fn new(
        labels: Vec<String>,
        transition: Vec<Vec<f64>>,
        means: Vec<Vec<f64>>,
        covariances: Vec<Vec<Vec<f64>>>,
        initial_dist: Vec<f64>,
    ) -> Result<Self> {
        let h = transition.len();
        let n = labels.len();
        if h == 0 || n == 0 {
            return Err(MarketError::InvalidModel(
                "model needs at least one state and one asset".into(),
            ));
        }
        if means.len() != h || covariances.len() != h || initial_dist.len() != h {
            return Err(MarketError::InvalidModel(
                "per-state arrays disagree on the number of states".into(),
            ));
        }
        for (s, row) in transition.iter().enumerate() {
            if row.len() != h {
                return Err(MarketError::InvalidModel(format!(
                    "transition row {s} has length {}",
                    row.len()
                )));
            }
            check_distribution(row, &format!("transition row {s}"))?;
        }
        check_distribution(&initial_dist, "initial distribution")?;

        let has_cash = labels[0] == CASH_LABEL;
        let mut factors = Vec::with_capacity(h);
        for s in 0..h {
            let (mu, cov) = (&means[s], &covariances[s]);
            if mu.len() != n || cov.len() != n || cov.iter().any(|r| r.len() != n) {
                return Err(MarketError::InvalidModel(format!(
                    "state {s} has parameters of the wrong size"
                )));
            }
            if mu
                .iter()
                .chain(cov.iter().flatten())
                .any(|v| !v.is_finite())
            {
                return Err(MarketError::InvalidModel(format!(
                    "state {s} has non-finite parameters"
                )));
            }
            for i in 0..n {
                for j in 0..i {
                    let tol = 1e-12 * (cov[i][i].abs() + cov[j][j].abs()).max(1e-300);
                    if (cov[i][j] - cov[j][i]).abs() > tol {
                        return Err(MarketError::InvalidModel(format!(
                            "covariance of state {s} is not symmetric"
                        )));
                    }
                }
            }
            if has_cash && (mu[0] != 0.0 || cov[0].iter().any(|&v| v != 0.0)) {
                return Err(MarketError::InvalidModel(format!(
                    "state {s}: cash must have zero mean and zero covariance"
                )));
            }
            let l = cholesky_psd(cov, 1e-10).ok_or_else(|| {
                MarketError::InvalidModel(format!(
                    "covariance of state {s} is not positive semidefinite"
                ))
            })?;
            factors.push(l);
        }
        Ok(Self {
            labels,
            transition,
            means,
            covariances,
            initial_dist,
            factors,
        })
    }

    /// One-state model; handy for deterministic test markets.
    pub fn single_state(
        labels: Vec<String>,
        mean: Vec<f64>,
        covariance: Vec<Vec<f64>>,
    ) -> Result<Self> {
        Self::new(
            labels,
            vec![vec![1.0]],
            vec![mean],
            vec![covariance],
            vec![1.0],
        )
    }

    pub fn n_states(&self) -> usize {
        self.transition.len()
    }

    pub fn n_assets(&self) -> usize {
        self.labels.len()
    }

    pub fn labels(&self) -> &[String] {
        &self.labels
    }

    pub fn has_cash(&self) -> bool {
        self.labels[0] == CASH_LABEL
    }

    pub fn transition(&self) -> &[Vec<f64>] {
        &self.transition
    }

    pub fn means(&self) -> &[Vec<f64>] {
        &self.means
    }

    pub fn covariances(&self) -> &[Vec<Vec<f64>>] {
        &self.covariances
    }

    pub fn initial_dist(&self) -> &[f64] {
        &self.initial_dist
    }

    pub fn sample_initial_state<R: Rng + ?Sized>(&self, rng: &mut R) -> usize {
        categorical(&self.initial_dist, rng)
    }

    /// Gaussian return draw for `state`.
    pub fn emit<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> Vec<f64> {
        let z: Vec<f64> = (0..self.n_assets())
            .map(|_| rng.sample(StandardNormal))
            .collect();
        let noise = lower_mul(&self.factors[state], &z);
        let mut x: Vec<f64> = self.means[state]
            .iter()
            .zip(noise)
            .map(|(m, e)| m + e)
            .collect();
        if self.has_cash() {
            x[0] = 0.0;
        }
        x
    }

    /// Advances the hidden chain one step and draws the return emitted by the new state.
    pub fn simulate_step<R: Rng + ?Sized>(&self, state: usize, rng: &mut R) -> (usize, Vec<f64>) {
        let next = categorical(&self.transition[state], rng);
        let x = self.emit(next, rng);
        (next, x)
    }

    /// Hidden path and returns of length `len`, starting from the initial distribution.
    pub fn simulate_returns<R: Rng + ?Sized>(
        &self,
        len: usize,
        rng: &mut R,
    ) -> (Vec<usize>, Vec<Vec<f64>>) {
        let mut states = Vec::with_capacity(len);
        let mut rows = Vec::with_capacity(len);
        if len == 0 {
            return (states, rows);
        }
        let mut s = self.sample_initial_state(rng);
        rows.push(self.emit(s, rng));
        states.push(s);
        while rows.len() < len {
            let (next, x) = self.simulate_step(s, rng);
            s = next;
            states.push(s);
            rows.push(x);
        }
        (states, rows)
    }
}

fn categorical<R: Rng + ?Sized>(p: &[f64], rng: &mut R) -> usize {
    let u: f64 = rng.gen();
    let mut acc = 0.0;
    for (i, &w) in p.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    p.iter().rposition(|&w| w > 0.0).unwrap_or(p.len() - 1)
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct FitOptions {
    pub n_states: usize,
    pub seed: u64,
    pub restarts: usize,
    pub covariance: CovarianceKind,
    pub max_iter: usize,
    pub tol: f64,
    /// Prepend a zero-return cash asset to the fitted model.
    pub include_cash: bool,
}

impl Default for FitOptions {
    fn default() -> Self {
        Self {
            n_states: DEFAULT_STATES,
            seed: 0,
            restarts: DEFAULT_RESTARTS,
            covariance: CovarianceKind::Diagonal,
            max_iter: DEFAULT_MAX_ITER,
            tol: DEFAULT_TOL,
            include_cash: true,
        }
    }
}

#[derive(Debug, Clone)]
pub struct FitReport {
    pub model: MarketModel,
    /// Log-likelihood after each E-step of the selected restart.
    pub log_likelihood_trace: Vec<f64>,
    pub restart_log_likelihoods: Vec<f64>,
    pub iterations: usize,
    pub regularized: bool,
}

impl FitReport {
    pub fn log_likelihood(&self) -> f64 {
        *self
            .log_likelihood_trace
            .last()
            .expect("trace is never empty")
    }
}

#[derive(Debug, Clone)]
struct Params {
    initial: Vec<f64>,
    transition: Vec<Vec<f64>>,
    means: Vec<Vec<f64>>,
    covs: Vec<Vec<Vec<f64>>>,
}

struct EmRun {
    params: Params,
    trace: Vec<f64>,
    iterations: usize,
    regularized: bool,
}

/// Baum–Welch fit of a Gaussian HMM to the rows of `returns`.
pub fn fit_hmm(returns: &ReturnMatrix, options: &FitOptions) -> Result<FitReport> {
    let h = options.n_states;
    if h == 0 {
        return Err(MarketError::InvalidModel(
            "n_states must be at least 1".into(),
        ));
    }
    let data = returns.rows();
    if data.len() < 10 * h {
        return Err(MarketError::InsufficientData(format!(
            "{} return rows for {h} states; need at least {}",
            data.len(),
            10 * h
        )));
    }
    if returns.n_assets() == 0 {
        return Err(MarketError::InsufficientData("no asset columns".into()));
    }

    let restarts = options.restarts.max(1);
    let mut best: Option<EmRun> = None;
    let mut finals = Vec::with_capacity(restarts);
    for r in 0..restarts {
        let mut rng = ChaCha8Rng::seed_from_u64(
            options.seed ^ (r as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15),
        );
        let init = initial_params(data, h, options.covariance, &mut rng);
        let run = run_em(data, init, options)?;
        let ll = *run.trace.last().expect("trace is never empty");
        log::debug!(
            "restart {r}: log-likelihood {ll} after {} iterations",
            run.iterations
        );
        finals.push(ll);
        if best
            .as_ref()
            .is_none_or(|b| ll > *b.trace.last().expect("non-empty"))
        {
            best = Some(run);
        }
    }
    let run = best.expect("at least one restart");
    let model = into_model(returns.labels(), run.params, options.include_cash)?;
    Ok(FitReport {
        model,
        log_likelihood_trace: run.trace,
        restart_log_likelihoods: finals,
        iterations: run.iterations,
        regularized: run.regularized,
    })
}

fn into_model(labels: &[String], p: Params, include_cash: bool) -> Result<MarketModel> {
    let transition = p.transition.into_iter().map(renormalize).collect();
    let initial = renormalize(p.initial);
    if !include_cash {
        return MarketModel::new(labels.to_vec(), transition, p.means, p.covs, initial);
    }
    let labels = std::iter::once(CASH_LABEL.to_string())
        .chain(labels.iter().cloned())
        .collect();
    let means = p
        .means
        .into_iter()
        .map(|m| std::iter::once(0.0).chain(m).collect())
        .collect();
    let covs = p
        .covs
        .into_iter()
        .map(|c| {
            let k = c.len();
            std::iter::once(vec![0.0; k + 1])
                .chain(
                    c.into_iter()
                        .map(|row| std::iter::once(0.0).chain(row).collect()),
                )
                .collect()
        })
        .collect();
    MarketModel::new(labels, transition, means, covs, initial)
}

fn renormalize(mut p: Vec<f64>) -> Vec<f64> {
    for v in &mut p {
        *v = v.max(0.0);
    }
    let s: f64 = p.iter().sum();
    p.iter_mut().for_each(|v| *v /= s);
    p
}

fn column_moments(data: &[Vec<f64>], kind: CovarianceKind) -> (Vec<f64>, Vec<Vec<f64>>) {
    let k = data[0].len();
    let t = data.len() as f64;
    let mean: Vec<f64> = (0..k)
        .map(|j| data.iter().map(|r| r[j]).sum::<f64>() / t)
        .collect();
    let mut cov = vec![vec![0.0; k]; k];
    for r in data {
        for i in 0..k {
            for j in 0..=i {
                cov[i][j] += (r[i] - mean[i]) * (r[j] - mean[j]) / t;
            }
        }
    }
    symmetrize(&mut cov, kind);
    (mean, cov)
}

fn symmetrize(cov: &mut [Vec<f64>], kind: CovarianceKind) {
    let k = cov.len();
    for i in 0..k {
        for j in 0..i {
            match kind {
                CovarianceKind::Full => cov[j][i] = cov[i][j],
                CovarianceKind::Diagonal => {
                    cov[i][j] = 0.0;
                    cov[j][i] = 0.0;
                }
            }
        }
    }
}

fn initial_params(
    data: &[Vec<f64>],
    h: usize,
    kind: CovarianceKind,
    rng: &mut ChaCha8Rng,
) -> Params {
    let (mean, mut cov) = column_moments(data, kind);
    for (i, row) in cov.iter_mut().enumerate() {
        row[i] += COVARIANCE_RIDGE;
    }
    let means = if h == 1 {
        vec![mean]
    } else {
        rand::seq::index::sample(rng, data.len(), h)
            .into_iter()
            .map(|t| data[t].clone())
            .collect()
    };
    let transition = (0..h)
        .map(|i| {
            let noise: Vec<f64> = (0..h).map(|_| rng.gen::<f64>()).collect();
            let s: f64 = noise.iter().sum();
            (0..h)
                .map(|j| 0.5 * (i == j) as u8 as f64 + 0.5 * noise[j] / s)
                .collect()
        })
        .collect();
    Params {
        initial: vec![1.0 / h as f64; h],
        transition,
        means,
        covs: vec![cov; h],
    }
}

struct Emission {
    factor: Vec<Vec<f64>>,
    log_norm: f64,
}

fn emission(mean_len: usize, cov: &[Vec<f64>], state: usize) -> Result<Emission> {
    let factor = cholesky_pd(cov, 0.0).ok_or(MarketError::SingularCovariance { state })?;
    let log_det: f64 = (0..mean_len).map(|i| factor[i][i].ln()).sum::<f64>() * 2.0;
    Ok(Emission {
        factor,
        log_norm: -0.5 * (mean_len as f64 * LN_2PI + log_det),
    })
}

fn log_density(e: &Emission, mean: &[f64], x: &[f64]) -> f64 {
    let mut d: Vec<f64> = x.iter().zip(mean).map(|(a, b)| a - b).collect();
    forward_solve(&e.factor, &mut d);
    e.log_norm - 0.5 * d.iter().map(|v| v * v).sum::<f64>()
}

struct Posterior {
    log_likelihood: f64,
    gamma: Vec<Vec<f64>>,
    xi_sum: Vec<Vec<f64>>,
}

fn e_step(data: &[Vec<f64>], p: &Params) -> Result<Posterior> {
    let h = p.initial.len();
    let t_len = data.len();
    let k = data[0].len();
    let emissions = (0..h)
        .map(|s| emission(k, &p.covs[s], s))
        .collect::<Result<Vec<_>>>()?;

    let mut b = vec![vec![0.0; h]; t_len];
    let mut shift = vec![0.0; t_len];
    for (t, x) in data.iter().enumerate() {
        let logs: Vec<f64> = (0..h)
            .map(|s| log_density(&emissions[s], &p.means[s], x))
            .collect();
        let m = logs.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        shift[t] = m;
        for s in 0..h {
            b[t][s] = (logs[s] - m).exp();
        }
    }

    let mut alpha = vec![vec![0.0; h]; t_len];
    let mut scale = vec![0.0; t_len];
    for t in 0..t_len {
        for j in 0..h {
            let prior = if t == 0 {
                p.initial[j]
            } else {
                (0..h).map(|i| alpha[t - 1][i] * p.transition[i][j]).sum()
            };
            alpha[t][j] = prior * b[t][j];
        }
        let c: f64 = alpha[t].iter().sum();
        if !(c > 0.0 && c.is_finite()) {
            return Err(MarketError::InvalidModel(format!(
                "forward pass underflowed at row {t}"
            )));
        }
        scale[t] = c;
        alpha[t].iter_mut().for_each(|v| *v /= c);
    }
    let log_likelihood = scale.iter().zip(&shift).map(|(c, m)| c.ln() + m).sum();

    let mut beta = vec![vec![1.0; h]; t_len];
    for t in (0..t_len - 1).rev() {
        for i in 0..h {
            beta[t][i] = (0..h)
                .map(|j| p.transition[i][j] * b[t + 1][j] * beta[t + 1][j])
                .sum::<f64>()
                / scale[t + 1];
        }
    }

    let mut gamma = vec![vec![0.0; h]; t_len];
    for t in 0..t_len {
        let g: Vec<f64> = (0..h).map(|s| alpha[t][s] * beta[t][s]).collect();
        let sum: f64 = g.iter().sum();
        gamma[t] = g.into_iter().map(|v| v / sum).collect();
    }
    let mut xi_sum = vec![vec![0.0; h]; h];
    for t in 0..t_len - 1 {
        for i in 0..h {
            for j in 0..h {
                xi_sum[i][j] +=
                    alpha[t][i] * p.transition[i][j] * b[t + 1][j] * beta[t + 1][j] / scale[t + 1];
            }
        }
    }
    Ok(Posterior {
        log_likelihood,
        gamma,
        xi_sum,
    })
}

fn m_step(
    data: &[Vec<f64>],
    post: &Posterior,
    prev: &Params,
    kind: CovarianceKind,
) -> Result<(Params, bool)> {
    let h = prev.initial.len();
    let k = data[0].len();
    let mut next = prev.clone();
    let mut regularized = false;

    next.initial = post.gamma[0].clone();
    for i in 0..h {
        let row_sum: f64 = post.xi_sum[i].iter().sum();
        if row_sum > 0.0 {
            next.transition[i] = post.xi_sum[i].iter().map(|v| v / row_sum).collect();
        }
    }

    for s in 0..h {
        let weight: f64 = post.gamma.iter().map(|g| g[s]).sum();
        if weight <= 1e-10 {
            continue;
        }
        let mean: Vec<f64> = (0..k)
            .map(|j| {
                data.iter()
                    .zip(&post.gamma)
                    .map(|(x, g)| g[s] * x[j])
                    .sum::<f64>()
                    / weight
            })
            .collect();
        let mut cov = vec![vec![0.0; k]; k];
        for (x, g) in data.iter().zip(&post.gamma) {
            let w = g[s] / weight;
            for i in 0..k {
                for j in 0..=i {
                    cov[i][j] += w * (x[i] - mean[i]) * (x[j] - mean[j]);
                }
            }
        }
        symmetrize(&mut cov, kind);
        if cholesky_pd(&cov, MIN_PIVOT).is_none() {
            log::warn!(
                "covariance of state {s} collapsed; adding {COVARIANCE_RIDGE} to the diagonal"
            );
            regularized = true;
            for (i, row) in cov.iter_mut().enumerate() {
                row[i] += COVARIANCE_RIDGE;
            }
            if cholesky_pd(&cov, MIN_PIVOT).is_none() {
                return Err(MarketError::SingularCovariance { state: s });
            }
        }
        next.means[s] = mean;
        next.covs[s] = cov;
    }
    Ok((next, regularized))
}

fn run_em(data: &[Vec<f64>], init: Params, options: &FitOptions) -> Result<EmRun> {
    let mut params = init;
    let mut trace = Vec::new();
    let mut regularized = false;
    let mut iterations = 0;
    loop {
        let post = e_step(data, &params)?;
        let ll = post.log_likelihood;
        let converged = trace
            .last()
            .is_some_and(|prev: &f64| ll - prev < options.tol);
        trace.push(ll);
        if converged || iterations >= options.max_iter {
            break;
        }
        let (next, reg) = m_step(data, &post, &params, options.covariance)?;
        regularized |= reg;
        params = next;
        iterations += 1;
    }
    Ok(EmRun {
        params,
        trace,
        iterations,
        regularized,
    })
}
