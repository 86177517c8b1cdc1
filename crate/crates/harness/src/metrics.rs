//! Mean returns, deltas against the random baseline and their confidence intervals.

use std::collections::{BTreeMap, BTreeSet};
use std::fmt;

use caosd_agent::normal_ci;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};

pub const CAOSD: &str = "CAOSD";
pub const RANDOM: &str = "RANDOM";

pub const BOOTSTRAP_RESAMPLES: usize = 2000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Environment {
    Sim,
    Bt,
}

impl fmt::Display for Environment {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Environment::Sim => "sim",
            Environment::Bt => "bt",
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum CiMethod {
    #[default]
    Normal,
    /// Percentile bootstrap of the mean.
    Bootstrap,
}

/// A mean with its 95% interval.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Interval {
    pub mean: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    pub n: usize,
}

impl Interval {
    pub fn half_width(&self) -> f64 {
        (self.ci_hi - self.ci_lo) / 2.0
    }

    pub fn excludes_zero(&self) -> bool {
        self.ci_lo > 0.0 || self.ci_hi < 0.0
    }
}

/// Mean and 95% normal-approximation interval (1.96·s/√n). A single value gives a point.
pub fn mean_ci(xs: &[f64]) -> Result<Interval> {
    if xs.is_empty() {
        return Err(HarnessError::InvalidInput("no values to summarize".into()));
    }
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(HarnessError::InvalidInput("non-finite value".into()));
    }
    let (mean, ci_lo, ci_hi) = normal_ci(xs);
    Ok(Interval {
        mean,
        ci_lo,
        ci_hi,
        n: xs.len(),
    })
}

pub fn bootstrap_ci(xs: &[f64], resamples: usize, seed: u64) -> Result<Interval> {
    let base = mean_ci(xs)?;
    if xs.len() == 1 || resamples == 0 {
        return Ok(Interval {
            ci_lo: base.mean,
            ci_hi: base.mean,
            ..base
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = xs.len();
    let mut means: Vec<f64> = (0..resamples)
        .map(|_| (0..n).map(|_| xs[rng.gen_range(0..n)]).sum::<f64>() / n as f64)
        .collect();
    means.sort_by(f64::total_cmp);
    let at = |q: f64| means[((q * (resamples - 1) as f64).round() as usize).min(resamples - 1)];
    Ok(Interval {
        ci_lo: at(0.025).min(base.mean),
        ci_hi: at(0.975).max(base.mean),
        ..base
    })
}

pub fn interval(xs: &[f64], method: CiMethod, seed: u64) -> Result<Interval> {
    match method {
        CiMethod::Normal => mean_ci(xs),
        CiMethod::Bootstrap => bootstrap_ci(xs, BOOTSTRAP_RESAMPLES, seed),
    }
}

/// One approach in one experiment and environment. Intervals are over trajectories.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ApproachMetrics {
    pub approach: String,
    pub nu: Interval,
    /// `ν̄ − ν̄_RANDOM`; the interval combines both standard errors.
    pub delta_vs_random: Option<Interval>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub experiment: String,
    pub env: Environment,
    pub ci_level: String,
    pub ci_method: CiMethod,
    pub approaches: Vec<ApproachMetrics>,
}

impl MetricsReport {
    pub fn approach(&self, name: &str) -> Option<&ApproachMetrics> {
        self.approaches.iter().find(|a| a.approach == name)
    }
}

fn sample_var(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
}

/// Builds a report from per-approach episode returns.
pub fn build_report(
    experiment: &str,
    env: Environment,
    results: &[(String, Vec<f64>)],
    method: CiMethod,
    seed: u64,
) -> Result<MetricsReport> {
    let mut seen = BTreeSet::new();
    for (name, _) in results {
        if !seen.insert(name.as_str()) {
            return Err(HarnessError::InvalidInput(format!(
                "approach {name} listed twice"
            )));
        }
    }
    let random = results.iter().find(|(n, _)| n == RANDOM).map(|(_, v)| v);
    let approaches = results
        .iter()
        .map(|(name, nus)| {
            let nu = interval(nus, method, seed)?;
            let delta_vs_random = match random {
                None => None,
                Some(_) if name == RANDOM => Some(Interval {
                    mean: 0.0,
                    ci_lo: 0.0,
                    ci_hi: 0.0,
                    n: nus.len(),
                }),
                Some(r) => {
                    let rm = r.iter().sum::<f64>() / r.len() as f64;
                    let mean = nu.mean - rm;
                    let half = 1.96
                        * (sample_var(nus) / nus.len() as f64 + sample_var(r) / r.len() as f64)
                            .sqrt();
                    Some(Interval {
                        mean,
                        ci_lo: mean - half,
                        ci_hi: mean + half,
                        n: nus.len(),
                    })
                }
            };
            Ok(ApproachMetrics {
                approach: name.clone(),
                nu,
                delta_vs_random,
            })
        })
        .collect::<Result<_>>()?;
    Ok(MetricsReport {
        experiment: experiment.to_string(),
        env,
        ci_level: "trajectory".into(),
        ci_method: method,
        approaches,
    })
}

/// Cross-experiment θ̄ and δ̄ of one approach in one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateRow {
    pub env: Environment,
    pub approach: String,
    pub n_experiments: usize,
    pub theta: Interval,
    pub delta: Option<Interval>,
}

/// θ̄ and δ̄ with experiment-level intervals. Every approach must cover the same
/// experiments within an environment; δ is paired per experiment before averaging.
pub fn aggregate(reports: &[MetricsReport]) -> Result<Vec<AggregateRow>> {
    let mut by_env: BTreeMap<Environment, BTreeMap<&str, &MetricsReport>> = BTreeMap::new();
    for r in reports {
        if by_env
            .entry(r.env)
            .or_default()
            .insert(&r.experiment, r)
            .is_some()
        {
            return Err(HarnessError::InvalidInput(format!(
                "experiment {} reported twice for {}",
                r.experiment, r.env
            )));
        }
    }
    let mut rows = Vec::new();
    for (env, exps) in by_env {
        let mut order: Vec<&str> = Vec::new();
        for r in exps.values() {
            for a in &r.approaches {
                if !order.contains(&a.approach.as_str()) {
                    order.push(&a.approach);
                }
            }
        }
        for name in order {
            let missing: Vec<&str> = exps
                .iter()
                .filter(|(_, r)| r.approach(name).is_none())
                .map(|(e, _)| *e)
                .collect();
            if !missing.is_empty() {
                return Err(HarnessError::MismatchedExperiments(format!(
                    "{name} ({env}) has no result for {}",
                    missing.join(", ")
                )));
            }
            let means: Vec<f64> = exps
                .values()
                .map(|r| r.approach(name).unwrap().nu.mean)
                .collect();
            let deltas: Option<Vec<f64>> = exps
                .values()
                .map(|r| {
                    r.approach(RANDOM).map(|rd| {
                        if name == RANDOM {
                            0.0
                        } else {
                            r.approach(name).unwrap().nu.mean - rd.nu.mean
                        }
                    })
                })
                .collect();
            rows.push(AggregateRow {
                env,
                approach: name.to_string(),
                n_experiments: means.len(),
                theta: mean_ci(&means)?,
                delta: deltas.map(|d| mean_ci(&d)).transpose()?,
            });
        }
    }
    Ok(rows)
}
