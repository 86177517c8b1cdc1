//! Experiment matrices: train, evaluate and summarize one config per experiment.

use std::path::{Path, PathBuf};
use std::sync::Arc;

use caosd_agent::{derive_seed, train, CaosdPolicy, PolicyConfig, TrainConfig};
use caosd_core::{
    generate_random_config, is_feasible, AssetUniverse, ConstraintConfig, SamplerOptions,
};
use caosd_market::{MarketModel, ReturnMatrix};
use serde::{Deserialize, Serialize};

use crate::error::{HarnessError, Result};
use crate::evaluation::{evaluate_approach, Approach, EvalSettings, Market};
use crate::io::{
    ensure_dir, read_json, write_curve, write_json, write_nu, write_summary, write_text,
};
use crate::metrics::{
    aggregate, build_report, AggregateRow, CiMethod, Environment, MetricsReport, CAOSD, RANDOM,
};

pub const DEFAULT_EVAL_EPISODES: usize = 1000;
const GENERATION_ATTEMPTS: usize = 1000;

/// Results of a third-party method, one `nu` CSV per environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExternalResult {
    pub name: String,
    pub sim: Option<PathBuf>,
    pub bt: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentSpec {
    pub name: String,
    pub config: ConstraintConfig,
    #[serde(default = "default_episodes")]
    pub eval_episodes: usize,
    pub seed: u64,
    #[serde(default)]
    pub externals: Vec<ExternalResult>,
}

fn default_episodes() -> usize {
    DEFAULT_EVAL_EPISODES
}

impl ExperimentSpec {
    pub fn validate(&self) -> Result<()> {
        if self.eval_episodes < 2 {
            return Err(HarnessError::InvalidInput(format!(
                "{}: eval_episodes must be at least 2",
                self.name
            )));
        }
        if !is_feasible(&self.config).feasible {
            return Err(caosd_core::CoreError::InfeasibleConfiguration.into());
        }
        Ok(())
    }
}

/// `count` feasible configs with non-empty interior, drawn from seeds `derive_seed(seed, k)`.
/// Configs whose polytope has no interior are skipped, since the random baseline cannot sample them.
pub fn generate_configs(
    universe: &AssetUniverse,
    count: usize,
    seed: u64,
) -> Result<Vec<ConstraintConfig>> {
    let mut out = Vec::with_capacity(count);
    let mut k = 0u64;
    while out.len() < count {
        if k as usize >= 100 * count.max(1) {
            return Err(caosd_core::CoreError::NoFeasibleConfiguration {
                attempts: k as usize,
            }
            .into());
        }
        let cfg = generate_random_config(universe, derive_seed(seed, k), GENERATION_ATTEMPTS)?;
        k += 1;
        if is_feasible(&cfg).has_interior() {
            out.push(cfg);
        }
    }
    Ok(out)
}

pub fn generate_specs(
    universe: &AssetUniverse,
    count: usize,
    seed: u64,
    eval_episodes: usize,
) -> Result<Vec<ExperimentSpec>> {
    Ok(generate_configs(universe, count, seed)?
        .into_iter()
        .enumerate()
        .map(|(i, config)| ExperimentSpec {
            name: format!("exp{i:03}"),
            seed: config.seed(),
            config,
            eval_episodes,
            externals: Vec::new(),
        })
        .collect())
}

#[derive(Debug, Clone)]
pub struct MatrixSettings {
    pub train: TrainConfig,
    pub policy: PolicyConfig,
    pub ci: CiMethod,
    pub sampler: SamplerOptions,
    pub backtest: Option<ReturnMatrix>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub experiment: String,
    pub error: String,
}

#[derive(Debug, Clone)]
pub struct MatrixOutcome {
    pub reports: Vec<MetricsReport>,
    pub failures: Vec<Failure>,
    pub summary: Vec<AggregateRow>,
}

/// Trains CAOSD on `spec` and evaluates it against the random baseline and any externals.
/// Writes `config.json`, `curve.csv`, both checkpoints, `nu_<env>.csv` and `metrics.json` into `dir`.
pub fn run_experiment(
    spec: &ExperimentSpec,
    model: &Arc<MarketModel>,
    settings: &MatrixSettings,
    dir: &Path,
) -> Result<Vec<MetricsReport>> {
    spec.validate()?;
    ensure_dir(dir)?;
    write_json(&dir.join("config.json"), &spec.config)?;
    let tconf = TrainConfig {
        seed: spec.seed,
        ..settings.train.clone()
    };
    let outcome = train(&spec.config, model.clone(), &tconf, settings.policy.clone())?;
    write_curve(&dir.join("curve.csv"), &outcome.curve)?;
    outcome.policy.save(dir.join("checkpoint_final.json"))?;
    outcome.best.save(dir.join("checkpoint_best.json"))?;
    log::info!(
        "{}: trained {} steps, {} violations",
        spec.name,
        outcome.env_steps,
        outcome.violations
    );

    let mut reports = vec![evaluate_env(
        spec,
        &outcome.best,
        Market::Sim(model),
        Environment::Sim,
        settings,
        dir,
    )?];
    if let Some(returns) = &settings.backtest {
        reports.push(evaluate_env(
            spec,
            &outcome.best,
            Market::Backtest(returns),
            Environment::Bt,
            settings,
            dir,
        )?);
    }
    write_json(&dir.join("metrics.json"), &reports)?;
    Ok(reports)
}

fn evaluate_env(
    spec: &ExperimentSpec,
    policy: &CaosdPolicy,
    market: Market<'_>,
    env: Environment,
    settings: &MatrixSettings,
    dir: &Path,
) -> Result<MetricsReport> {
    let eval = EvalSettings {
        env: settings.train.env,
        episodes: spec.eval_episodes,
        seed: derive_seed(spec.seed, 100),
        sampler: settings.sampler,
    };
    let mut results = vec![
        (
            CAOSD.to_string(),
            evaluate_approach(Approach::Caosd(policy), &spec.config, market, &eval)?,
        ),
        (
            RANDOM.to_string(),
            evaluate_approach(Approach::Random, &spec.config, market, &eval)?,
        ),
    ];
    for ext in &spec.externals {
        let path = match env {
            Environment::Sim => &ext.sim,
            Environment::Bt => &ext.bt,
        };
        if let Some(path) = path {
            results.push((
                ext.name.clone(),
                evaluate_approach(Approach::External(path), &spec.config, market, &eval)?,
            ));
        }
    }
    write_nu(&dir.join(format!("nu_{env}.csv")), &results)?;
    build_report(&spec.name, env, &results, settings.ci, eval.seed)
}

/// Runs every spec in its own subdirectory of `out_dir`, then writes the summary tables.
/// A failing experiment is logged to its `error.txt` and to `failures.json`; the rest continue.
pub fn run_experiment_matrix(
    specs: &[ExperimentSpec],
    model: &Arc<MarketModel>,
    settings: &MatrixSettings,
    out_dir: &Path,
) -> Result<MatrixOutcome> {
    ensure_dir(out_dir)?;
    let mut names: Vec<&str> = specs.iter().map(|s| s.name.as_str()).collect();
    names.sort_unstable();
    if names.windows(2).any(|w| w[0] == w[1]) {
        return Err(HarnessError::InvalidInput(
            "experiment names must be unique".into(),
        ));
    }
    write_json(&out_dir.join("specs.json"), specs)?;
    let mut reports = Vec::new();
    let mut failures = Vec::new();
    for spec in specs {
        let dir = out_dir.join(&spec.name);
        match run_experiment(spec, model, settings, &dir) {
            Ok(r) => reports.extend(r),
            Err(e) => {
                log::warn!("{} failed: {e}", spec.name);
                ensure_dir(&dir)?;
                write_text(&dir.join("error.txt"), &format!("{e}\n"))?;
                failures.push(Failure {
                    experiment: spec.name.clone(),
                    error: e.to_string(),
                });
            }
        }
    }
    write_json(&out_dir.join("failures.json"), &failures)?;
    let summary = write_summaries(out_dir, &reports)?;
    Ok(MatrixOutcome {
        reports,
        failures,
        summary,
    })
}

/// Writes `summary.json`, `summary_theta.csv` and `summary_delta.csv` for `reports`.
pub fn write_summaries(out_dir: &Path, reports: &[MetricsReport]) -> Result<Vec<AggregateRow>> {
    let summary = if reports.is_empty() {
        Vec::new()
    } else {
        aggregate(reports)?
    };
    write_json(&out_dir.join("summary.json"), &summary)?;
    write_summary(&out_dir.join("summary_theta.csv"), &summary, false)?;
    write_summary(&out_dir.join("summary_delta.csv"), &summary, true)?;
    Ok(summary)
}

/// Collects every `*/metrics.json` under `dir`, in directory-name order.
pub fn load_reports(dir: &Path) -> Result<Vec<MetricsReport>> {
    let mut subdirs: Vec<PathBuf> = std::fs::read_dir(dir)
        .map_err(|e| HarnessError::io(dir, e))?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.join("metrics.json").is_file())
        .collect();
    subdirs.sort();
    let mut reports = Vec::new();
    for d in subdirs {
        let r: Vec<MetricsReport> = read_json(&d.join("metrics.json"))?;
        reports.extend(r);
    }
    Ok(reports)
}

/// Recomputes the summary tables of a matrix directory from its metric files.
pub fn summarize_dir(dir: &Path) -> Result<Vec<AggregateRow>> {
    let reports = load_reports(dir)?;
    if reports.is_empty() {
        return Err(HarnessError::MissingInput(format!(
            "no metrics.json under {}",
            dir.display()
        )));
    }
    write_summaries(dir, &reports)
}
