use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::Arc;

use anyhow::{bail, Context, Result};
use caosd_agent::{AgentError, CaosdPolicy, Greedy, PolicyConfig, TrainConfig};
use caosd_core::{
    build_decomposition, init_sampler_with, Allocation, AssetUniverse, CoreError, SamplerOptions,
};
use caosd_harness::io::{
    read_config, read_json, write_allocations, write_curve, write_json, write_nu,
};
use caosd_harness::{
    build_report, evaluate_approach, generate_configs, generate_specs, run_experiment_matrix,
    summarize_dir, synthetic, Approach, CiMethod, Environment, EvalSettings, HarnessError, Market,
    MatrixSettings, CAOSD, RANDOM,
};
use caosd_market::{
    fit_hmm, ingest_prices_path, run_backtest, to_returns, CovarianceKind, EnvConfig, FitOptions,
    MarketError, MarketModel, ReturnMatrix,
};
use clap::{ArgAction, Parser, Subcommand, ValueEnum};
use serde::Serialize;

#[derive(Parser)]
#[command(
    name = "caosd",
    version,
    about = "Constrained portfolio allocation with decomposed action spaces"
)]
struct Cli {
    /// Seed for every random choice of the subcommand.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Directory for outputs; relative `--out` paths resolve against it.
    #[arg(long, global = true, default_value = ".")]
    out_dir: PathBuf,

    /// Reject (true) or repair and count (false) actions outside the constraints.
    #[arg(long, global = true, action = ArgAction::Set, num_args = 0..=1, default_missing_value = "true")]
    strict_membership: Option<bool>,

    #[arg(short, long, global = true, action = ArgAction::Count)]
    verbose: u8,

    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum EvalApproach {
    Caosd,
    Random,
}

#[derive(Subcommand)]
enum Command {
    /// Generate random feasible constraint configs.
    GenConfig {
        /// Universe size, cash included.
        #[arg(long, required_unless_present = "prices")]
        n_assets: Option<usize>,
        /// Take asset labels from the header of a price CSV (cash is prepended).
        #[arg(long)]
        prices: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        count: usize,
        #[arg(long, default_value = "config.json")]
        out: PathBuf,
    },
    /// Fit a Gaussian HMM to monthly prices.
    FitHmm {
        #[arg(long)]
        prices: PathBuf,
        #[arg(long, default_value_t = 4)]
        states: usize,
        #[arg(long, default_value_t = 5)]
        restarts: usize,
        #[arg(long)]
        full_covariance: bool,
        #[arg(long, default_value = "model.json")]
        out: PathBuf,
    },
    /// Train a policy; writes curve.csv, checkpoint_final.json and checkpoint_best.json.
    Train {
        #[arg(long)]
        config: PathBuf,
        /// Market model JSON; the synthetic two-state model when omitted.
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        policy_config: Option<PathBuf>,
        #[arg(long)]
        total_steps: Option<usize>,
    },
    /// Evaluate a checkpoint or the random baseline on simulated episodes.
    Evaluate {
        #[arg(long, value_enum, default_value = "caosd")]
        approach: EvalApproach,
        #[arg(long, required_if_eq("approach", "caosd"))]
        policy: Option<PathBuf>,
        /// Required for the random baseline; defaults to the checkpoint's config.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        model: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long)]
        bootstrap: bool,
    },
    /// Replay a price history under a checkpoint and the random baseline.
    Backtest {
        #[arg(long)]
        model_free_prices: PathBuf,
        #[arg(long)]
        policy: Option<PathBuf>,
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        random_episodes: usize,
        #[arg(long, default_value_t = 12)]
        horizon: usize,
    },
    /// Draw uniform allocations from a config's action space.
    SamplePolytope {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, default_value_t = 1000)]
        count: usize,
        #[arg(long, default_value_t = 1000)]
        burn_in: usize,
        #[arg(long, default_value_t = 10)]
        thinning: usize,
        #[arg(long, default_value = "samples.csv")]
        out: PathBuf,
    },
    /// Print the weights and a sub-action preimage of an allocation.
    Decompose {
        #[arg(long)]
        config: PathBuf,
        /// Comma-separated allocation.
        #[arg(long, value_delimiter = ',', required = true)]
        point: Vec<f64>,
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Recompute summary tables from the metrics files of a matrix directory.
    Summarize {
        #[arg(long)]
        dir: Option<PathBuf>,
    },
    /// Generate configs, then train and evaluate one experiment per config.
    RunMatrix {
        #[arg(long, default_value_t = 5)]
        n_configs: usize,
        #[arg(long, default_value_t = 6)]
        n_assets: usize,
        #[arg(long)]
        model: Option<PathBuf>,
        /// Prices for the backtest environment.
        #[arg(long)]
        backtest_prices: Option<PathBuf>,
        #[arg(long)]
        train_config: Option<PathBuf>,
        #[arg(long)]
        policy_config: Option<PathBuf>,
        #[arg(long, default_value_t = 1000)]
        episodes: usize,
        #[arg(long)]
        bootstrap: bool,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .parse_default_env()
        .init();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e))
        }
    }
}

/// 2 invalid input, 3 infeasible config, 4 numerical failure.
fn exit_code(e: &anyhow::Error) -> u8 {
    for cause in e.chain() {
        let core = cause
            .downcast_ref::<CoreError>()
            .or_else(|| match cause.downcast_ref::<MarketError>() {
                Some(MarketError::Core(c)) => Some(c),
                _ => None,
            })
            .or_else(|| match cause.downcast_ref::<AgentError>() {
                Some(AgentError::Core(c)) | Some(AgentError::Market(MarketError::Core(c))) => {
                    Some(c)
                }
                _ => None,
            })
            .or_else(|| match cause.downcast_ref::<HarnessError>() {
                Some(HarnessError::Core(c))
                | Some(HarnessError::Market(MarketError::Core(c)))
                | Some(HarnessError::Agent(AgentError::Core(c))) => Some(c),
                _ => None,
            });
        if let Some(c) = core {
            return match c {
                CoreError::InfeasibleConfiguration
                | CoreError::NoFeasibleConfiguration { .. }
                | CoreError::DegeneratePolytope { .. } => 3,
                CoreError::Solver(_) => 4,
                _ => 2,
            };
        }
        let market = cause
            .downcast_ref::<MarketError>()
            .or_else(|| match cause.downcast_ref::<AgentError>() {
                Some(AgentError::Market(m)) => Some(m),
                _ => None,
            })
            .or_else(|| match cause.downcast_ref::<HarnessError>() {
                Some(HarnessError::Market(m))
                | Some(HarnessError::Agent(AgentError::Market(m))) => Some(m),
                _ => None,
            });
        if let Some(MarketError::SingularCovariance { .. }) = market {
            return 4;
        }
        let agent = cause.downcast_ref::<AgentError>().or_else(|| {
            match cause.downcast_ref::<HarnessError>() {
                Some(HarnessError::Agent(a)) => Some(a),
                _ => None,
            }
        });
        if let Some(AgentError::NonFiniteLoss { .. } | AgentError::NonFiniteInput(_)) = agent {
            return 4;
        }
    }
    2
}

fn resolve(out_dir: &Path, p: &Path) -> PathBuf {
    if p.is_absolute() {
        p.to_path_buf()
    } else {
        out_dir.join(p)
    }
}

fn prepare(out_dir: &Path) -> Result<()> {
    std::fs::create_dir_all(out_dir).with_context(|| format!("creating {}", out_dir.display()))
}

fn env_config(base: EnvConfig, strict: Option<bool>) -> EnvConfig {
    EnvConfig {
        strict_membership: strict.unwrap_or(base.strict_membership),
        ..base
    }
}

fn load_model(path: Option<&Path>, n_assets: usize) -> Result<Arc<MarketModel>> {
    let model = match path {
        Some(p) => {
            read_json::<MarketModel>(p).with_context(|| format!("reading model {}", p.display()))?
        }
        None => synthetic::two_state_model(n_assets)?,
    };
    if model.n_assets() != n_assets {
        bail!(HarnessError::InvalidInput(format!(
            "model has {} assets, config has {n_assets}",
            model.n_assets()
        )));
    }
    Ok(Arc::new(model))
}

fn load_returns(prices: &Path, universe: &AssetUniverse) -> Result<ReturnMatrix> {
    let table = ingest_prices_path(prices)
        .with_context(|| format!("reading prices {}", prices.display()))?;
    let mut returns = to_returns(&table)?;
    if universe.has_cash()
        && returns.labels().first().map(String::as_str) != Some(caosd_core::constraints::CASH_LABEL)
    {
        returns = returns.with_cash();
    }
    if returns.n_assets() != universe.n_assets() {
        bail!(HarnessError::InvalidInput(format!(
            "prices give {} assets, config has {}",
            returns.n_assets(),
            universe.n_assets()
        )));
    }
    if returns.labels() != universe.labels() {
        log::warn!("price labels differ from config labels; matching by position");
    }
    Ok(returns)
}

#[derive(Serialize)]
struct TrainSummary {
    env_steps: usize,
    violations: usize,
    updates: usize,
    best_mean_nu: Option<f64>,
}

#[derive(Serialize)]
struct DecomposeOutput {
    point: Vec<f64>,
    weights: [f64; 4],
    sub_actions: Vec<Vec<f64>>,
    composed: Vec<f64>,
    roundtrip_error: f64,
}

#[derive(Serialize)]
struct BacktestOutput {
    policy_nu: Option<f64>,
    policy_allocations: Vec<Vec<f64>>,
    policy_rewards: Vec<f64>,
    report: caosd_harness::MetricsReport,
}

fn run(cli: Cli) -> Result<()> {
    let out_dir = cli.out_dir.clone();
    let seed = cli.seed.unwrap_or(0);
    match cli.command {
        Command::GenConfig {
            n_assets,
            prices,
            count,
            out,
        } => {
            let universe = match (&prices, n_assets) {
                (Some(p), _) => {
                    let table = ingest_prices_path(p)?;
                    let labels = std::iter::once(caosd_core::constraints::CASH_LABEL.to_string())
                        .chain(table.labels().iter().cloned())
                        .collect();
                    AssetUniverse::new(labels)?
                }
                (None, Some(n)) => AssetUniverse::with_cash(n)?,
                (None, None) => bail!(HarnessError::InvalidInput(
                    "--n-assets or --prices is required".into()
                )),
            };
            if count == 0 {
                bail!(HarnessError::InvalidInput(
                    "--count must be positive".into()
                ));
            }
            let configs = generate_configs(&universe, count, seed)?;
            prepare(&out_dir)?;
            let path = resolve(&out_dir, &out);
            if count == 1 {
                write_json(&path, &configs[0])?;
            } else {
                write_json(&path, &configs)?;
            }
        }
        Command::FitHmm {
            prices,
            states,
            restarts,
            full_covariance,
            out,
        } => {
            let table = ingest_prices_path(&prices)
                .with_context(|| format!("reading prices {}", prices.display()))?;
            let returns = to_returns(&table)?;
            let options = FitOptions {
                n_states: states,
                seed,
                restarts,
                covariance: if full_covariance {
                    CovarianceKind::Full
                } else {
                    CovarianceKind::Diagonal
                },
                ..FitOptions::default()
            };
            let report = fit_hmm(&returns, &options)?;
            log::info!(
                "log-likelihood {:.4} after {} iterations",
                report
                    .log_likelihood_trace
                    .last()
                    .copied()
                    .unwrap_or(f64::NAN),
                report.iterations
            );
            prepare(&out_dir)?;
            write_json(&resolve(&out_dir, &out), &report.model)?;
        }
        Command::Train {
            config,
            model,
            train_config,
            policy_config,
            total_steps,
        } => {
            let cfg = read_config(&config)?;
            let model = load_model(model.as_deref(), cfg.n_assets())?;
            let mut tconf: TrainConfig = match &train_config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            if let Some(s) = cli.seed {
                tconf.seed = s;
            }
            if let Some(t) = total_steps {
                tconf.total_env_steps = t;
            }
            tconf.env = env_config(tconf.env, cli.strict_membership);
            let pconf: PolicyConfig = match &policy_config {
                Some(p) => read_json(p)?,
                None => PolicyConfig::default(),
            };
            let outcome = caosd_agent::train(&cfg, model, &tconf, pconf)?;
            prepare(&out_dir)?;
            write_curve(&out_dir.join("curve.csv"), &outcome.curve)?;
            outcome.policy.save(out_dir.join("checkpoint_final.json"))?;
            outcome.best.save(out_dir.join("checkpoint_best.json"))?;
            let best_mean_nu = outcome
                .curve
                .iter()
                .map(|r| r.mean_nu)
                .fold(None, |m: Option<f64>, v| Some(m.map_or(v, |m| m.max(v))));
            write_json(
                &out_dir.join("train_summary.json"),
                &TrainSummary {
                    env_steps: outcome.env_steps,
                    violations: outcome.violations,
                    updates: outcome.updates.len(),
                    best_mean_nu,
                },
            )?;
        }
        Command::Evaluate {
            approach,
            policy,
            config,
            model,
            episodes,
            bootstrap,
        } => {
            let policy = policy.map(CaosdPolicy::load).transpose()?;
            let cfg = match (&config, &policy) {
                (Some(c), _) => read_config(c)?,
                (None, Some(p)) => p.constraints().clone(),
                (None, None) => bail!(HarnessError::InvalidInput(
                    "--config is required for the random baseline".into()
                )),
            };
            let model = load_model(model.as_deref(), cfg.n_assets())?;
            let settings = EvalSettings {
                env: env_config(EnvConfig::default(), cli.strict_membership),
                episodes,
                seed,
                sampler: SamplerOptions::default(),
            };
            let (name, a) = match (approach, &policy) {
                (EvalApproach::Caosd, Some(p)) => (CAOSD, Approach::Caosd(p)),
                (EvalApproach::Caosd, None) => bail!(HarnessError::MissingInput("--policy".into())),
                (EvalApproach::Random, _) => (RANDOM, Approach::Random),
            };
            let nus = evaluate_approach(a, &cfg, Market::Sim(&model), &settings)?;
            let results = vec![(name.to_string(), nus)];
            let method = if bootstrap {
                CiMethod::Bootstrap
            } else {
                CiMethod::Normal
            };
            let report = build_report("evaluate", Environment::Sim, &results, method, seed)?;
            prepare(&out_dir)?;
            write_nu(&out_dir.join("nu_sim.csv"), &results)?;
            write_json(&out_dir.join("evaluation.json"), &report)?;
            println!(
                "{}",
                serde_json::to_string_pretty(&report.approaches[0].nu)?
            );
        }
        Command::Backtest {
            model_free_prices,
            policy,
            config,
            random_episodes,
            horizon,
        } => {
            let cfg = read_config(&config)?;
            let returns = load_returns(&model_free_prices, cfg.universe())?;
            let env = EnvConfig {
                horizon,
                ..env_config(EnvConfig::default(), cli.strict_membership)
            };
            let settings = EvalSettings {
                env,
                episodes: random_episodes,
                seed,
                sampler: SamplerOptions::default(),
            };
            let policy = policy.map(CaosdPolicy::load).transpose()?;
            let mut results = Vec::new();
            let mut out = BacktestOutput {
                policy_nu: None,
                policy_allocations: Vec::new(),
                policy_rewards: Vec::new(),
                report: build_report("backtest", Environment::Bt, &[], CiMethod::Normal, seed)?,
            };
            if let Some(p) = &policy {
                if p.constraints() != &cfg {
                    bail!(HarnessError::InvalidInput(
                        "policy was trained for a different config".into()
                    ));
                }
                let record = run_backtest(&returns, &mut Greedy(p), &cfg, &env)?;
                out.policy_nu = Some(record.nu);
                out.policy_allocations =
                    record.steps.iter().map(|s| s.allocation.clone()).collect();
                out.policy_rewards = record.steps.iter().map(|s| s.reward).collect();
                results.push((CAOSD.to_string(), vec![record.nu]));
            }
            results.push((
                RANDOM.to_string(),
                evaluate_approach(
                    Approach::Random,
                    &cfg,
                    Market::Backtest(&returns),
                    &settings,
                )?,
            ));
            out.report = build_report(
                "backtest",
                Environment::Bt,
                &results,
                CiMethod::Normal,
                seed,
            )?;
            prepare(&out_dir)?;
            write_nu(&out_dir.join("nu_bt.csv"), &results)?;
            write_json(&out_dir.join("backtest.json"), &out)?;
        }
        Command::SamplePolytope {
            config,
            count,
            burn_in,
            thinning,
            out,
        } => {
            let cfg = read_config(&config)?;
            let mut sampler = init_sampler_with(&cfg, seed, SamplerOptions { burn_in, thinning })?;
            let samples = sampler.sample(count);
            prepare(&out_dir)?;
            write_allocations(&resolve(&out_dir, &out), &samples, cfg.universe().labels())?;
        }
        Command::Decompose { config, point, out } => {
            let cfg = read_config(&config)?;
            let decomposition = build_decomposition(&cfg)?;
            let a = Allocation::new(point.clone())?;
            let (subs, z) = decomposition.decompose(&a)?;
            let (composed, _) = decomposition.compose(&subs)?;
            let roundtrip_error = composed
                .values()
                .iter()
                .zip(a.values())
                .map(|(x, y)| (x - y).abs())
                .fold(0.0, f64::max);
            let doc = DecomposeOutput {
                point,
                weights: z.as_array(),
                sub_actions: subs.iter().map(|s| s.values().to_vec()).collect(),
                composed: composed.into_vec(),
                roundtrip_error,
            };
            println!("{}", serde_json::to_string_pretty(&doc)?);
            if let Some(out) = out {
                prepare(&out_dir)?;
                write_json(&resolve(&out_dir, &out), &doc)?;
            }
        }
        Command::Summarize { dir } => {
            let dir = dir.unwrap_or(out_dir);
            let rows = summarize_dir(&dir)?;
            for r in rows {
                let d = r.delta.map_or_else(String::new, |d| {
                    format!("  δ̄ {:.4} [{:.4}, {:.4}]", d.mean, d.ci_lo, d.ci_hi)
                });
                println!(
                    "{:<4} {:<10} θ̄ {:.4} [{:.4}, {:.4}]{d}",
                    r.env, r.approach, r.theta.mean, r.theta.ci_lo, r.theta.ci_hi
                );
            }
        }
        Command::RunMatrix {
            n_configs,
            n_assets,
            model,
            backtest_prices,
            train_config,
            policy_config,
            episodes,
            bootstrap,
        } => {
            let universe = AssetUniverse::with_cash(n_assets)?;
            let model = load_model(model.as_deref(), n_assets)?;
            let mut train: TrainConfig = match &train_config {
                Some(p) => read_json(p)?,
                None => TrainConfig::default(),
            };
            train.env = env_config(train.env, cli.strict_membership);
            let policy: PolicyConfig = match &policy_config {
                Some(p) => read_json(p)?,
                None => PolicyConfig::default(),
            };
            let backtest = backtest_prices
                .map(|p| load_returns(&p, &universe))
                .transpose()?;
            let specs = generate_specs(&universe, n_configs, seed, episodes)?;
            let settings = MatrixSettings {
                train,
                policy,
                ci: if bootstrap {
                    CiMethod::Bootstrap
                } else {
                    CiMethod::Normal
                },
                sampler: SamplerOptions::default(),
                backtest,
            };
            let outcome = run_experiment_matrix(&specs, &model, &settings, &out_dir)?;
            for f in &outcome.failures {
                eprintln!("{} failed: {}", f.experiment, f.error);
            }
            if outcome.reports.is_empty() && !outcome.failures.is_empty() {
                bail!("every experiment failed");
            }
        }
    }
    Ok(())
}
