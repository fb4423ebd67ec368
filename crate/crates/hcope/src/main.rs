use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use hcope::bias::{corollary2_bound, surrogate_report, ModelRef, SurrogateKind};
use hcope::bootstrap::{lower_bound, BootstrapConfig, BootstrapMethod};
use hcope::env::{monte_carlo_ground_truth, sample_dataset};
use hcope::estimator::{prepare, EstimatorConfig, EstimatorKind, ModelClass};
use hcope::experiment::{emit_csv, make_env, make_policy, parse_sweep_config, run_sweep};
use hcope::mdp::{load_dataset, save_dataset};
use hcope::model::{learn_regression, learn_tabular};
use hcope::{HcopeError, Result};

/// High-confidence off-policy evaluation: bootstrap lower bounds on policy
/// value from logged trajectories.
#[derive(Parser)]
#[command(name = "hcope", version)]
struct Cli {
    /// Worker threads (default: all cores).
    #[arg(long, global = true)]
    workers: Option<usize>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Sample a dataset from a behavior policy and write it to disk.
    Generate {
        /// Environment id (mountain-car, cliff-world, micro-*).
        #[arg(long)]
        env: String,
        /// Behavior policy id within the environment.
        #[arg(long)]
        policy: String,
        /// Number of trajectories.
        #[arg(short, long)]
        n: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Output dataset path (JSON).
        #[arg(long)]
        out: PathBuf,
    },
    /// Bootstrap a confidence lower bound on V(pi_e) from a dataset.
    Evaluate {
        #[arg(long)]
        dataset: PathBuf,
        /// Evaluation policy id.
        #[arg(long)]
        pi_e: String,
        /// Behavior policy id; defaults to the one recorded in the dataset.
        #[arg(long)]
        pi_b: Option<String>,
        /// is | pdis | wis | pdwis | mb-* | dr-* | wdr-* with * in
        /// {tabular, lr, pr}.
        #[arg(long)]
        estimator: String,
        #[arg(long, default_value_t = 0.05)]
        delta: f64,
        #[arg(long, default_value_t = 2000)]
        bootstrap_b: usize,
        /// percentile | bca
        #[arg(long, default_value = "percentile")]
        method: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Write the report here instead of stdout.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a lower-bound sweep over dataset sizes and emit CSV.
    Sweep {
        /// Flat key = value config file.
        #[arg(long)]
        config: PathBuf,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo estimate of V(policy) with its standard error.
    GroundTruth {
        #[arg(long)]
        env: String,
        #[arg(long)]
        policy: String,
        #[arg(long, default_value_t = 100_000)]
        rollouts: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
    },
    /// Fit a model to a dataset and report a model-bias upper bound.
    BiasBound {
        #[arg(long)]
        dataset: PathBuf,
        #[arg(long)]
        pi_e: String,
        #[arg(long)]
        pi_b: Option<String>,
        /// tabular | lr | pr
        #[arg(long)]
        model: String,
        /// cross-entropy | nll | corollary2
        #[arg(long, default_value = "cross-entropy")]
        variant: String,
        /// Confidence level for the corollary2 variant.
        #[arg(long, default_value_t = 0.95)]
        alpha: f64,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn to_json<T: serde::Serialize>(value: &T) -> Result<String> {
    serde_json::to_string_pretty(value).map_err(|e| HcopeError::Numeric(e.to_string()))
}

fn emit(json: String, out: Option<&PathBuf>) -> Result<()> {
    match out {
        Some(path) => std::fs::write(path, json + "\n")?,
        None => println!("{json}"),
    }
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Generate {
            env,
            policy,
            n,
            seed,
            out,
        } => {
            let e = make_env(&env)?;
            let pi = make_policy(&env, &policy)?;
            let ds = sample_dataset(e.as_ref(), &pi, &policy, n, seed)?;
            save_dataset(&ds, &out)?;
            eprintln!("wrote {n} trajectories to {}", out.display());
            Ok(())
        }
        Command::Evaluate {
            dataset,
            pi_e,
            pi_b,
            estimator,
            delta,
            bootstrap_b,
            method,
            seed,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let env = make_env(&ds.env_id)?;
            let kind: EstimatorKind = estimator.parse()?;
            let pi_b_id = pi_b.as_deref().unwrap_or(&ds.behavior_policy_id);
            let pi_e = make_policy(&ds.env_id, &pi_e)?;
            let pi_b = make_policy(&ds.env_id, pi_b_id)?;
            let method = match method.as_str() {
                "percentile" => BootstrapMethod::Percentile,
                "bca" => BootstrapMethod::Bca,
                other => {
                    return Err(HcopeError::Config(format!(
                        "unknown bootstrap method '{other}'"
                    )))
                }
            };
            let cfg = BootstrapConfig::new(bootstrap_b, delta, method, seed)?;
            let est_cfg = EstimatorConfig {
                master_seed: seed,
                ..EstimatorConfig::default()
            };
            let prep = prepare(kind, &ds, &pi_e, &pi_b, env.as_ref(), &est_cfg)?;
            let report = lower_bound(prep.as_ref(), &cfg)?;
            emit(to_json(&report)?, out.as_ref())
        }
        Command::Sweep { config, out } => {
            let text = std::fs::read_to_string(&config)?;
            let cfg = parse_sweep_config(&text)?;
            let result = run_sweep(&cfg)?;
            emit_csv(&result, &out)?;
            eprintln!(
                "ground truth {} (stderr {}); wrote {} rows to {}",
                result.ground_truth,
                result.ground_truth_stderr,
                result.rows.len(),
                out.display()
            );
            Ok(())
        }
        Command::GroundTruth {
            env,
            policy,
            rollouts,
            seed,
        } => {
            let e = make_env(&env)?;
            let pi = make_policy(&env, &policy)?;
            let (value, stderr) = monte_carlo_ground_truth(e.as_ref(), &pi, rollouts, seed)?;
            println!("{value} +/- {stderr}");
            Ok(())
        }
        Command::BiasBound {
            dataset,
            pi_e,
            pi_b,
            model,
            variant,
            alpha,
            out,
        } => {
            let ds = load_dataset(&dataset)?;
            let env = make_env(&ds.env_id)?;
            let spec = env.spec();
            let pi_b_id = pi_b.as_deref().unwrap_or(&ds.behavior_policy_id);
            let pi_e = make_policy(&ds.env_id, &pi_e)?;
            let pi_b = make_policy(&ds.env_id, pi_b_id)?;
            let tabular;
            let gaussian;
            let model_ref = match model.as_str() {
                "tabular" => {
                    let (ns, na) = match (env.state_count(), env.action_count()) {
                        (Some(ns), Some(na)) => (ns, na),
                        _ => {
                            return Err(HcopeError::Config(
                                "tabular model needs a discrete environment".into(),
                            ))
                        }
                    };
                    tabular = learn_tabular(&ds, ns, na)?;
                    ModelRef::Tabular(&tabular)
                }
                "lr" => {
                    gaussian = learn_regression(&ds, ModelClass::LinearRegression.feature_map().expect("regression class"))?;
                    ModelRef::Gaussian(&gaussian)
                }
                "pr" => {
                    gaussian =
                        learn_regression(&ds, ModelClass::PolynomialRegression.feature_map().expect("regression class"))?;
                    ModelRef::Gaussian(&gaussian)
                }
                other => {
                    return Err(HcopeError::Config(format!("unknown model class '{other}'")))
                }
            };
            let report = match variant.as_str() {
                "cross-entropy" => surrogate_report(
                    &ds,
                    model_ref,
                    &pi_e,
                    &pi_b,
                    SurrogateKind::CrossEntropy,
                    &spec,
                )?,
                "nll" => {
                    surrogate_report(&ds, model_ref, &pi_e, &pi_b, SurrogateKind::Nll, &spec)?
                }
                "corollary2" => corollary2_bound(&ds, model_ref, alpha, &spec)?,
                other => {
                    return Err(HcopeError::Config(format!("unknown variant '{other}'")))
                }
            };
            emit(to_json(&report)?, out.as_ref())
        }
    }
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    if let Some(workers) = cli.workers {
        if let Err(e) = rayon::ThreadPoolBuilder::new()
            .num_threads(workers)
            .build_global()
        {
            eprintln!("error: failed to size worker pool: {e}");
            return ExitCode::from(2);
        }
    }
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
