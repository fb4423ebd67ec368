//! Lower-bound sweeps over dataset size: for each (n, trial) a fresh dataset
//! is drawn from the behavior policy, every configured estimator is
//! bootstrapped on it, and the resulting bounds are classified against a
//! Monte Carlo ground truth. Aggregates go to CSV.

use std::path::Path;

use rayon::prelude::*;
use serde::Serialize;

use crate::bootstrap::{lower_bound, BootstrapConfig, BootstrapMethod};
use crate::env::{
    monte_carlo_ground_truth, sample_dataset, CliffWorldConfig, CliffWorldEnv, Environment,
    MountainCarEnv, TabularEnv,
};
use crate::error::{HcopeError, Result};
use crate::estimator::{prepare, EstimatorConfig, EstimatorKind, ModelClass};
use crate::policy::{Policy, TabularPolicy};
use crate::seed::{self, tag};
use crate::tabular::micro;

#[derive(Debug, Clone)]
pub struct SweepConfig {
    pub env_id: String,
    pub pi_e_id: String,
    pub pi_b_id: String,
    pub estimators: Vec<EstimatorKind>,
    /// Dataset sizes, strictly increasing (log-spaced by convention).
    pub n_values: Vec<usize>,
    /// Trials per dataset size.
    pub trials: usize,
    pub bootstrap: BootstrapConfig,
    pub estimator: EstimatorConfig,
    pub ground_truth_rollouts: usize,
    pub master_seed: u64,
}

impl Default for SweepConfig {
    fn default() -> Self {
        SweepConfig {
            env_id: "mountain-car".into(),
            pi_e_id: "pump".into(),
            pi_b_id: "pump-noisy".into(),
            estimators: vec![EstimatorKind::Is, EstimatorKind::Pdwis],
            n_values: vec![2, 5, 10, 20, 50, 100, 200, 500],
            trials: 100,
            bootstrap: BootstrapConfig::default(),
            estimator: EstimatorConfig::default(),
            ground_truth_rollouts: 100_000,
            master_seed: 0,
        }
    }
}

impl SweepConfig {
    pub fn validate(&self) -> Result<()> {
        if self.estimators.is_empty() {
            return Err(HcopeError::Config("no estimators configured".into()));
        }
        if !self.n_values.windows(2).all(|w| w[0] < w[1]) || self.n_values.is_empty() {
            return Err(HcopeError::Config(
                "n_values must be non-empty and strictly increasing".into(),
            ));
        }
        if self.n_values[0] < 2 {
            return Err(HcopeError::Config(
                "n_values must start at 2 or more (bootstrap needs 2 trajectories)".into(),
            ));
        }
        if self.trials == 0 {
            return Err(HcopeError::Config("trials must be >= 1".into()));
        }
        Ok(())
    }
}

/// Parse a flat `key = value` config file ('#' starts a comment). Unset keys
/// keep their defaults.
pub fn parse_sweep_config(text: &str) -> Result<SweepConfig> {
    let mut cfg = SweepConfig::default();
    for (lineno, raw) in text.lines().enumerate() {
        let line = raw.split('#').next().unwrap_or("").trim();
        if line.is_empty() {
            continue;
        }
        let err = |message: String| HcopeError::Parse {
            line: lineno + 1,
            message,
        };
        let (key, value) = line
            .split_once('=')
            .ok_or_else(|| err(format!("expected key = value, got '{line}'")))?;
        let (key, value) = (key.trim(), value.trim());
        match key {
            "env" => cfg.env_id = value.into(),
            "pi_e" => cfg.pi_e_id = value.into(),
            "pi_b" => cfg.pi_b_id = value.into(),
            "estimators" => {
                cfg.estimators = value
                    .split(',')
                    .map(|s| s.trim().parse())
                    .collect::<Result<_>>()
                    .map_err(|e| err(e.to_string()))?;
            }
            "n_values" => {
                cfg.n_values = value
                    .split(',')
                    .map(|s| s.trim().parse::<usize>())
                    .collect::<std::result::Result<_, _>>()
                    .map_err(|e| err(format!("bad n value: {e}")))?;
            }
            "trials" => cfg.trials = parse_num(value).map_err(err)?,
            "bootstrap_b" => cfg.bootstrap.b = parse_num(value).map_err(err)?,
            "delta" => cfg.bootstrap.delta = parse_num(value).map_err(err)?,
            "method" => {
                cfg.bootstrap.method = match value {
                    "percentile" => BootstrapMethod::Percentile,
                    "bca" => BootstrapMethod::Bca,
                    other => return Err(err(format!("unknown bootstrap method '{other}'"))),
                }
            }
            "seed" => cfg.master_seed = parse_num(value).map_err(err)?,
            "ground_truth_rollouts" => cfg.ground_truth_rollouts = parse_num(value).map_err(err)?,
            "mb_rollouts" => cfg.estimator.mb_rollouts = parse_num(value).map_err(err)?,
            "vf_rollouts" => cfg.estimator.vf_rollouts = parse_num(value).map_err(err)?,
            other => return Err(err(format!("unknown key '{other}'"))),
        }
    }
    // Re-validate the bootstrap block since b and delta may both have moved.
    cfg.bootstrap = BootstrapConfig::new(
        cfg.bootstrap.b,
        cfg.bootstrap.delta,
        cfg.bootstrap.method,
        cfg.master_seed,
    )?;
    cfg.validate()?;
    Ok(cfg)
}

fn parse_num<T: std::str::FromStr>(value: &str) -> std::result::Result<T, String>
where
    T::Err: std::fmt::Display,
{
    value.parse().map_err(|e| format!("bad value '{value}': {e}"))
}

/// Instantiate a benchmark environment by id. The versioned ids that
/// environments stamp into datasets are accepted as aliases.
pub fn make_env(env_id: &str) -> Result<Box<dyn Environment>> {
    match env_id {
        "mountain-car" | crate::env::MOUNTAIN_CAR_ID => Ok(Box::new(MountainCarEnv::new(32, 32))),
        "cliff-world" | crate::env::CLIFF_WORLD_ID => {
            Ok(Box::new(CliffWorldEnv::new(CliffWorldConfig::default())))
        }
        "micro-chain2" => Ok(Box::new(TabularEnv::new(micro::chain2().mdp, "micro-chain2"))),
        "micro-loop3" => Ok(Box::new(TabularEnv::new(micro::loop3().mdp, "micro-loop3"))),
        "micro-web4" => Ok(Box::new(TabularEnv::new(micro::web4().mdp, "micro-web4"))),
        other => Err(HcopeError::Config(format!("unknown environment '{other}'"))),
    }
}

/// Instantiate a named policy for a benchmark environment.
pub fn make_policy(env_id: &str, policy_id: &str) -> Result<Policy> {
    let unknown = || {
        HcopeError::Config(format!(
            "unknown policy '{policy_id}' for environment '{env_id}'"
        ))
    };
    match env_id {
        "mountain-car" | crate::env::MOUNTAIN_CAR_ID => {
            let env = MountainCarEnv::new(32, 32);
            match policy_id {
                "uniform" => Ok(Policy::Tabular(env.uniform_policy())),
                "pump" => Ok(Policy::Tabular(env.energy_pump_policy(0.1))),
                "pump-mild" => Ok(Policy::Tabular(env.energy_pump_policy(0.2))),
                "pump-noisy" => Ok(Policy::Tabular(env.energy_pump_policy(0.3))),
                _ => Err(unknown()),
            }
        }
        "cliff-world" | crate::env::CLIFF_WORLD_ID => {
            let env = CliffWorldEnv::new(CliffWorldConfig::default());
            match policy_id {
                "eval" => Ok(env.eval_policy()),
                "behavior" => Ok(env.behavior_policy()),
                _ => Err(unknown()),
            }
        }
        id if id.starts_with("micro-") => {
            let case = match id {
                "micro-chain2" => micro::chain2(),
                "micro-loop3" => micro::loop3(),
                "micro-web4" => micro::web4(),
                _ => return Err(HcopeError::Config(format!("unknown environment '{id}'"))),
            };
            match policy_id {
                "pi_e" => Ok(Policy::Tabular(case.pi_e)),
                "pi_b" => Ok(Policy::Tabular(case.pi_b)),
                "uniform" => Ok(Policy::Tabular(TabularPolicy::uniform(
                    case.mdp.n_states,
                    case.mdp.n_actions,
                ))),
                _ => Err(unknown()),
            }
        }
        other => Err(HcopeError::Config(format!("unknown environment '{other}'"))),
    }
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepRow {
    pub estimator: String,
    pub n: usize,
    pub valid: usize,
    pub invalid: usize,
    pub failed: usize,
    /// invalid / (valid + invalid); NaN when every trial failed.
    pub error_rate: f64,
    /// Mean over valid lower bounds only; NaN when there are none.
    pub mean_valid_bound: f64,
    pub ci_low: f64,
    pub ci_high: f64,
}

#[derive(Debug, Clone, Serialize)]
pub struct SweepResult {
    pub ground_truth: f64,
    pub ground_truth_stderr: f64,
    pub rows: Vec<SweepRow>,
}

fn kind_applicable(kind: EstimatorKind, discrete: bool) -> Result<()> {
    let model = match kind {
        EstimatorKind::Is | EstimatorKind::Pdis | EstimatorKind::Wis | EstimatorKind::Pdwis => {
            return Ok(())
        }
        EstimatorKind::Mb(m) | EstimatorKind::Dr(m) | EstimatorKind::Wdr(m) => m,
    };
    match (model, discrete) {
        (ModelClass::Tabular, false) => Err(HcopeError::Config(format!(
            "estimator '{kind}' needs a discrete state space"
        ))),
        (ModelClass::LinearRegression | ModelClass::PolynomialRegression, true) => Err(
            HcopeError::Config(format!("estimator '{kind}' needs a continuous state space")),
        ),
        _ => Ok(()),
    }
}

pub fn run_sweep(cfg: &SweepConfig) -> Result<SweepResult> {
    let env = make_env(&cfg.env_id)?;
    let pi_e = make_policy(&cfg.env_id, &cfg.pi_e_id)?;
    let pi_b = make_policy(&cfg.env_id, &cfg.pi_b_id)?;
    run_sweep_on(env.as_ref(), &pi_e, &pi_b, cfg)
}

/// Sweep against an explicitly constructed environment and policy pair.
pub fn run_sweep_on(
    env: &dyn Environment,
    pi_e: &Policy,
    pi_b: &Policy,
    cfg: &SweepConfig,
) -> Result<SweepResult> {
    cfg.validate()?;
    let discrete = env.state_count().is_some();
    for &kind in &cfg.estimators {
        kind_applicable(kind, discrete)?;
    }

    let (truth, stderr) = monte_carlo_ground_truth(
        env,
        pi_e,
        cfg.ground_truth_rollouts,
        cfg.master_seed,
    )?;
    if stderr >= 0.01 * truth.abs() {
        return Err(HcopeError::Numeric(format!(
            "ground-truth stderr {stderr:.4} is not below 1% of |V| = {:.4}; \
             increase ground_truth_rollouts",
            truth.abs()
        )));
    }

    let mut rows = Vec::new();
    for &n in &cfg.n_values {
        // One shared dataset per trial, reused by every estimator.
        let trial_outcomes: Vec<Vec<Result<f64>>> = (0..cfg.trials)
            .into_par_iter()
            .map(|j| {
                let data_seed =
                    seed::derive(cfg.master_seed, &[tag::SWEEP_DATASET, n as u64, j as u64]);
                let boot_seed =
                    seed::derive(cfg.master_seed, &[tag::SWEEP_BOOTSTRAP, n as u64, j as u64]);
                let ds = match sample_dataset(env, pi_b, &cfg.pi_b_id, n, data_seed) {
                    Ok(ds) => ds,
                    Err(e) => {
                        let msg = e.to_string();
                        return cfg
                            .estimators
                            .iter()
                            .map(|_| Err(HcopeError::Numeric(msg.clone())))
                            .collect();
                    }
                };
                let mut boot = cfg.bootstrap;
                boot.seed = boot_seed;
                cfg.estimators
                    .iter()
                    .map(|&kind| {
                        let prep = prepare(kind, &ds, pi_e, pi_b, env, &cfg.estimator)?;
                        Ok(lower_bound(prep.as_ref(), &boot)?.lower_bound)
                    })
                    .collect()
            })
            .collect();
        for (e_idx, &kind) in cfg.estimators.iter().enumerate() {
            let mut valid_bounds = Vec::new();
            let (mut invalid, mut failed) = (0usize, 0usize);
            for trial in &trial_outcomes {
                match &trial[e_idx] {
                    Ok(b) if *b <= truth => valid_bounds.push(*b),
                    Ok(_) => invalid += 1,
                    Err(_) => failed += 1,
                }
            }
            let valid = valid_bounds.len();
            let decided = valid + invalid;
            let error_rate = if decided > 0 {
                invalid as f64 / decided as f64
            } else {
                f64::NAN
            };
            let (mean, ci_low, ci_high) = if valid > 0 {
                let mean = valid_bounds.iter().sum::<f64>() / valid as f64;
                let half = if valid > 1 {
                    let var = valid_bounds
                        .iter()
                        .map(|b| (b - mean).powi(2))
                        .sum::<f64>()
                        / (valid - 1) as f64;
                    1.96 * (var / valid as f64).sqrt()
                } else {
                    0.0
                };
                (mean, mean - half, mean + half)
            } else {
                (f64::NAN, f64::NAN, f64::NAN)
            };
            rows.push(SweepRow {
                estimator: kind.to_string(),
                n,
                valid,
                invalid,
                failed,
                error_rate,
                mean_valid_bound: mean,
                ci_low,
                ci_high,
            });
        }
    }
    Ok(SweepResult {
        ground_truth: truth,
        ground_truth_stderr: stderr,
        rows,
    })
}

pub const CSV_HEADER: &str = "estimator,n,valid,invalid,failed,error_rate,\
mean_valid_bound,ci_low,ci_high,ground_truth,ground_truth_stderr";

/// Render a sweep result as CSV; numbers use the shortest representation
/// that round-trips exactly.
pub fn csv_string(res: &SweepResult) -> String {
    let mut out = String::from(CSV_HEADER);
    out.push('\n');
    for row in &res.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{},{},{},{}\n",
            row.estimator,
            row.n,
            row.valid,
            row.invalid,
            row.failed,
            row.error_rate,
            row.mean_valid_bound,
            row.ci_low,
            row.ci_high,
            res.ground_truth,
            res.ground_truth_stderr,
        ));
    }
    out
}

pub fn emit_csv(res: &SweepResult, path: &Path) -> Result<()> {
    std::fs::write(path, csv_string(res))?;
    Ok(())
}
