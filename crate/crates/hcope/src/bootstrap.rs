//! Bootstrap confidence lower bounds over any prepared estimator.
//!
//! The percentile method resamples the dataset B times with replacement,
//! evaluates the estimator on each resample, sorts ascending and returns the
//! floor(delta * B)-th order statistic (1-based). BCa additionally corrects
//! the percentile for median bias and jackknife-estimated skew.
//!
//! Every resample draws its rng stream from (seed, resample index), so the
//! report is byte-identical regardless of how many worker threads run it.

use rand::Rng;
use rayon::prelude::*;
use serde::Serialize;
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{HcopeError, Result};
use crate::estimator::PreparedEstimator;
use crate::seed::{self, tag};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize)]
#[serde(rename_all = "lowercase")]
pub enum BootstrapMethod {
    Percentile,
    Bca,
}

#[derive(Debug, Clone, Copy)]
pub struct BootstrapConfig {
    pub b: usize,
    pub delta: f64,
    pub method: BootstrapMethod,
    pub seed: u64,
    /// Keep the sorted resample estimates in the report.
    pub keep_resamples: bool,
}

impl BootstrapConfig {
    pub fn new(b: usize, delta: f64, method: BootstrapMethod, seed: u64) -> Result<Self> {
        if !(0.0..1.0).contains(&delta) || delta <= 0.0 {
            return Err(HcopeError::Config(format!("delta {delta} outside (0,1)")));
        }
        if (delta * b as f64).floor() < 1.0 {
            return Err(HcopeError::Config(format!(
                "floor(delta*B) = floor({delta}*{b}) < 1; increase B or delta"
            )));
        }
        Ok(BootstrapConfig {
            b,
            delta,
            method,
            seed,
            keep_resamples: false,
        })
    }
}

impl Default for BootstrapConfig {
    fn default() -> Self {
        BootstrapConfig::new(2000, 0.05, BootstrapMethod::Percentile, 0).expect("valid defaults")
    }
}

/// The outcome of one bootstrap run.
#[derive(Debug, Clone, Serialize)]
pub struct BoundReport {
    pub estimator: String,
    pub point_estimate: f64,
    pub lower_bound: f64,
    pub delta: f64,
    pub b: usize,
    pub method: BootstrapMethod,
    /// Resamples on which the estimator failed (not silently dropped: more
    /// than 1% aborts the run).
    pub failures: usize,
    pub warnings: Vec<String>,
    pub weight_variance: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub resamples: Option<Vec<f64>>,
}

/// n uniform draws from 0..n with replacement.
pub fn resample_indices(n: usize, rng: &mut (impl Rng + ?Sized)) -> Vec<usize> {
    (0..n).map(|_| rng.random_range(0..n)).collect()
}

/// 1-based order statistic at floor(q * b), clamped into the valid range.
fn order_statistic(sorted: &[(f64, usize)], q: f64, b: usize) -> f64 {
    let l = ((q * b as f64).floor() as usize).clamp(1, sorted.len());
    sorted[l - 1].0
}

pub fn lower_bound(prep: &dyn PreparedEstimator, cfg: &BootstrapConfig) -> Result<BoundReport> {
    let n = prep.n();
    if n < 2 {
        return Err(HcopeError::Config(
            "bootstrap needs at least 2 trajectories".into(),
        ));
    }
    let full: Vec<usize> = (0..n).collect();
    let point = prep.estimate(&full, &[tag::POINT])?;
    let outcomes: Vec<(usize, Result<f64>)> = (0..cfg.b)
        .into_par_iter()
        .map(|j| {
            let mut rng = seed::rng(cfg.seed, &[tag::RESAMPLE, j as u64]);
            let idx = resample_indices(n, &mut rng);
            (j, prep.estimate(&idx, &[tag::RESAMPLE, j as u64]))
        })
        .collect();
    let mut values: Vec<(f64, usize)> = Vec::with_capacity(cfg.b);
    let mut failures = 0usize;
    let mut first_failure = None;
    for (j, res) in outcomes {
        match res {
            Ok(v) if v.is_finite() => values.push((v, j)),
            Ok(v) => {
                failures += 1;
                first_failure.get_or_insert(format!("non-finite estimate {v}"));
            }
            Err(e) => {
                failures += 1;
                first_failure.get_or_insert(e.to_string());
            }
        }
    }
    if failures * 100 > cfg.b {
        return Err(HcopeError::ResampleFailures {
            failed: failures,
            total: cfg.b,
            reason: first_failure.unwrap_or_default(),
        });
    }
    values.sort_by(|a, b| a.0.total_cmp(&b.0).then(a.1.cmp(&b.1)));

    let mut warnings = prep.warnings();
    let (method, lower) = match cfg.method {
        BootstrapMethod::Percentile => (
            BootstrapMethod::Percentile,
            order_statistic(&values, cfg.delta, cfg.b),
        ),
        BootstrapMethod::Bca => match bca_quantile(prep, &values, point, cfg, &mut warnings)? {
            Some(q) => (BootstrapMethod::Bca, order_statistic(&values, q, cfg.b)),
            None => (
                BootstrapMethod::Percentile,
                order_statistic(&values, cfg.delta, cfg.b),
            ),
        },
    };

    Ok(BoundReport {
        estimator: prep.name(),
        point_estimate: point,
        lower_bound: lower,
        delta: cfg.delta,
        b: cfg.b,
        method,
        failures,
        warnings,
        weight_variance: prep.weight_variance(),
        resamples: cfg
            .keep_resamples
            .then(|| values.iter().map(|&(v, _)| v).collect()),
    })
}

/// Adjusted percentile for BCa, or None when the jackknife is degenerate and
/// the caller should fall back to the plain percentile.
fn bca_quantile(
    prep: &dyn PreparedEstimator,
    sorted: &[(f64, usize)],
    point: f64,
    cfg: &BootstrapConfig,
    warnings: &mut Vec<String>,
) -> Result<Option<f64>> {
    let n = prep.n();
    if n < 3 {
        warnings.push("BCa needs n >= 3 for the jackknife; using percentile".into());
        return Ok(None);
    }
    let normal = Normal::standard();
    let m = sorted.len();
    let below = sorted.iter().filter(|&&(v, _)| v < point).count();
    let frac = (below as f64 / m as f64).clamp(1.0 / (m as f64 + 1.0), m as f64 / (m as f64 + 1.0));
    let z0 = normal.inverse_cdf(frac);

    let loo: Vec<f64> = (0..n)
        .into_par_iter()
        .map(|i| {
            let idx: Vec<usize> = (0..n).filter(|&k| k != i).collect();
            prep.estimate(&idx, &[tag::JACKKNIFE, i as u64])
        })
        .collect::<Result<Vec<_>>>()?;
    let mean = loo.iter().sum::<f64>() / n as f64;
    let d2: f64 = loo.iter().map(|v| (mean - v).powi(2)).sum();
    if d2 <= 0.0 {
        warnings.push("jackknife estimates all equal; using percentile".into());
        return Ok(None);
    }
    let d3: f64 = loo.iter().map(|v| (mean - v).powi(3)).sum();
    let a = d3 / (6.0 * d2.powf(1.5));

    let z_delta = normal.inverse_cdf(cfg.delta);
    let denom = 1.0 - a * (z0 + z_delta);
    if denom.abs() < 1e-12 {
        warnings.push("BCa acceleration degenerate; using percentile".into());
        return Ok(None);
    }
    let adjusted = normal.cdf(z0 + (z0 + z_delta) / denom);
    Ok(Some(adjusted))
}
