//! Importance weights and the IS / PDIS / WIS / PDWIS estimators.
//!
//! All four estimators work on the normalized scale internally (returns and
//! rewards mapped to [0, 1]) and report on the raw return scale. Weights for
//! trajectories that terminate early are held at their final value; rewards
//! past termination are the normalized image of a raw 0 (absorbing
//! convention).

use crate::error::{HcopeError, Result};
use crate::mdp::{denormalize_return, normalize_return, trajectory_return, Dataset, MdpSpec};
use crate::policy::Policy;

/// Cumulative importance weights rho[i][t] = prod_{u<=t} pi_e(a_u|s_u)/pi_b(a_u|s_u),
/// one padded row per trajectory.
#[derive(Debug, Clone, PartialEq)]
pub struct WeightMatrix {
    pub rho: Vec<Vec<f64>>,
    pub horizon: usize,
}

impl WeightMatrix {
    pub fn n(&self) -> usize {
        self.rho.len()
    }

    /// rho_L for each trajectory (the last column).
    pub fn final_weights(&self) -> Vec<f64> {
        self.rho.iter().map(|row| row[self.horizon - 1]).collect()
    }

    /// Sample variance of the final weights (diagnostic; the population mean
    /// is 1 when the weights are valid).
    pub fn final_weight_variance(&self) -> f64 {
        let w = self.final_weights();
        let n = w.len() as f64;
        if w.len() < 2 {
            return 0.0;
        }
        let mean = w.iter().sum::<f64>() / n;
        w.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)
    }
}

/// Per-column self-normalized weights over a subset of rows:
/// w[k][t] = rho[idx[k]][t] / sum_j rho[idx[j]][t].
pub fn normalized_weights(wm: &WeightMatrix, idx: &[usize]) -> Result<Vec<Vec<f64>>> {
    let mut out = vec![vec![0.0; wm.horizon]; idx.len()];
    for t in 0..wm.horizon {
        let total: f64 = idx.iter().map(|&i| wm.rho[i][t]).sum();
        if total <= 0.0 {
            return Err(HcopeError::ZeroWeightColumn { step: t });
        }
        for (k, &i) in idx.iter().enumerate() {
            out[k][t] = wm.rho[i][t] / total;
        }
    }
    Ok(out)
}

/// Importance weights for every trajectory, padded to the horizon.
/// Accumulates in log space so L = 100 products do not underflow.
pub fn compute_weights(ds: &Dataset, pi_e: &Policy, pi_b: &Policy) -> Result<WeightMatrix> {
    let horizon = ds
        .trajectories
        .iter()
        .map(|t| t.len())
        .max()
        .unwrap_or(0)
        .max(1);
    compute_weights_padded(ds, pi_e, pi_b, horizon)
}

pub fn compute_weights_padded(
    ds: &Dataset,
    pi_e: &Policy,
    pi_b: &Policy,
    horizon: usize,
) -> Result<WeightMatrix> {
    let mut rho = Vec::with_capacity(ds.trajectories.len());
    for (i, traj) in ds.trajectories.iter().enumerate() {
        let mut row = Vec::with_capacity(horizon);
        let mut log_rho = 0.0_f64;
        let mut zero = false;
        for (t, step) in traj.steps.iter().enumerate() {
            let lp_e = pi_e.log_prob(&step.state, &step.action)?;
            let lp_b = pi_b.log_prob(&step.state, &step.action)?;
            if lp_b == f64::NEG_INFINITY {
                if lp_e > f64::NEG_INFINITY {
                    return Err(HcopeError::SupportViolation {
                        trajectory: i,
                        step: t,
                    });
                }
                zero = true;
            } else if lp_e == f64::NEG_INFINITY {
                zero = true;
            } else {
                log_rho += lp_e - lp_b;
            }
            row.push(if zero { 0.0 } else { log_rho.exp() });
        }
        let last = *row.last().unwrap_or(&1.0);
        row.resize(horizon, last);
        rho.push(row);
    }
    Ok(WeightMatrix { rho, horizon })
}

/// Normalized per-step rewards padded to the horizon with the image of a raw
/// reward of 0, plus the normalized return of each trajectory.
#[derive(Debug, Clone)]
pub struct NormalizedRewards {
    pub rewards: Vec<Vec<f64>>,
    pub returns: Vec<f64>,
}

pub fn normalize_dataset(ds: &Dataset, spec: &MdpSpec) -> Result<NormalizedRewards> {
    let range = spec.reward_range();
    if range <= 0.0 {
        return Err(HcopeError::DegenerateRewardRange);
    }
    let pad = (0.0 - spec.r_min) / range;
    let mut rewards = Vec::with_capacity(ds.trajectories.len());
    let mut returns = Vec::with_capacity(ds.trajectories.len());
    for traj in &ds.trajectories {
        let mut row: Vec<f64> = traj
            .steps
            .iter()
            .map(|s| (s.reward - spec.r_min) / range)
            .collect();
        row.resize(spec.horizon, pad);
        rewards.push(row);
        returns.push(normalize_return(trajectory_return(traj, spec.gamma)?, spec)?);
    }
    Ok(NormalizedRewards { rewards, returns })
}

/// Everything the IS-family estimators need, precomputed once per dataset so
/// bootstrap resamples only index into it.
#[derive(Debug, Clone)]
pub struct IsData {
    pub weights: WeightMatrix,
    pub norm: NormalizedRewards,
    pub spec: MdpSpec,
}

impl IsData {
    pub fn prepare(ds: &Dataset, pi_e: &Policy, pi_b: &Policy, spec: &MdpSpec) -> Result<Self> {
        for traj in &ds.trajectories {
            if traj.len() > spec.horizon {
                return Err(HcopeError::DimensionMismatch(format!(
                    "trajectory of length {} exceeds horizon {}",
                    traj.len(),
                    spec.horizon
                )));
            }
        }
        let weights = compute_weights_padded(ds, pi_e, pi_b, spec.horizon)?;
        let norm = normalize_dataset(ds, spec)?;
        Ok(IsData {
            weights,
            norm,
            spec: *spec,
        })
    }

    fn check_idx(&self, idx: &[usize]) -> Result<()> {
        if idx.is_empty() {
            return Err(HcopeError::Config("empty index set".into()));
        }
        if let Some(&bad) = idx.iter().find(|&&i| i >= self.weights.n()) {
            return Err(HcopeError::Config(format!(
                "trajectory index {bad} out of range {}",
                self.weights.n()
            )));
        }
        Ok(())
    }

    /// (1/n) sum_i rho_L g(H_i), raw scale.
    pub fn is(&self, idx: &[usize]) -> Result<f64> {
        self.check_idx(idx)?;
        let last = self.spec.horizon - 1;
        let v: f64 = idx
            .iter()
            .map(|&i| self.weights.rho[i][last] * self.norm.returns[i])
            .sum::<f64>()
            / idx.len() as f64;
        denormalize_return(v, &self.spec)
    }

    /// (1/n) sum_i sum_t gamma^t rho_t r_t, raw scale.
    pub fn pdis(&self, idx: &[usize]) -> Result<f64> {
        self.check_idx(idx)?;
        let mut total = 0.0;
        for &i in idx {
            let mut acc = 0.0;
            let mut disc = 1.0;
            for t in 0..self.spec.horizon {
                acc += disc * self.weights.rho[i][t] * self.norm.rewards[i][t];
                disc *= self.spec.gamma;
            }
            total += acc;
        }
        let v = total / idx.len() as f64;
        Ok(self.denormalize_per_decision(v))
    }

    /// Self-normalized IS: sum_i w_L^i g(H_i), raw scale.
    pub fn wis(&self, idx: &[usize]) -> Result<f64> {
        self.check_idx(idx)?;
        let last = self.spec.horizon - 1;
        let total: f64 = idx.iter().map(|&i| self.weights.rho[i][last]).sum();
        if total <= 0.0 {
            return Err(HcopeError::ZeroWeightColumn { step: last });
        }
        let v: f64 = idx
            .iter()
            .map(|&i| self.weights.rho[i][last] / total * self.norm.returns[i])
            .sum();
        denormalize_return(v, &self.spec)
    }

    /// Per-decision WIS: sum_t gamma^t sum_i w_t^i r_t^i, raw scale.
    pub fn pdwis(&self, idx: &[usize]) -> Result<f64> {
        self.check_idx(idx)?;
        let w = normalized_weights(&self.weights, idx)?;
        let mut v = 0.0;
        let mut disc = 1.0;
        for t in 0..self.spec.horizon {
            let col: f64 = idx
                .iter()
                .enumerate()
                .map(|(k, &i)| w[k][t] * self.norm.rewards[i][t])
                .sum();
            v += disc * col;
            disc *= self.spec.gamma;
        }
        Ok(self.denormalize_per_decision(v))
    }

    pub fn all_indices(&self) -> Vec<usize> {
        (0..self.weights.n()).collect()
    }

    /// Map a per-decision estimate on the normalized scale back to raw
    /// returns. Since E[rho_t] = 1 the affine reward map shifts the value by
    /// r_min per (discounted) step, i.e. by g_min in total.
    pub fn denormalize_per_decision(&self, v: f64) -> f64 {
        v * self.spec.reward_range() + self.spec.g_min()
    }
}

pub fn is_estimate(ds: &Dataset, pi_e: &Policy, pi_b: &Policy, spec: &MdpSpec) -> Result<f64> {
    let d = IsData::prepare(ds, pi_e, pi_b, spec)?;
    d.is(&d.all_indices())
}

pub fn pdis_estimate(ds: &Dataset, pi_e: &Policy, pi_b: &Policy, spec: &MdpSpec) -> Result<f64> {
    let d = IsData::prepare(ds, pi_e, pi_b, spec)?;
    d.pdis(&d.all_indices())
}

pub fn wis_estimate(ds: &Dataset, pi_e: &Policy, pi_b: &Policy, spec: &MdpSpec) -> Result<f64> {
    let d = IsData::prepare(ds, pi_e, pi_b, spec)?;
    d.wis(&d.all_indices())
}

pub fn pdwis_estimate(ds: &Dataset, pi_e: &Policy, pi_b: &Policy, spec: &MdpSpec) -> Result<f64> {
    let d = IsData::prepare(ds, pi_e, pi_b, spec)?;
    d.pdwis(&d.all_indices())
}
