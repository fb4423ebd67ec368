//! Doubly robust estimators: DR (unnormalized weights) and WDR
//! (self-normalized weights), built on the per-decision IS machinery.
//!
//! Both subtract a control variate from the per-decision IS estimate:
//!
//!   sum_i sum_t gamma^t ( W_t^i q_hat(S_t^i, A_t^i) - W_{t-1}^i v_hat(S_t^i) )
//!
//! where W_t^i is w_t^i (WDR) or rho_t^i / n (DR) and W_{-1}^i = 1/n in both
//! cases, so the step -1 weights sum to 1 exactly like every other step. The
//! control variate has expectation zero under the behavior policy whenever
//! v_hat(s) is the pi_e mixture of q_hat(s, .), which is what makes the
//! subtraction free in expectation.
//!
//! Everything runs on the normalized reward scale used by PDIS/PDWIS; value
//! functions are mapped onto that scale by `ValueTable`, and the final
//! estimate is mapped back to raw returns.

use crate::error::{HcopeError, Result};
use crate::importance::{normalized_weights, IsData};
use crate::mdp::{discounted_geometric, Dataset, MdpSpec};
use crate::model::{McValueEvaluator, TabularVf};
use crate::policy::TabularPolicy;

/// Per-trajectory-step value estimates on the normalized reward scale,
/// padded past each trajectory's termination with the value of the absorbing
/// zero-reward continuation.
#[derive(Debug, Clone)]
pub struct ValueTable {
    /// q_tilde[i][t] for the observed (S_t, A_t).
    pub q: Vec<Vec<f64>>,
    /// v_tilde[i][t] for the observed S_t.
    pub v: Vec<Vec<f64>>,
    pub warnings: Vec<String>,
}

/// Normalized image of a raw value-to-go x at step t:
/// (x - r_min * sum_{u<L-t} gamma^u) / (r_max - r_min).
fn normalize_value(x: f64, t: usize, spec: &MdpSpec) -> f64 {
    let geom = discounted_geometric(spec.gamma, spec.horizon - t);
    (x - spec.r_min * geom) / spec.reward_range()
}

fn padded_value(t: usize, spec: &MdpSpec) -> f64 {
    normalize_value(0.0, t, spec)
}

impl ValueTable {
    /// All-zero table on the normalized scale (the "no model" case; WDR
    /// degenerates to PDWIS and DR to PDIS).
    pub fn zeros(n: usize, spec: &MdpSpec) -> Self {
        ValueTable {
            q: vec![vec![0.0; spec.horizon]; n],
            v: vec![vec![0.0; spec.horizon]; n],
            warnings: Vec::new(),
        }
    }

    /// Look up exact tabular value functions for every observed step. Also
    /// verifies the mixture identity v(s) = sum_a pi_e(a|s) q(s, a) on the
    /// visited states; a violation is recorded as a warning because WDR stays
    /// well-defined, it just loses the zero-mean control variate.
    pub fn from_tabular(
        ds: &Dataset,
        vf: &TabularVf,
        pi_e: &TabularPolicy,
        spec: &MdpSpec,
    ) -> Result<Self> {
        let mut warnings = Vec::new();
        let mut q = Vec::with_capacity(ds.trajectories.len());
        let mut v = Vec::with_capacity(ds.trajectories.len());
        let mut mixture_checked = false;
        for traj in &ds.trajectories {
            let mut qrow = Vec::with_capacity(spec.horizon);
            let mut vrow = Vec::with_capacity(spec.horizon);
            for (t, step) in traj.steps.iter().enumerate() {
                let s = step.state.discrete().ok_or_else(|| {
                    HcopeError::DimensionMismatch("expected discrete state".into())
                })?;
                let a = step.action.discrete().ok_or_else(|| {
                    HcopeError::DimensionMismatch("expected discrete action".into())
                })?;
                let n_actions = vf.q[t][s].len();
                let mix: f64 = (0..n_actions).map(|b| pi_e.prob(s, b) * vf.q[t][s][b]).sum();
                if (mix - vf.v[t][s]).abs() > 1e-6 && !mixture_checked {
                    warnings.push(format!(
                        "value functions violate the pi_e mixture identity at (t={t}, s={s}): {} vs {}",
                        mix, vf.v[t][s]
                    ));
                    mixture_checked = true;
                }
                qrow.push(normalize_value(vf.q[t][s][a], t, spec));
                vrow.push(normalize_value(vf.v[t][s], t, spec));
            }
            for t in traj.len()..spec.horizon {
                let pad = padded_value(t, spec);
                qrow.push(pad);
                vrow.push(pad);
            }
            q.push(qrow);
            v.push(vrow);
        }
        Ok(ValueTable { q, v, warnings })
    }

    /// Monte Carlo value estimates for every observed step of a continuous
    /// dataset. Query rng streams are derived from (trajectory, step), so the
    /// table is deterministic given the evaluator's master seed.
    pub fn from_mc(ds: &Dataset, ev: &McValueEvaluator, spec: &MdpSpec) -> Result<Self> {
        let mut q = Vec::with_capacity(ds.trajectories.len());
        let mut v = Vec::with_capacity(ds.trajectories.len());
        let mut max_stderr = 0.0f64;
        for (i, traj) in ds.trajectories.iter().enumerate() {
            let mut qrow = Vec::with_capacity(spec.horizon);
            let mut vrow = Vec::with_capacity(spec.horizon);
            for (t, step) in traj.steps.iter().enumerate() {
                let s = step.state.continuous().ok_or_else(|| {
                    HcopeError::DimensionMismatch("expected continuous state".into())
                })?;
                let a = step.action.continuous().ok_or_else(|| {
                    HcopeError::DimensionMismatch("expected continuous action".into())
                })?;
                let (qv, q_se) = ev.q_value(t, s, a, &[i as u64, t as u64, 0])?;
                let (vv, v_se) = ev.v_value(t, s, &[i as u64, t as u64, 1])?;
                max_stderr = max_stderr.max(q_se).max(v_se);
                qrow.push(normalize_value(qv, t, spec));
                vrow.push(normalize_value(vv, t, spec));
            }
            for t in traj.len()..spec.horizon {
                let pad = padded_value(t, spec);
                qrow.push(pad);
                vrow.push(pad);
            }
            q.push(qrow);
            v.push(vrow);
        }
        let warnings = vec![format!(
            "Monte Carlo value functions; max per-query stderr {max_stderr:.6} (raw scale)"
        )];
        Ok(ValueTable { q, v, warnings })
    }
}

/// The control variate on the normalized scale, kept per (trajectory, step)
/// for diagnostics.
#[derive(Debug, Clone)]
pub struct ControlVariateTrace {
    pub terms: Vec<Vec<f64>>,
    pub total: f64,
}

fn control_variate(
    weights: &[Vec<f64>],
    prev_initial: &[f64],
    rows: &[usize],
    vt: &ValueTable,
    spec: &MdpSpec,
) -> ControlVariateTrace {
    let mut terms = Vec::with_capacity(rows.len());
    let mut total = 0.0;
    for (k, &i) in rows.iter().enumerate() {
        let mut row = Vec::with_capacity(spec.horizon);
        let mut disc = 1.0;
        for t in 0..spec.horizon {
            let w_prev = if t == 0 { prev_initial[k] } else { weights[k][t - 1] };
            let term = disc * (weights[k][t] * vt.q[i][t] - w_prev * vt.v[i][t]);
            row.push(term);
            total += term;
            disc *= spec.gamma;
        }
        terms.push(row);
    }
    ControlVariateTrace { terms, total }
}

/// WDR over the rows `idx` of a prepared dataset: PDWIS minus the
/// self-normalized control variate, reported on the raw return scale.
pub fn wdr(data: &IsData, vt: &ValueTable, idx: &[usize]) -> Result<f64> {
    let pdwis_raw = data.pdwis(idx)?;
    let pdwis_norm = (pdwis_raw - data.spec.g_min()) / data.spec.reward_range();
    let w = normalized_weights(&data.weights, idx)?;
    let n = idx.len() as f64;
    let prev = vec![1.0 / n; idx.len()];
    let cv = control_variate(&w, &prev, idx, vt, &data.spec);
    Ok(data.denormalize_per_decision(pdwis_norm - cv.total))
}

/// DR over the rows `idx`: PDIS minus the unnormalized (rho/n) control
/// variate, raw scale.
pub fn dr(data: &IsData, vt: &ValueTable, idx: &[usize]) -> Result<f64> {
    let pdis_raw = data.pdis(idx)?;
    let pdis_norm = (pdis_raw - data.spec.g_min()) / data.spec.reward_range();
    let n = idx.len() as f64;
    let scaled: Vec<Vec<f64>> = idx
        .iter()
        .map(|&i| data.weights.rho[i].iter().map(|r| r / n).collect())
        .collect();
    let prev = vec![1.0 / n; idx.len()];
    let cv = control_variate(&scaled, &prev, idx, vt, &data.spec);
    Ok(data.denormalize_per_decision(pdis_norm - cv.total))
}

/// The DR control variate of a single trajectory with rho_{-1} = 1, on the
/// normalized scale. Its expectation under the behavior policy is exactly
/// zero when v_hat is the pi_e mixture of q_hat, which the enumeration tests
/// verify.
pub fn single_trajectory_control_variate(data: &IsData, vt: &ValueTable, i: usize) -> f64 {
    let weights = vec![data.weights.rho[i].clone()];
    let prev = vec![1.0];
    control_variate(&weights, &prev, &[i], vt, &data.spec).total
}
