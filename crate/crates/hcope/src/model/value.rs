//! Value functions of learned models and the direct model-based estimator.
//!
//! Tabular models get exact finite-horizon backward induction; continuous
//! models get Monte Carlo rollouts inside the model with derived rng streams,
//! so any query is deterministic given the master seed.

use rand::{Rng, RngCore};

use crate::env::Environment;
use crate::error::{HcopeError, Result};
use crate::mdp::{Action, Dataset, MdpSpec, State};
use crate::policy::{Policy, TabularPolicy};
use crate::seed::{self, tag};

use super::regression::LinearGaussianModel;
use super::tabular::{learn_tabular, TabularModel};

/// Finite-horizon value tables: q[t][s][a] and v[t][s] for t = 0..L, with
/// v[L] = 0.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularVf {
    pub q: Vec<Vec<Vec<f64>>>,
    pub v: Vec<Vec<f64>>,
}

impl TabularVf {
    pub fn horizon(&self) -> usize {
        self.q.len()
    }
}

/// Exact backward induction on the learned model:
/// q[t][s][a] = r(s,a) + gamma * sum_s' P_hat(s'|s,a) v[t+1][s'],
/// v[t][s] = sum_a pi(a|s) q[t][s][a].
pub fn value_iteration(
    model: &TabularModel,
    reward: &[Vec<f64>],
    pi: &TabularPolicy,
    gamma: f64,
    horizon: usize,
) -> TabularVf {
    let ns = model.n_states;
    let na = model.n_actions;
    let mut q = vec![vec![vec![0.0; na]; ns]; horizon];
    let mut v = vec![vec![0.0; ns]; horizon + 1];
    for t in (0..horizon).rev() {
        for s in 0..ns {
            let mut vs = 0.0;
            for a in 0..na {
                let mut future = 0.0;
                for (ns_i, p) in model.row(s, a) {
                    future += p * v[t + 1][ns_i];
                }
                let qv = reward[s][a] + gamma * future;
                q[t][s][a] = qv;
                vs += pi.prob(s, a) * qv;
            }
            v[t][s] = vs;
        }
    }
    v.truncate(horizon + 1);
    TabularVf { q, v }
}

/// r(s, a) looked up from the environment for every discrete pair.
pub fn env_reward_table(env: &dyn Environment) -> Result<Vec<Vec<f64>>> {
    let ns = env
        .state_count()
        .ok_or_else(|| HcopeError::Config("environment is not tabular".into()))?;
    let na = env
        .action_count()
        .ok_or_else(|| HcopeError::Config("environment is not tabular".into()))?;
    let mut table = vec![vec![0.0; na]; ns];
    for (s, row) in table.iter_mut().enumerate() {
        for (a, r) in row.iter_mut().enumerate() {
            *r = env.reward(&State::Discrete(s), &Action::Discrete(a))?;
        }
    }
    Ok(table)
}

/// Direct model-based estimate for tabular data: learn P_hat, then evaluate
/// pi_e in the model by exact DP (the zero-variance version of simulating
/// rollouts in the model).
pub fn mb_tabular(ds: &Dataset, pi_e: &TabularPolicy, env: &dyn Environment) -> Result<f64> {
    let ns = env
        .state_count()
        .ok_or_else(|| HcopeError::Config("environment is not tabular".into()))?;
    let na = env
        .action_count()
        .ok_or_else(|| HcopeError::Config("environment is not tabular".into()))?;
    let model = learn_tabular(ds, ns, na)?;
    let reward = env_reward_table(env)?;
    let spec = env.spec();
    Ok(mb_from_model(&model, &reward, pi_e, &spec))
}

pub fn mb_from_model(
    model: &TabularModel,
    reward: &[Vec<f64>],
    pi_e: &TabularPolicy,
    spec: &MdpSpec,
) -> f64 {
    let vf = value_iteration(model, reward, pi_e, spec.gamma, spec.horizon);
    model
        .d0_hat
        .iter()
        .zip(&vf.v[0])
        .map(|(d, v)| d * v)
        .sum()
}

/// One simulated episode of `pi_e` inside a continuous model, using the
/// environment only for its known reward function and terminal test.
/// `first_action` forces the action at the starting step (for q-values).
pub fn model_rollout_return(
    model: &LinearGaussianModel,
    env: &dyn Environment,
    pi_e: &Policy,
    start: &[f64],
    start_t: usize,
    first_action: Option<&[f64]>,
    bounds: Option<&StateBounds>,
    rng: &mut dyn RngCore,
) -> Result<f64> {
    let spec = env.spec();
    let mut s = start.to_vec();
    let mut g = 0.0;
    let mut disc = spec.gamma.powi(start_t as i32);
    for t in start_t..spec.horizon {
        let state = State::Continuous(s.clone());
        if env.is_terminal(&state) {
            break;
        }
        let a = match (t == start_t, first_action) {
            (true, Some(a)) => a.to_vec(),
            _ => match pi_e.sample_action(&state, rng)? {
                Action::Continuous(a) => a,
                Action::Discrete(_) => {
                    return Err(HcopeError::DimensionMismatch(
                        "discrete action in continuous rollout".into(),
                    ))
                }
            },
        };
        let mut next = model.sample_next(&s, &a, rng);
        // A badly misspecified model (out-of-class features) can spiral its
        // simulated states toward overflow; clamp the state into a large box
        // and the reward into the declared range so the rollout stays finite
        // and pessimistic rather than turning into NaN.
        for x in &mut next {
            *x = x.clamp(-ROLLOUT_STATE_LIMIT, ROLLOUT_STATE_LIMIT);
        }
        if let Some(b) = bounds {
            b.clamp(&mut next);
        }
        let next_state = State::Continuous(next.clone());
        let r = env.transition_reward(&state, &Action::Continuous(a.clone()), &next_state)?;
        g += disc * r.clamp(spec.r_min, spec.r_max);
        disc *= spec.gamma;
        s = next;
    }
    Ok(g)
}

/// Bounding box half-width for simulated model states.
pub const ROLLOUT_STATE_LIMIT: f64 = 1e3;

/// Axis-aligned box the learned model is trusted on, taken from the data it
/// was fit to (padded by a quarter of each coordinate's observed range).
/// Simulated states are projected back into it, so a misspecified model makes
/// boundedly wrong in-region predictions instead of extrapolating off to
/// overflow.
#[derive(Debug, Clone)]
pub struct StateBounds(pub Vec<(f64, f64)>);

impl StateBounds {
    /// Bounds declared by the environment itself, when it has them. These are
    /// preferred over data-derived bounds because they do not move with the
    /// sample.
    pub fn from_env(env: &dyn Environment) -> Option<StateBounds> {
        env.state_bounds().map(StateBounds)
    }

    pub fn from_dataset(ds: &Dataset) -> Option<StateBounds> {
        let mut lo: Vec<f64> = Vec::new();
        let mut hi: Vec<f64> = Vec::new();
        let mut any = false;
        {
            let mut visit = |s: &State| {
                if let Some(x) = s.continuous() {
                    if !any {
                        lo = x.to_vec();
                        hi = x.to_vec();
                        any = true;
                    } else {
                        for (i, &v) in x.iter().enumerate() {
                            lo[i] = lo[i].min(v);
                            hi[i] = hi[i].max(v);
                        }
                    }
                }
            };
            for traj in &ds.trajectories {
                for step in &traj.steps {
                    visit(&step.state);
                }
                if let Some(s) = &traj.final_state {
                    visit(s);
                }
            }
        }
        if !any {
            return None;
        }
        Some(StateBounds(
            lo.into_iter()
                .zip(hi)
                .map(|(l, h)| {
                    let pad = (0.25 * (h - l)).max(0.5);
                    (l - pad, h + pad)
                })
                .collect(),
        ))
    }

    pub fn clamp(&self, s: &mut [f64]) {
        for (x, &(lo, hi)) in s.iter_mut().zip(&self.0) {
            *x = x.clamp(lo, hi);
        }
    }
}

/// Monte Carlo value estimates inside a continuous model. Each query derives
/// its own rng stream from (master seed, query path), so values do not depend
/// on evaluation order or worker count.
pub struct McValueEvaluator<'a> {
    pub model: &'a LinearGaussianModel,
    pub env: &'a dyn Environment,
    pub pi_e: &'a Policy,
    pub rollouts: usize,
    pub master_seed: u64,
    /// Data-derived trust region for simulated states.
    pub bounds: Option<StateBounds>,
}

impl McValueEvaluator<'_> {
    fn rollout_stats(
        &self,
        start: &[f64],
        start_t: usize,
        first_action: Option<&[f64]>,
        path: &[u64],
    ) -> Result<(f64, f64)> {
        let mut sum = 0.0;
        let mut sumsq = 0.0;
        for r in 0..self.rollouts {
            let mut full_path = vec![tag::VALUE_FN];
            full_path.extend_from_slice(path);
            full_path.push(r as u64);
            let mut rng = seed::rng(self.master_seed, &full_path);
            let g = model_rollout_return(
                self.model,
                self.env,
                self.pi_e,
                start,
                start_t,
                first_action,
                self.bounds.as_ref(),
                &mut rng,
            )?;
            sum += g;
            sumsq += g * g;
        }
        let n = self.rollouts as f64;
        let mean = sum / n;
        let var = ((sumsq - n * mean * mean) / (n - 1.0).max(1.0)).max(0.0);
        Ok((mean, (var / n).sqrt()))
    }

    /// (q_hat(s, a) from step t, stderr).
    pub fn q_value(&self, t: usize, s: &[f64], a: &[f64], path: &[u64]) -> Result<(f64, f64)> {
        self.rollout_stats(s, t, Some(a), path)
    }

    /// (v_hat(s) from step t, stderr); the action mixture over pi_e is
    /// sampled per rollout.
    pub fn v_value(&self, t: usize, s: &[f64], path: &[u64]) -> Result<(f64, f64)> {
        self.rollout_stats(s, t, None, path)
    }
}

/// Model-based estimate for continuous data: rollouts of pi_e in the learned
/// model, starting from the dataset's empirical initial states.
pub fn mb_continuous_with_model(
    model: &LinearGaussianModel,
    initials: &[Vec<f64>],
    idx: &[usize],
    pi_e: &Policy,
    env: &dyn Environment,
    rollouts: usize,
    master_seed: u64,
    bounds: Option<&StateBounds>,
    path: &[u64],
) -> Result<f64> {
    if idx.is_empty() {
        return Err(HcopeError::Config("empty index set".into()));
    }
    let mut total = 0.0;
    for r in 0..rollouts {
        let mut full_path = vec![tag::ROLLOUT];
        full_path.extend_from_slice(path);
        full_path.push(r as u64);
        let mut rng = seed::rng(master_seed, &full_path);
        let start = &initials[idx[rng.random_range(0..idx.len())]];
        total += model_rollout_return(model, env, pi_e, start, 0, None, bounds, &mut rng)?;
    }
    Ok(total / rollouts as f64)
}
