//! Benchmark environments and trajectory generation.
//!
//! Environments are stateless transition functions over (state, action, rng);
//! episode state lives entirely in the caller's loop, so rollout workers can
//! share one environment value.

mod cliff_world;
mod mountain_car;

pub use cliff_world::{CliffWorldConfig, CliffWorldEnv, Rect};
pub use mountain_car::MountainCarEnv;

use rand::RngCore;
use rayon::prelude::*;

use crate::error::{HcopeError, Result};
use crate::mdp::{trajectory_return, Action, Dataset, MdpSpec, State, Step, Trajectory};
use crate::policy::Policy;
use crate::seed::{self, tag};
use crate::tabular::TabularMdp;

pub const MOUNTAIN_CAR_ID: &str = "mountain-car-v0";
pub const CLIFF_WORLD_ID: &str = "cliff-world-v0";

pub trait Environment: Send + Sync {
    fn env_id(&self) -> &str;

    fn spec(&self) -> MdpSpec;

    fn initial_state(&self, rng: &mut dyn RngCore) -> State;

    /// One transition. Returns (next state, reward for (s, a), terminal).
    fn step(&self, s: &State, a: &Action, rng: &mut dyn RngCore) -> Result<(State, f64, bool)>;

    /// The known reward function r(s, a).
    fn reward(&self, s: &State, a: &Action) -> Result<f64>;

    /// Reward actually paid for the transition (s, a) -> next. Defaults to
    /// r(s, a); environments with event penalties tied to the landing state
    /// (falling off a cliff) override this so simulated rollouts charge them
    /// the same way real episodes do.
    fn transition_reward(&self, s: &State, a: &Action, next: &State) -> Result<f64> {
        let _ = next;
        self.reward(s, a)
    }

    fn is_terminal(&self, s: &State) -> bool;

    /// Axis-aligned box of physically meaningful continuous states, if the
    /// environment declares one. Model rollouts are projected back into this
    /// region so a misspecified model cannot extrapolate arbitrarily far from
    /// states the environment could ever produce.
    fn state_bounds(&self) -> Option<Vec<(f64, f64)>> {
        None
    }

    /// Number of discrete states (including any absorbing state), if tabular.
    fn state_count(&self) -> Option<usize> {
        None
    }

    fn action_count(&self) -> Option<usize> {
        None
    }
}

/// Execute `policy` in `env` until the horizon or a terminal state.
pub fn sample_trajectory(
    env: &dyn Environment,
    policy: &Policy,
    rng: &mut dyn RngCore,
) -> Result<Trajectory> {
    let horizon = env.spec().horizon;
    let mut s = env.initial_state(rng);
    let mut steps = Vec::new();
    let mut terminal = false;
    let mut final_state = None;
    for _ in 0..horizon {
        let a = policy.sample_action(&s, rng)?;
        let (next, reward, term) = env.step(&s, &a, rng)?;
        steps.push(Step {
            state: s,
            action: a,
            reward,
        });
        if term {
            terminal = true;
            final_state = Some(next);
            break;
        }
        final_state = Some(next.clone());
        s = next;
    }
    Trajectory::new(steps, terminal, final_state)
}

/// Generate `n` trajectories with per-trajectory derived rng streams.
pub fn sample_dataset(
    env: &dyn Environment,
    policy: &Policy,
    policy_id: &str,
    n: usize,
    master_seed: u64,
) -> Result<Dataset> {
    let trajectories = (0..n)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(master_seed, &[tag::DATASET, i as u64]);
            sample_trajectory(env, policy, &mut rng)
        })
        .collect::<Result<Vec<_>>>()?;
    Ok(Dataset::new(trajectories, policy_id, env.env_id()))
}

/// Monte Carlo estimate of V(policy) with its standard error.
pub fn monte_carlo_ground_truth(
    env: &dyn Environment,
    policy: &Policy,
    num_rollouts: usize,
    master_seed: u64,
) -> Result<(f64, f64)> {
    if num_rollouts == 0 {
        return Err(HcopeError::Config("num_rollouts must be >= 1".into()));
    }
    let gamma = env.spec().gamma;
    let returns = (0..num_rollouts)
        .into_par_iter()
        .map(|i| {
            let mut rng = seed::rng(master_seed, &[tag::GROUND_TRUTH, i as u64]);
            let traj = sample_trajectory(env, policy, &mut rng)?;
            trajectory_return(&traj, gamma)
        })
        .collect::<Result<Vec<_>>>()?;
    let n = returns.len() as f64;
    let mean = returns.iter().sum::<f64>() / n;
    let var = returns.iter().map(|g| (g - mean).powi(2)).sum::<f64>() / (n - 1.0).max(1.0);
    Ok((mean, (var / n).sqrt()))
}

/// A fixed-horizon tabular MDP exposed through the environment interface.
/// Used for the enumerable micro benchmarks.
pub struct TabularEnv {
    pub mdp: TabularMdp,
    id: String,
}

impl TabularEnv {
    pub fn new(mdp: TabularMdp, id: &str) -> Self {
        TabularEnv {
            mdp,
            id: id.to_string(),
        }
    }
}

impl Environment for TabularEnv {
    fn env_id(&self) -> &str {
        &self.id
    }

    fn spec(&self) -> MdpSpec {
        self.mdp.spec()
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> State {
        State::Discrete(self.mdp.sample_initial(rng))
    }

    fn step(&self, s: &State, a: &Action, rng: &mut dyn RngCore) -> Result<(State, f64, bool)> {
        let (si, ai) = discrete_pair(s, a, self.mdp.n_states, self.mdp.n_actions)?;
        let next = self.mdp.sample_next(si, ai, rng);
        Ok((State::Discrete(next), self.mdp.r[si][ai], false))
    }

    fn reward(&self, s: &State, a: &Action) -> Result<f64> {
        let (si, ai) = discrete_pair(s, a, self.mdp.n_states, self.mdp.n_actions)?;
        Ok(self.mdp.r[si][ai])
    }

    fn is_terminal(&self, _s: &State) -> bool {
        false
    }

    fn state_count(&self) -> Option<usize> {
        Some(self.mdp.n_states)
    }

    fn action_count(&self) -> Option<usize> {
        Some(self.mdp.n_actions)
    }
}

pub(crate) fn discrete_pair(
    s: &State,
    a: &Action,
    n_states: usize,
    n_actions: usize,
) -> Result<(usize, usize)> {
    let si = s
        .discrete()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected discrete state".into()))?;
    let ai = a
        .discrete()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected discrete action".into()))?;
    if si >= n_states {
        return Err(HcopeError::DimensionMismatch(format!(
            "state {si} out of range {n_states}"
        )));
    }
    if ai >= n_actions {
        return Err(HcopeError::DimensionMismatch(format!(
            "action {ai} out of range {n_actions}"
        )));
    }
    Ok((si, ai))
}
