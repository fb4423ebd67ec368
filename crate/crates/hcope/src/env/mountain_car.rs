//! Discretized MountainCar with frame skip.
//!
//! Classic underpowered-car dynamics on a position/velocity grid. The state
//! is a bin index; each step decodes the bin center, applies the physics
//! `frame_skip` times with the action held constant, and re-quantizes, so the
//! process is an exact (deterministic) tabular MDP over the grid. One extra
//! absorbing index represents the goal.

use rand::{Rng, RngCore};

use crate::error::Result;
use crate::mdp::{Action, MdpSpec, State};
use crate::policy::TabularPolicy;

use super::{discrete_pair, Environment, MOUNTAIN_CAR_ID};

const POS_MIN: f64 = -1.2;
const POS_MAX: f64 = 0.6;
const VEL_MIN: f64 = -0.07;
const VEL_MAX: f64 = 0.07;
const GOAL_POS: f64 = 0.5;
const FORCE: f64 = 0.001;
const GRAVITY: f64 = 0.0025;

#[derive(Debug, Clone)]
pub struct MountainCarEnv {
    pub pos_bins: usize,
    pub vel_bins: usize,
    pub frame_skip: usize,
    pub horizon: usize,
    pub gamma: f64,
}

impl Default for MountainCarEnv {
    fn default() -> Self {
        MountainCarEnv {
            pos_bins: 32,
            vel_bins: 32,
            frame_skip: 4,
            horizon: 100,
            gamma: 1.0,
        }
    }
}

impl MountainCarEnv {
    pub fn new(pos_bins: usize, vel_bins: usize) -> Self {
        MountainCarEnv {
            pos_bins,
            vel_bins,
            ..Default::default()
        }
    }

    /// Index of the absorbing goal state.
    pub fn goal_state(&self) -> usize {
        self.pos_bins * self.vel_bins
    }

    pub fn encode(&self, pos: f64, vel: f64) -> usize {
        let pb = bin(pos, POS_MIN, POS_MAX, self.pos_bins);
        let vb = bin(vel, VEL_MIN, VEL_MAX, self.vel_bins);
        pb * self.vel_bins + vb
    }

    /// Bin-center (position, velocity) of a non-absorbing state index.
    pub fn decode(&self, idx: usize) -> (f64, f64) {
        debug_assert!(idx < self.goal_state());
        let pb = idx / self.vel_bins;
        let vb = idx % self.vel_bins;
        (
            center(pb, POS_MIN, POS_MAX, self.pos_bins),
            center(vb, VEL_MIN, VEL_MAX, self.vel_bins),
        )
    }

    /// Uniform-random behavior policy over {left, neutral, right}.
    pub fn uniform_policy(&self) -> TabularPolicy {
        TabularPolicy::uniform(self.goal_state() + 1, 3)
    }

    /// Energy-pumping evaluation policy: accelerate in the direction of the
    /// current velocity, with `epsilon` uniform exploration.
    pub fn energy_pump_policy(&self, epsilon: f64) -> TabularPolicy {
        let n = self.goal_state() + 1;
        let mut rows = Vec::with_capacity(n);
        for idx in 0..self.goal_state() {
            let (_, vel) = self.decode(idx);
            let greedy = if vel >= 0.0 { 2 } else { 0 };
            let mut row = vec![epsilon / 3.0; 3];
            row[greedy] += 1.0 - epsilon;
            rows.push(row);
        }
        rows.push(vec![1.0 / 3.0; 3]); // absorbing state: action is irrelevant
        TabularPolicy::new(rows).expect("valid policy rows")
    }

    /// r(s, a) for every (state, action), for value computation in models.
    pub fn reward_table(&self) -> Vec<Vec<f64>> {
        let mut table = vec![vec![-1.0; 3]; self.goal_state() + 1];
        table[self.goal_state()] = vec![0.0; 3];
        table
    }
}

fn bin(x: f64, lo: f64, hi: f64, bins: usize) -> usize {
    let f = ((x - lo) / (hi - lo) * bins as f64).floor();
    (f.max(0.0) as usize).min(bins - 1)
}

fn center(b: usize, lo: f64, hi: f64, bins: usize) -> f64 {
    lo + (b as f64 + 0.5) / bins as f64 * (hi - lo)
}

impl Environment for MountainCarEnv {
    fn env_id(&self) -> &str {
        MOUNTAIN_CAR_ID
    }

    fn spec(&self) -> MdpSpec {
        MdpSpec::new(self.gamma, self.horizon, -1.0, 0.0).expect("valid spec")
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> State {
        let pos = rng.random_range(-0.6..-0.4);
        State::Discrete(self.encode(pos, 0.0))
    }

    fn step(&self, s: &State, a: &Action, _rng: &mut dyn RngCore) -> Result<(State, f64, bool)> {
        let (si, ai) = discrete_pair(s, a, self.goal_state() + 1, 3)?;
        if si == self.goal_state() {
            return Ok((State::Discrete(si), 0.0, true));
        }
        let (mut pos, mut vel) = self.decode(si);
        for _ in 0..self.frame_skip {
            vel += FORCE * (ai as f64 - 1.0) - GRAVITY * (3.0 * pos).cos();
            vel = vel.clamp(VEL_MIN, VEL_MAX);
            pos += vel;
            if pos <= POS_MIN {
                pos = POS_MIN;
                vel = 0.0;
            }
            if pos >= GOAL_POS {
                return Ok((State::Discrete(self.goal_state()), -1.0, true));
            }
        }
        Ok((State::Discrete(self.encode(pos, vel)), -1.0, false))
    }

    fn reward(&self, s: &State, a: &Action) -> Result<f64> {
        let (si, _) = discrete_pair(s, a, self.goal_state() + 1, 3)?;
        Ok(if si == self.goal_state() { 0.0 } else { -1.0 })
    }

    fn is_terminal(&self, s: &State) -> bool {
        s.discrete() == Some(self.goal_state())
    }

    fn state_count(&self) -> Option<usize> {
        Some(self.goal_state() + 1)
    }

    fn action_count(&self) -> Option<usize> {
        Some(3)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_trajectory, Environment};
    use crate::mdp::trajectory_return;
    use crate::policy::Policy;
    use crate::seed;

    #[test]
    fn terminal_state_reward_zero() {
        let env = MountainCarEnv::default();
        let s = State::Discrete(env.goal_state());
        let (next, r, term) = env
            .step(&s, &Action::Discrete(1), &mut seed::rng(0, &[]))
            .unwrap();
        assert_eq!(next, s);
        assert_eq!(r, 0.0);
        assert!(term);
    }

    #[test]
    fn encode_decode_bijective() {
        let env = MountainCarEnv::default();
        for idx in 0..env.goal_state() {
            let (p, v) = env.decode(idx);
            assert_eq!(env.encode(p, v), idx);
        }
    }

    #[test]
    fn random_policy_full_horizon_unless_goal() {
        let env = MountainCarEnv::default();
        let pi = Policy::Tabular(env.uniform_policy());
        for i in 0..20 {
            let t = sample_trajectory(&env, &pi, &mut seed::rng(11, &[i])).unwrap();
            assert!(t.len() == env.horizon || t.terminal);
            let g = trajectory_return(&t, 1.0).unwrap();
            assert!((-100.0..=0.0).contains(&g));
            assert!(t.steps.iter().all(|s| s.reward == -1.0));
        }
    }

    #[test]
    fn energy_pump_solves_in_about_35_steps() {
        let env = MountainCarEnv::default();
        let pi = Policy::Tabular(env.energy_pump_policy(0.1));
        let trials = 200;
        let mut total_len = 0usize;
        let mut solved = 0usize;
        for i in 0..trials {
            let t = sample_trajectory(&env, &pi, &mut seed::rng(23, &[i])).unwrap();
            total_len += t.len();
            solved += t.terminal as usize;
        }
        let mean_len = total_len as f64 / trials as f64;
        assert!(
            solved as f64 / trials as f64 > 0.95,
            "solved only {solved}/{trials}"
        );
        assert!(
            (30.0..=45.0).contains(&mean_len),
            "mean episode length {mean_len}"
        );
    }

    #[test]
    fn dynamics_are_deterministic_per_bin() {
        let env = MountainCarEnv::default();
        let s = State::Discrete(env.encode(-0.5, 0.0));
        let a = Action::Discrete(2);
        let (n1, _, _) = env.step(&s, &a, &mut seed::rng(1, &[])).unwrap();
        let (n2, _, _) = env.step(&s, &a, &mut seed::rng(2, &[])).unwrap();
        assert_eq!(n1, n2);
    }
}
