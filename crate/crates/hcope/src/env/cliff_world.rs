//! Continuous 2-D CliffWorld.
//!
//! A point mass with state (x, y, vx, vy) and acceleration actions navigates
//! around two cliff rectangles to a goal. Dynamics are exactly linear with
//! additive Gaussian noise: s' = A s + B a + eta, eta ~ N(0, Q).

use nalgebra::{Matrix4, Matrix4x2, Vector2, Vector4};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{HcopeError, Result};
use crate::mdp::{Action, MdpSpec, State};
use crate::policy::{GaussianPolicy, MeanFn, Policy};

use super::{Environment, CLIFF_WORLD_ID};

/// Axis-aligned cliff rectangle.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Rect {
    pub x0: f64,
    pub x1: f64,
    pub y0: f64,
    pub y1: f64,
}

impl Rect {
    pub fn contains(&self, x: f64, y: f64) -> bool {
        x >= self.x0 && x <= self.x1 && y >= self.y0 && y <= self.y1
    }
}

#[derive(Debug, Clone)]
pub struct CliffWorldConfig {
    pub dt: f64,
    /// Per-component dynamics noise standard deviation (Q = noise_std^2 I).
    pub noise_std: f64,
    pub goal: [f64; 2],
    pub goal_radius: f64,
    pub cliffs: Vec<Rect>,
    pub cliff_penalty: f64,
    pub horizon: usize,
    pub gamma: f64,
    pub start: [f64; 2],
    pub start_noise_std: f64,
    pub r_min: f64,
    /// Covariance scale of the evaluation policy (Sigma_e = eval_var I).
    pub eval_var: f64,
    /// Covariance scale of the behavior policy; larger than `eval_var`.
    pub behavior_var: f64,
}

impl Default for CliffWorldConfig {
    fn default() -> Self {
        CliffWorldConfig {
            dt: 1.0,
            noise_std: 0.1,
            goal: [9.0, 9.0],
            goal_radius: 1.0,
            cliffs: vec![
                // A cliff band across the middle with one gap; the first two
                // rectangles define the gap and the navigator's waypoint.
                Rect {
                    x0: -5.0,
                    x1: 3.5,
                    y0: 4.0,
                    y1: 5.0,
                },
                Rect {
                    x0: 5.5,
                    x1: 16.0,
                    y0: 4.0,
                    y1: 5.0,
                },
                // A rim of cliff surrounding the playfield: well-behaved
                // policies stay far inside it, while anything that strays off
                // the map falls.
                Rect {
                    x0: -5.0,
                    x1: -2.0,
                    y0: -5.0,
                    y1: 16.0,
                },
                Rect {
                    x0: 13.0,
                    x1: 16.0,
                    y0: -5.0,
                    y1: 16.0,
                },
                Rect {
                    x0: -5.0,
                    x1: 16.0,
                    y0: -5.0,
                    y1: -2.0,
                },
                Rect {
                    x0: -5.0,
                    x1: 16.0,
                    y0: 13.0,
                    y1: 16.0,
                },
            ],
            cliff_penalty: -250.0,
            horizon: 50,
            gamma: 1.0,
            start: [0.5, 0.5],
            start_noise_std: 0.05,
            r_min: -250.0,
            eval_var: 0.1,
            behavior_var: 0.3,
        }
    }
}

#[derive(Debug, Clone)]
pub struct CliffWorldEnv {
    pub cfg: CliffWorldConfig,
    a_mat: Matrix4<f64>,
    b_mat: Matrix4x2<f64>,
}

impl Default for CliffWorldEnv {
    fn default() -> Self {
        Self::new(CliffWorldConfig::default())
    }
}

impl CliffWorldEnv {
    pub fn new(cfg: CliffWorldConfig) -> Self {
        let dt = cfg.dt;
        #[rustfmt::skip]
        let a_mat = Matrix4::new(
            1.0, 0.0, dt, 0.0,
            0.0, 1.0, 0.0, dt,
            0.0, 0.0, 1.0, 0.0,
            0.0, 0.0, 0.0, 1.0,
        );
        #[rustfmt::skip]
        let b_mat = Matrix4x2::new(
            0.0, 0.0,
            0.0, 0.0,
            dt, 0.0,
            0.0, dt,
        );
        CliffWorldEnv { cfg, a_mat, b_mat }
    }

    pub fn dynamics(&self) -> (&Matrix4<f64>, &Matrix4x2<f64>) {
        (&self.a_mat, &self.b_mat)
    }

    /// Noise-free part of the transition: A s + B a.
    pub fn mean_next(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let sv = Vector4::from_column_slice(s);
        let av = Vector2::from_column_slice(a);
        (self.a_mat * sv + self.b_mat * av).as_slice().to_vec()
    }

    fn in_cliff(&self, x: f64, y: f64) -> bool {
        self.cfg.cliffs.iter().any(|c| c.contains(x, y))
    }

    fn at_goal(&self, x: f64, y: f64) -> bool {
        let dx = x - self.cfg.goal[0];
        let dy = y - self.cfg.goal[1];
        (dx * dx + dy * dy).sqrt() <= self.cfg.goal_radius
    }

    /// Hand-coded deterministic navigator pi_d: steer toward the gap between
    /// the cliffs, then toward the goal.
    pub fn waypoint_mean(&self) -> MeanFn {
        let gap_x = 0.5 * (self.cfg.cliffs[0].x1 + self.cfg.cliffs[1].x0);
        MeanFn::Waypoint {
            waypoint: [gap_x, self.cfg.cliffs[0].y1 + 1.5],
            waypoint_until_y: self.cfg.cliffs[0].y1 + 0.5,
            goal: self.cfg.goal,
            kp: 0.2,
            kd: 0.7,
            accel_limit: 1.0,
        }
    }

    /// pi_e: N(pi_d(s), eval_var I).
    pub fn eval_policy(&self) -> Policy {
        Policy::Gaussian(
            GaussianPolicy::isotropic(self.waypoint_mean(), 2, self.cfg.eval_var)
                .expect("valid covariance"),
        )
    }

    /// pi_b: same mean policy with a wider covariance.
    pub fn behavior_policy(&self) -> Policy {
        Policy::Gaussian(
            GaussianPolicy::isotropic(self.waypoint_mean(), 2, self.cfg.behavior_var)
                .expect("valid covariance"),
        )
    }
}

fn continuous_pair<'a>(s: &'a State, a: &'a Action) -> Result<(&'a [f64], &'a [f64])> {
    let sv = s
        .continuous()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected continuous state".into()))?;
    let av = a
        .continuous()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected continuous action".into()))?;
    if sv.len() != 4 || av.len() != 2 {
        return Err(HcopeError::DimensionMismatch(format!(
            "cliff-world expects state dim 4 / action dim 2, got {}/{}",
            sv.len(),
            av.len()
        )));
    }
    Ok((sv, av))
}

impl Environment for CliffWorldEnv {
    fn env_id(&self) -> &str {
        CLIFF_WORLD_ID
    }

    fn spec(&self) -> MdpSpec {
        MdpSpec::new(self.cfg.gamma, self.cfg.horizon, self.cfg.r_min, 0.0).expect("valid spec")
    }

    fn initial_state(&self, rng: &mut dyn RngCore) -> State {
        let mut s = vec![self.cfg.start[0], self.cfg.start[1], 0.0, 0.0];
        for v in s.iter_mut().take(2) {
            let z: f64 = StandardNormal.sample(rng);
            *v += self.cfg.start_noise_std * z;
        }
        State::Continuous(s)
    }

    fn step(&self, s: &State, a: &Action, rng: &mut dyn RngCore) -> Result<(State, f64, bool)> {
        let (sv, av) = continuous_pair(s, a)?;
        let mut next = self.mean_next(sv, av);
        for v in next.iter_mut() {
            let z: f64 = StandardNormal.sample(rng);
            *v += self.cfg.noise_std * z;
        }
        let fell = self.in_cliff(next[0], next[1]);
        let terminal = fell || self.at_goal(next[0], next[1]);
        let next = State::Continuous(next);
        let reward = self.transition_reward(s, a, &next)?;
        Ok((next, reward, terminal))
    }

    fn reward(&self, s: &State, a: &Action) -> Result<f64> {
        let (sv, av) = continuous_pair(s, a)?;
        let dist = (sv[0] - self.cfg.goal[0]).abs() + (sv[1] - self.cfg.goal[1]).abs();
        let effort = av[0].abs() + av[1].abs();
        Ok(-(dist + effort))
    }

    fn transition_reward(&self, s: &State, a: &Action, next: &State) -> Result<f64> {
        if let Some(nv) = next.continuous() {
            if nv.len() == 4 && self.in_cliff(nv[0], nv[1]) {
                return Ok(self.cfg.cliff_penalty);
            }
        }
        self.reward(s, a)
    }

    fn state_bounds(&self) -> Option<Vec<(f64, f64)>> {
        // Positions a few units beyond the start/goal span, chosen so the
        // box edge lies inside the cliff rim: a simulated state projected
        // onto the box is off the map and therefore terminal. Velocities are
        // well beyond anything the bounded-acceleration policies reach.
        let lo = (self.cfg.start[0].min(self.cfg.goal[0]))
            .min(self.cfg.start[1].min(self.cfg.goal[1]))
            - 4.0;
        let hi = (self.cfg.start[0].max(self.cfg.goal[0]))
            .max(self.cfg.start[1].max(self.cfg.goal[1]))
            + 5.5;
        Some(vec![(lo, hi), (lo, hi), (-5.0, 5.0), (-5.0, 5.0)])
    }

    fn is_terminal(&self, s: &State) -> bool {
        match s.continuous() {
            Some(sv) if sv.len() == 4 => {
                self.in_cliff(sv[0], sv[1]) || self.at_goal(sv[0], sv[1])
            }
            _ => false,
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::sample_trajectory;
    use crate::seed;

    fn noiseless() -> CliffWorldEnv {
        CliffWorldEnv::new(CliffWorldConfig {
            noise_std: 0.0,
            start_noise_std: 0.0,
            ..Default::default()
        })
    }

    #[test]
    fn zero_dynamics_fixed_point() {
        let env = noiseless();
        let s = State::Continuous(vec![0.0; 4]);
        let a = Action::Continuous(vec![0.0; 2]);
        let (next, _, _) = env.step(&s, &a, &mut seed::rng(0, &[])).unwrap();
        assert_eq!(next, State::Continuous(vec![0.0; 4]));
    }

    #[test]
    fn reward_formula() {
        let env = CliffWorldEnv::default();
        // |8-9| + |8-9| = 2, |0.3| + |0.2| = 0.5.
        let s = State::Continuous(vec![8.0, 8.0, 0.0, 0.0]);
        let a = Action::Continuous(vec![0.3, -0.2]);
        assert_eq!(env.reward(&s, &a).unwrap(), -2.5);
    }

    #[test]
    fn cliff_fall_terminates_with_penalty() {
        let env = noiseless();
        // Heading straight into the left cliff rectangle.
        let s = State::Continuous(vec![1.0, 3.8, 0.0, 0.5]);
        let a = Action::Continuous(vec![0.0, 0.0]);
        let (next, r, term) = env.step(&s, &a, &mut seed::rng(0, &[])).unwrap();
        assert!(term);
        assert_eq!(r, env.cfg.cliff_penalty);
        assert!(env.is_terminal(&next));
    }

    #[test]
    fn linear_gaussian_residuals() {
        // Residual s' - (A s + B a) over sampled transitions: mean ~ 0 and
        // covariance ~ Q per component.
        let env = CliffWorldEnv::default();
        let pi = env.behavior_policy();
        let mut rng = seed::rng(17, &[]);
        let mut sums = [0.0; 4];
        let mut sq = [[0.0; 4]; 4];
        let mut count = 0usize;
        while count < 100_000 {
            let mut s = env.initial_state(&mut rng);
            for _ in 0..env.cfg.horizon {
                let a = pi.sample_action(&s, &mut rng).unwrap();
                let (next, _, term) = env.step(&s, &a, &mut rng).unwrap();
                let mean = env.mean_next(s.continuous().unwrap(), a.continuous().unwrap());
                let resid: Vec<f64> = next
                    .continuous()
                    .unwrap()
                    .iter()
                    .zip(&mean)
                    .map(|(n, m)| n - m)
                    .collect();
                for i in 0..4 {
                    sums[i] += resid[i];
                    for j in 0..4 {
                        sq[i][j] += resid[i] * resid[j];
                    }
                }
                count += 1;
                if term || count >= 100_000 {
                    break;
                }
                s = next;
            }
        }
        let n = count as f64;
        let q = env.cfg.noise_std * env.cfg.noise_std;
        let per_comp_std = (q / n).sqrt();
        let mut frob_diff = 0.0;
        let mut frob_q = 0.0;
        for i in 0..4 {
            let mean_i = sums[i] / n;
            assert!(
                mean_i.abs() < 4.0 * per_comp_std,
                "residual mean {mean_i} component {i}"
            );
            for j in 0..4 {
                let cov_ij = sq[i][j] / n;
                let q_ij = if i == j { q } else { 0.0 };
                frob_diff += (cov_ij - q_ij).powi(2);
                frob_q += q_ij * q_ij;
            }
        }
        assert!(frob_diff.sqrt() < 0.1 * frob_q.sqrt(), "covariance mismatch");
    }

    #[test]
    fn eval_policy_reaches_goal() {
        let env = CliffWorldEnv::default();
        let pi = env.eval_policy();
        let mut reached = 0usize;
        let mut fell = 0usize;
        let trials = 200;
        for i in 0..trials {
            let t = sample_trajectory(&env, &pi, &mut seed::rng(31, &[i])).unwrap();
            if t.terminal {
                let last = t.final_state.as_ref().unwrap().continuous().unwrap();
                if env.at_goal(last[0], last[1]) {
                    reached += 1;
                } else {
                    fell += 1;
                }
            }
        }
        assert!(
            reached as f64 / trials as f64 > 0.8,
            "reached {reached}, fell {fell} of {trials}"
        );
    }

    #[test]
    fn behavior_policy_noisier_than_eval() {
        let env = CliffWorldEnv::default();
        assert!(env.cfg.behavior_var > env.cfg.eval_var);
    }
}
