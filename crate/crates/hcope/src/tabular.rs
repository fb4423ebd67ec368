//! Dense tabular MDPs with exact dynamic programming and exhaustive
//! trajectory enumeration.
//!
//! These are the oracle path for the bias bounds and the estimator tests:
//! everything here is computed in closed form, with no sampling.

use rand::Rng;

use crate::error::{HcopeError, Result};
use crate::mdp::MdpSpec;
use crate::policy::TabularPolicy;

/// Trajectory count budget for exhaustive enumeration.
pub const ENUMERATION_BUDGET: f64 = 1e7;

/// A fully specified finite MDP: (S, A, P, r, gamma, d0) with a fixed horizon.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    /// Initial-state distribution, length `n_states`.
    pub d0: Vec<f64>,
    /// Transition probabilities `p[s][a][s']`.
    pub p: Vec<Vec<Vec<f64>>>,
    /// Rewards `r[s][a]`.
    pub r: Vec<Vec<f64>>,
    pub gamma: f64,
    pub horizon: usize,
}

impl TabularMdp {
    pub fn validate(&self) -> Result<()> {
        let close = |x: f64| (x - 1.0).abs() < 1e-9;
        if self.d0.len() != self.n_states || !close(self.d0.iter().sum()) {
            return Err(HcopeError::Config("d0 is not a distribution".into()));
        }
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = &self.p[s][a];
                if row.len() != self.n_states || !close(row.iter().sum()) {
                    return Err(HcopeError::Config(format!(
                        "P(.|{s},{a}) is not a distribution"
                    )));
                }
            }
        }
        Ok(())
    }

    pub fn spec(&self) -> MdpSpec {
        let r_min = self
            .r
            .iter()
            .flatten()
            .cloned()
            .fold(f64::INFINITY, f64::min);
        let r_max = self
            .r
            .iter()
            .flatten()
            .cloned()
            .fold(f64::NEG_INFINITY, f64::max);
        MdpSpec::new(self.gamma, self.horizon, r_min, r_max).expect("valid reward range")
    }

    /// Time-indexed action values `q[t][s][a]` by backward induction over the
    /// horizon; the Bellman residual is zero by construction.
    pub fn action_values(&self, pi: &TabularPolicy) -> Vec<Vec<Vec<f64>>> {
        let (ns, na, horizon) = (self.n_states, self.n_actions, self.horizon);
        let mut q = vec![vec![vec![0.0; na]; ns]; horizon];
        let mut v_next = vec![0.0; ns];
        for t in (0..horizon).rev() {
            let mut v_t = vec![0.0; ns];
            for s in 0..ns {
                for a in 0..na {
                    let future: f64 = self.p[s][a]
                        .iter()
                        .zip(&v_next)
                        .map(|(pr, vn)| pr * vn)
                        .sum();
                    q[t][s][a] = self.r[s][a] + self.gamma * future;
                    v_t[s] += pi.prob(s, a) * q[t][s][a];
                }
            }
            v_next = v_t;
        }
        q
    }

    /// Time-indexed state values `v[t][s]` as the pi-mixture of `q`.
    pub fn state_values(&self, pi: &TabularPolicy) -> Vec<Vec<f64>> {
        self.action_values(pi)
            .iter()
            .map(|qt| {
                (0..self.n_states)
                    .map(|s| {
                        (0..self.n_actions)
                            .map(|a| pi.prob(s, a) * qt[s][a])
                            .sum()
                    })
                    .collect()
            })
            .collect()
    }

    /// Exact V(pi) by dynamic programming.
    pub fn exact_value(&self, pi: &TabularPolicy) -> f64 {
        let v0 = &self.state_values(pi)[0];
        self.d0.iter().zip(v0).map(|(d, v)| d * v).sum()
    }

    /// Probability of a state-action sequence under this MDP and `pi`.
    pub fn sequence_prob(&self, pi: &TabularPolicy, states: &[usize], actions: &[usize]) -> f64 {
        let mut prob = self.d0[states[0]];
        for t in 0..states.len() {
            prob *= pi.prob(states[t], actions[t]);
            if t + 1 < states.len() {
                prob *= self.p[states[t]][actions[t]][states[t + 1]];
            }
            if prob == 0.0 {
                return 0.0;
            }
        }
        prob
    }

    /// Return of a state-action sequence.
    pub fn sequence_return(&self, states: &[usize], actions: &[usize]) -> f64 {
        let mut g = 0.0;
        let mut disc = 1.0;
        for t in 0..states.len() {
            g += disc * self.r[states[t]][actions[t]];
            disc *= self.gamma;
        }
        g
    }

    /// Number of length-`horizon` state-action sequences.
    pub fn trajectory_count(&self) -> f64 {
        ((self.n_states * self.n_actions) as f64).powi(self.horizon as i32)
    }

    /// Visit every state-action sequence of length `horizon` (including
    /// zero-probability ones; the visitor sees the raw sequence and filters
    /// by whatever measure it cares about).
    pub fn for_each_sequence(&self, mut f: impl FnMut(&[usize], &[usize])) -> Result<()> {
        let count = self.trajectory_count();
        if count > ENUMERATION_BUDGET {
            return Err(HcopeError::EnumerationBudget {
                count,
                limit: ENUMERATION_BUDGET,
            });
        }
        let mut states = vec![0usize; self.horizon];
        let mut actions = vec![0usize; self.horizon];
        self.recurse(0, &mut states, &mut actions, &mut f);
        Ok(())
    }

    fn recurse(
        &self,
        t: usize,
        states: &mut Vec<usize>,
        actions: &mut Vec<usize>,
        f: &mut impl FnMut(&[usize], &[usize]),
    ) {
        if t == self.horizon {
            f(states, actions);
            return;
        }
        for s in 0..self.n_states {
            states[t] = s;
            for a in 0..self.n_actions {
                actions[t] = a;
                self.recurse(t + 1, states, actions, f);
            }
        }
    }

    pub fn sample_initial(&self, rng: &mut (impl Rng + ?Sized)) -> usize {
        sample_index(&self.d0, rng)
    }

    pub fn sample_next(&self, s: usize, a: usize, rng: &mut (impl Rng + ?Sized)) -> usize {
        sample_index(&self.p[s][a], rng)
    }
}

fn sample_index(probs: &[f64], rng: &mut (impl Rng + ?Sized)) -> usize {
    let u: f64 = rng.random();
    let mut acc = 0.0;
    for (i, &p) in probs.iter().enumerate() {
        acc += p;
        if u < acc {
            return i;
        }
    }
    probs.len() - 1
}

/// Small fully enumerable MDPs with evaluation/behavior policy pairs, used as
/// oracles throughout the test suite and by the exact bias bounds.
pub mod micro {
    use super::TabularMdp;
    use crate::policy::TabularPolicy;

    pub struct MicroCase {
        pub mdp: TabularMdp,
        pub pi_e: TabularPolicy,
        pub pi_b: TabularPolicy,
    }

    /// 2 states, 2 actions, horizon 2; near-deterministic chain where the
    /// evaluation policy prefers the rewarding action.
    pub fn chain2() -> MicroCase {
        let mdp = TabularMdp {
            n_states: 2,
            n_actions: 2,
            d0: vec![1.0, 0.0],
            p: vec![
                vec![vec![0.1, 0.9], vec![0.8, 0.2]],
                vec![vec![0.3, 0.7], vec![0.6, 0.4]],
            ],
            r: vec![vec![1.0, 0.0], vec![2.0, 0.5]],
            gamma: 1.0,
            horizon: 2,
        };
        let pi_e = TabularPolicy::new(vec![vec![0.8, 0.2], vec![0.9, 0.1]]).unwrap();
        let pi_b = TabularPolicy::new(vec![vec![0.5, 0.5], vec![0.5, 0.5]]).unwrap();
        MicroCase { mdp, pi_e, pi_b }
    }

    /// 3 states, 2 actions, horizon 3; stochastic transitions, negative
    /// rewards to exercise the internal reward shift, discounting on.
    pub fn loop3() -> MicroCase {
        let mdp = TabularMdp {
            n_states: 3,
            n_actions: 2,
            d0: vec![0.6, 0.4, 0.0],
            p: vec![
                vec![vec![0.2, 0.5, 0.3], vec![0.7, 0.2, 0.1]],
                vec![vec![0.1, 0.1, 0.8], vec![0.4, 0.4, 0.2]],
                vec![vec![0.3, 0.3, 0.4], vec![0.2, 0.6, 0.2]],
            ],
            r: vec![vec![-1.0, 0.5], vec![0.0, -0.5], vec![2.0, 1.0]],
            gamma: 0.9,
            horizon: 3,
        };
        let pi_e = TabularPolicy::new(vec![
            vec![0.3, 0.7],
            vec![0.6, 0.4],
            vec![0.85, 0.15],
        ])
        .unwrap();
        let pi_b = TabularPolicy::new(vec![
            vec![0.5, 0.5],
            vec![0.4, 0.6],
            vec![0.5, 0.5],
        ])
        .unwrap();
        MicroCase { mdp, pi_e, pi_b }
    }

    /// 4 states, 3 actions, horizon 3; broad stochasticity.
    pub fn web4() -> MicroCase {
        let mdp = TabularMdp {
            n_states: 4,
            n_actions: 3,
            d0: vec![0.4, 0.3, 0.2, 0.1],
            p: vec![
                vec![
                    vec![0.25, 0.25, 0.25, 0.25],
                    vec![0.1, 0.6, 0.2, 0.1],
                    vec![0.5, 0.1, 0.2, 0.2],
                ],
                vec![
                    vec![0.2, 0.2, 0.3, 0.3],
                    vec![0.05, 0.05, 0.45, 0.45],
                    vec![0.3, 0.4, 0.2, 0.1],
                ],
                vec![
                    vec![0.6, 0.1, 0.1, 0.2],
                    vec![0.25, 0.25, 0.4, 0.1],
                    vec![0.1, 0.2, 0.3, 0.4],
                ],
                vec![
                    vec![0.15, 0.35, 0.35, 0.15],
                    vec![0.4, 0.2, 0.2, 0.2],
                    vec![0.2, 0.3, 0.1, 0.4],
                ],
            ],
            r: vec![
                vec![0.0, 1.0, 0.2],
                vec![0.5, 2.0, 0.1],
                vec![1.5, 0.3, 0.8],
                vec![3.0, 0.0, 1.2],
            ],
            gamma: 1.0,
            horizon: 3,
        };
        let pi_e = TabularPolicy::new(vec![
            vec![0.1, 0.8, 0.1],
            vec![0.2, 0.7, 0.1],
            vec![0.6, 0.2, 0.2],
            vec![0.7, 0.1, 0.2],
        ])
        .unwrap();
        let pi_b = TabularPolicy::new(vec![
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
            vec![0.4, 0.3, 0.3],
            vec![0.3, 0.4, 0.3],
            vec![1.0 / 3.0, 1.0 / 3.0, 1.0 / 3.0],
        ])
        .unwrap();
        MicroCase { mdp, pi_e, pi_b }
    }

    pub fn all() -> Vec<MicroCase> {
        vec![chain2(), loop3(), web4()]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    #[test]
    fn fixtures_are_valid() {
        for case in micro::all() {
            case.mdp.validate().unwrap();
        }
    }

    #[test]
    fn enumeration_probabilities_sum_to_one() {
        for case in micro::all() {
            let mut total = 0.0;
            case.mdp
                .for_each_sequence(|s, a| total += case.mdp.sequence_prob(&case.pi_b, s, a))
                .unwrap();
            assert_relative_eq!(total, 1.0, epsilon = 1e-12);
        }
    }

    #[test]
    fn enumeration_expectation_matches_dp() {
        for case in micro::all() {
            for pi in [&case.pi_e, &case.pi_b] {
                let dp = case.mdp.exact_value(pi);
                let mut by_enum = 0.0;
                case.mdp
                    .for_each_sequence(|s, a| {
                        by_enum +=
                            case.mdp.sequence_prob(pi, s, a) * case.mdp.sequence_return(s, a);
                    })
                    .unwrap();
                assert_relative_eq!(dp, by_enum, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn behavior_no_worse_setup() {
        // The fixtures are built so the evaluation policy is at least as good
        // as the behavior policy; the error-rate experiments rely on it.
        for case in micro::all() {
            assert!(case.mdp.exact_value(&case.pi_e) >= case.mdp.exact_value(&case.pi_b));
        }
    }

    #[test]
    fn state_values_are_policy_mixture() {
        let case = micro::loop3();
        let q = case.mdp.action_values(&case.pi_e);
        let v = case.mdp.state_values(&case.pi_e);
        for t in 0..case.mdp.horizon {
            for s in 0..case.mdp.n_states {
                let mix: f64 = (0..case.mdp.n_actions)
                    .map(|a| case.pi_e.prob(s, a) * q[t][s][a])
                    .sum();
                assert_relative_eq!(v[t][s], mix, epsilon = 1e-12);
            }
        }
    }

    #[test]
    fn budget_guard() {
        let mut mdp = micro::web4().mdp;
        mdp.horizon = 12;
        assert!(matches!(
            mdp.for_each_sequence(|_, _| {}),
            Err(HcopeError::EnumerationBudget { .. })
        ));
    }
}
