//! Count-based tabular dynamics model.
//!
//! Transition probabilities are empirical frequencies; a state-action pair
//! never seen in the data gets a deterministic self-loop, which makes the
//! model pessimistic in all-negative-reward domains instead of optimistic.

use std::collections::HashMap;

use crate::error::{HcopeError, Result};
use crate::mdp::Dataset;
use crate::tabular::TabularMdp;

#[derive(Debug, Clone, PartialEq)]
pub struct TabularModel {
    pub n_states: usize,
    pub n_actions: usize,
    /// Sparse transition counts per (s*A + a): (next state, count), sorted by
    /// next state. An empty row means the pair was never visited.
    pub counts: Vec<Vec<(usize, u64)>>,
    /// Empirical initial-state distribution (uniform when no data).
    pub d0_hat: Vec<f64>,
    /// True when the model was learned from an empty dataset.
    pub empty_data: bool,
}

impl TabularModel {
    pub fn visited(&self, s: usize, a: usize) -> bool {
        !self.counts[s * self.n_actions + a].is_empty()
    }

    pub fn visit_count(&self, s: usize, a: usize) -> u64 {
        self.counts[s * self.n_actions + a]
            .iter()
            .map(|&(_, c)| c)
            .sum()
    }

    /// Sparse row of P_hat(.|s,a); the self-loop point mass for unvisited
    /// pairs.
    pub fn row(&self, s: usize, a: usize) -> Vec<(usize, f64)> {
        let row = &self.counts[s * self.n_actions + a];
        if row.is_empty() {
            return vec![(s, 1.0)];
        }
        let total: u64 = row.iter().map(|&(_, c)| c).sum();
        row.iter()
            .map(|&(ns, c)| (ns, c as f64 / total as f64))
            .collect()
    }

    pub fn p_hat(&self, s: usize, a: usize, next: usize) -> f64 {
        self.row(s, a)
            .iter()
            .find(|&&(ns, _)| ns == next)
            .map_or(0.0, |&(_, p)| p)
    }

    /// Dense MDP with the given reward table, for exact value computations on
    /// small state spaces.
    pub fn to_mdp(&self, r: Vec<Vec<f64>>, gamma: f64, horizon: usize) -> TabularMdp {
        let mut p = vec![vec![vec![0.0; self.n_states]; self.n_actions]; self.n_states];
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                for (ns, prob) in self.row(s, a) {
                    p[s][a][ns] = prob;
                }
            }
        }
        TabularMdp {
            n_states: self.n_states,
            n_actions: self.n_actions,
            d0: self.d0_hat.clone(),
            p,
            r,
            gamma,
            horizon,
        }
    }
}

/// Empirical frequencies over all (s, a, s') transitions in the dataset,
/// including each trajectory's transition into its final state.
pub fn learn_tabular(ds: &Dataset, n_states: usize, n_actions: usize) -> Result<TabularModel> {
    let mut acc: HashMap<usize, HashMap<usize, u64>> = HashMap::new();
    let mut d0 = vec![0.0; n_states];
    for traj in &ds.trajectories {
        let s0 = require_state(traj.steps[0].state.discrete(), n_states)?;
        d0[s0] += 1.0;
        for (s, a, next) in traj.transitions() {
            let si = require_state(s.discrete(), n_states)?;
            let ai = a
                .discrete()
                .filter(|&ai| ai < n_actions)
                .ok_or_else(|| HcopeError::DimensionMismatch("bad action index".into()))?;
            let ni = require_state(next.discrete(), n_states)?;
            *acc.entry(si * n_actions + ai).or_default().entry(ni).or_insert(0) += 1;
        }
    }
    let empty_data = ds.trajectories.is_empty();
    if empty_data {
        d0 = vec![1.0 / n_states as f64; n_states];
    } else {
        let total: f64 = d0.iter().sum();
        for v in d0.iter_mut() {
            *v /= total;
        }
    }
    let mut counts = vec![Vec::new(); n_states * n_actions];
    for (sa, m) in acc {
        let mut row: Vec<(usize, u64)> = m.into_iter().collect();
        row.sort_unstable();
        counts[sa] = row;
    }
    Ok(TabularModel {
        n_states,
        n_actions,
        counts,
        d0_hat: d0,
        empty_data,
    })
}

fn require_state(s: Option<usize>, n_states: usize) -> Result<usize> {
    s.filter(|&si| si < n_states)
        .ok_or_else(|| HcopeError::DimensionMismatch("bad state index".into()))
}
