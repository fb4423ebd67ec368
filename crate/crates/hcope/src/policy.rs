//! Policy representations with exact density evaluation and sampling.
//!
//! Importance weights require exact probability ratios, so every policy here
//! supports `action_prob` in closed form.

use nalgebra::{Cholesky, DMatrix, DVector, Dyn};
use rand::Rng;
use rand_distr::{Distribution, StandardNormal};
use serde::{Deserialize, Serialize};

use crate::error::{HcopeError, Result};
use crate::mdp::{Action, Dataset, State};

/// Conditional action distribution over a finite state and action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TabularPolicy {
    probs: Vec<Vec<f64>>,
}

impl TabularPolicy {
    /// Rows are renormalized; negative entries are rejected.
    pub fn new(probs: Vec<Vec<f64>>) -> Result<Self> {
        if probs.is_empty() {
            return Err(HcopeError::Config("empty policy table".into()));
        }
        let n_actions = probs[0].len();
        let mut rows = Vec::with_capacity(probs.len());
        for (s, row) in probs.into_iter().enumerate() {
            if row.len() != n_actions {
                return Err(HcopeError::DimensionMismatch(format!(
                    "policy row {s} has {} actions, expected {n_actions}",
                    row.len()
                )));
            }
            if row.iter().any(|&p| p < 0.0 || !p.is_finite()) {
                return Err(HcopeError::Config(format!(
                    "policy row {s} contains a negative or non-finite entry"
                )));
            }
            let sum: f64 = row.iter().sum();
            if sum <= 0.0 {
                return Err(HcopeError::Config(format!("policy row {s} sums to zero")));
            }
            rows.push(row.into_iter().map(|p| p / sum).collect());
        }
        Ok(TabularPolicy { probs: rows })
    }

    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        TabularPolicy {
            probs: vec![vec![1.0 / n_actions as f64; n_actions]; n_states],
        }
    }

    pub fn state_count(&self) -> usize {
        self.probs.len()
    }

    pub fn action_count(&self) -> usize {
        self.probs[0].len()
    }

    pub fn prob(&self, s: usize, a: usize) -> f64 {
        self.probs[s][a]
    }

    pub fn row(&self, s: usize) -> &[f64] {
        &self.probs[s]
    }

    pub fn sample(&self, s: usize, rng: &mut (impl Rng + ?Sized)) -> usize {
        let u: f64 = rng.random();
        let mut acc = 0.0;
        let row = &self.probs[s];
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        row.len() - 1
    }
}

/// Deterministic mean map of a Gaussian policy.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum MeanFn {
    /// Same mean action everywhere.
    Constant(Vec<f64>),
    /// a = W s + b.
    Linear { w: DMatrix<f64>, b: DVector<f64> },
    /// Hand-coded CliffWorld navigator: steer toward a waypoint below the
    /// cliff row, then toward the goal; PD control on position and velocity,
    /// clamped to the acceleration box.
    Waypoint {
        waypoint: [f64; 2],
        waypoint_until_y: f64,
        goal: [f64; 2],
        kp: f64,
        kd: f64,
        accel_limit: f64,
    },
}

impl MeanFn {
    pub fn mean(&self, s: &State) -> Result<Vec<f64>> {
        let x = s
            .continuous()
            .ok_or_else(|| HcopeError::DimensionMismatch("Gaussian policy on discrete state".into()))?;
        match self {
            MeanFn::Constant(m) => Ok(m.clone()),
            MeanFn::Linear { w, b } => {
                if w.ncols() != x.len() {
                    return Err(HcopeError::DimensionMismatch(format!(
                        "mean map expects {} state dims, got {}",
                        w.ncols(),
                        x.len()
                    )));
                }
                let sv = DVector::from_column_slice(x);
                Ok((w * sv + b).as_slice().to_vec())
            }
            MeanFn::Waypoint {
                waypoint,
                waypoint_until_y,
                goal,
                kp,
                kd,
                accel_limit,
            } => {
                if x.len() != 4 {
                    return Err(HcopeError::DimensionMismatch(
                        "waypoint policy expects a 4-d state".into(),
                    ));
                }
                let (px, py, vx, vy) = (x[0], x[1], x[2], x[3]);
                let gap_x = waypoint[0];
                let target = if py >= *waypoint_until_y {
                    *goal
                } else if py < waypoint_until_y - 2.0 && (px - gap_x).abs() > 0.5 {
                    // Slide sideways below the cliff row until lined up with
                    // the gap; climbing early clips a cliff corner.
                    [gap_x, py.min(waypoint_until_y - 2.5).max(1.0)]
                } else {
                    *waypoint
                };
                let ax = (kp * (target[0] - px) - kd * vx).clamp(-accel_limit, *accel_limit);
                let ay = (kp * (target[1] - py) - kd * vy).clamp(-accel_limit, *accel_limit);
                Ok(vec![ax, ay])
            }
        }
    }
}

/// Gaussian policy: a ~ N(mean_fn(s), cov).
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct GaussianPolicy {
    pub mean_fn: MeanFn,
    pub cov: DMatrix<f64>,
    #[serde(skip)]
    cached: Option<GaussianCache>,
}

#[derive(Debug, Clone)]
struct GaussianCache {
    chol: Cholesky<f64, Dyn>,
    log_norm: f64,
}

impl PartialEq for GaussianPolicy {
    fn eq(&self, other: &Self) -> bool {
        self.mean_fn == other.mean_fn && self.cov == other.cov
    }
}

impl GaussianPolicy {
    pub fn new(mean_fn: MeanFn, cov: DMatrix<f64>) -> Result<Self> {
        let mut p = GaussianPolicy {
            mean_fn,
            cov,
            cached: None,
        };
        p.build_cache()?;
        Ok(p)
    }

    pub fn isotropic(mean_fn: MeanFn, dim: usize, variance: f64) -> Result<Self> {
        Self::new(mean_fn, DMatrix::identity(dim, dim) * variance)
    }

    fn build_cache(&mut self) -> Result<()> {
        if self.cov.nrows() != self.cov.ncols() {
            return Err(HcopeError::DimensionMismatch("covariance not square".into()));
        }
        let sym = (&self.cov - self.cov.transpose()).abs().max();
        if sym > 1e-10 {
            return Err(HcopeError::Config("covariance not symmetric".into()));
        }
        let chol = Cholesky::new(self.cov.clone())
            .ok_or_else(|| HcopeError::Config("covariance not positive definite".into()))?;
        let k = self.cov.nrows() as f64;
        let log_det: f64 = chol.l().diagonal().iter().map(|d| 2.0 * d.ln()).sum();
        let log_norm = -0.5 * (k * (2.0 * std::f64::consts::PI).ln() + log_det);
        self.cached = Some(GaussianCache { chol, log_norm });
        Ok(())
    }

    fn cache(&self) -> &GaussianCache {
        self.cached.as_ref().expect("cache built at construction")
    }

    pub fn dim(&self) -> usize {
        self.cov.nrows()
    }

    pub fn log_prob(&self, s: &State, a: &[f64]) -> Result<f64> {
        if a.len() != self.dim() {
            return Err(HcopeError::DimensionMismatch(format!(
                "action dim {} vs policy dim {}",
                a.len(),
                self.dim()
            )));
        }
        let mean = self.mean_fn.mean(s)?;
        let diff = DVector::from_iterator(a.len(), a.iter().zip(&mean).map(|(ai, mi)| ai - mi));
        let z = self.cache().chol.solve(&diff);
        Ok(self.cache().log_norm - 0.5 * diff.dot(&z))
    }

    pub fn sample(&self, s: &State, rng: &mut (impl Rng + ?Sized)) -> Result<Vec<f64>> {
        let mean = self.mean_fn.mean(s)?;
        let z = DVector::from_iterator(
            self.dim(),
            (0..self.dim()).map(|_| StandardNormal.sample(rng)),
        );
        let noise = self.cache().chol.l() * z;
        Ok(mean.iter().zip(noise.iter()).map(|(m, n)| m + n).collect())
    }
}

/// A policy over either a discrete or a continuous action space.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Policy {
    Tabular(TabularPolicy),
    Gaussian(GaussianPolicy),
}

impl Policy {
    /// Probability mass (tabular) or density (Gaussian) of `a` in `s`.
    pub fn action_prob(&self, s: &State, a: &Action) -> Result<f64> {
        Ok(self.log_prob(s, a)?.exp())
    }

    /// Log of [`Policy::action_prob`]; -inf where the mass is zero.
    pub fn log_prob(&self, s: &State, a: &Action) -> Result<f64> {
        match (self, s, a) {
            (Policy::Tabular(p), State::Discrete(si), Action::Discrete(ai)) => {
                if *si >= p.state_count() || *ai >= p.action_count() {
                    return Err(HcopeError::DimensionMismatch(format!(
                        "state {si} / action {ai} out of range for {}x{} policy",
                        p.state_count(),
                        p.action_count()
                    )));
                }
                Ok(p.prob(*si, *ai).ln())
            }
            (Policy::Gaussian(p), s @ State::Continuous(_), Action::Continuous(av)) => {
                p.log_prob(s, av)
            }
            _ => Err(HcopeError::DimensionMismatch(
                "policy and state/action kinds do not match".into(),
            )),
        }
    }

    pub fn sample_action(&self, s: &State, rng: &mut (impl Rng + ?Sized)) -> Result<Action> {
        match (self, s) {
            (Policy::Tabular(p), State::Discrete(si)) => {
                if *si >= p.state_count() {
                    return Err(HcopeError::DimensionMismatch(format!(
                        "state {si} out of range"
                    )));
                }
                Ok(Action::Discrete(p.sample(*si, rng)))
            }
            (Policy::Gaussian(p), s @ State::Continuous(_)) => {
                Ok(Action::Continuous(p.sample(s, rng)?))
            }
            _ => Err(HcopeError::DimensionMismatch(
                "policy and state kinds do not match".into(),
            )),
        }
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let text = serde_json::to_string_pretty(self)
            .map_err(|e| HcopeError::Config(e.to_string()))?;
        std::fs::write(path, text)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let text = std::fs::read_to_string(path)?;
        let mut p: Policy = serde_json::from_str(&text).map_err(|e| HcopeError::Parse {
            line: 0,
            message: e.to_string(),
        })?;
        if let Policy::Gaussian(g) = &mut p {
            g.build_cache()?;
        }
        Ok(p)
    }
}

/// Outcome of checking that the behavior policy supports every logged action.
#[derive(Debug, Clone, PartialEq)]
pub struct SupportReport {
    pub ok: bool,
    /// (trajectory index, step index) of the first step with pi_b(a|s) = 0.
    pub first_violation: Option<(usize, usize)>,
}

/// Verify that pi_b assigns positive probability to every observed action.
/// `pi_e` is accepted for signature symmetry with the estimators; the
/// violation condition only involves pi_b.
pub fn support_check(_pi_e: &Policy, pi_b: &Policy, ds: &Dataset) -> Result<SupportReport> {
    for (i, traj) in ds.trajectories.iter().enumerate() {
        for (t, step) in traj.steps.iter().enumerate() {
            if pi_b.action_prob(&step.state, &step.action)? == 0.0 {
                return Ok(SupportReport {
                    ok: false,
                    first_violation: Some((i, t)),
                });
            }
        }
    }
    Ok(SupportReport {
        ok: true,
        first_violation: None,
    })
}
