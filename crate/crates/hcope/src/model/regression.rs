//! Linear-Gaussian dynamics models fit by ridge-stabilized least squares.
//!
//! Two feature maps: `Linear` uses [1, s, a] and can represent the true
//! CliffWorld dynamics exactly; `Polynomial` deliberately omits the raw state
//! (it emits 1, x^2, x^3 per state component plus the raw action) so the
//! model class cannot represent a linear system, which is the misspecified
//! comparison case.

use nalgebra::{Cholesky, DMatrix, DVector};
use rand::RngCore;
use rand_distr::{Distribution, StandardNormal};

use crate::error::{HcopeError, Result};
use crate::mdp::{Dataset, State};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FeatureMap {
    Linear,
    Polynomial,
}

impl FeatureMap {
    pub fn dim(&self, state_dim: usize, action_dim: usize) -> usize {
        match self {
            FeatureMap::Linear => 1 + state_dim + action_dim,
            FeatureMap::Polynomial => 1 + 2 * state_dim + action_dim,
        }
    }

    pub fn features(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let mut f = Vec::with_capacity(self.dim(s.len(), a.len()));
        f.push(1.0);
        match self {
            FeatureMap::Linear => f.extend_from_slice(s),
            FeatureMap::Polynomial => {
                for &x in s {
                    f.push(x * x);
                    f.push(x * x * x);
                }
            }
        }
        f.extend_from_slice(a);
        f
    }
}

/// Sufficient statistics of a least-squares fit, cheap to merge across
/// bootstrap resamples.
#[derive(Debug, Clone, PartialEq)]
pub struct RegressionMoments {
    pub xtx: DMatrix<f64>,
    pub xty: DMatrix<f64>,
    pub yty: DMatrix<f64>,
    pub count: usize,
}

impl RegressionMoments {
    pub fn zeros(feat_dim: usize, state_dim: usize) -> Self {
        RegressionMoments {
            xtx: DMatrix::zeros(feat_dim, feat_dim),
            xty: DMatrix::zeros(feat_dim, state_dim),
            yty: DMatrix::zeros(state_dim, state_dim),
            count: 0,
        }
    }

    pub fn add(&mut self, other: &RegressionMoments) {
        self.xtx += &other.xtx;
        self.xty += &other.xty;
        self.yty += &other.yty;
        self.count += other.count;
    }

    pub fn observe(&mut self, features: &[f64], next: &[f64]) {
        let x = DVector::from_column_slice(features);
        let y = DVector::from_column_slice(next);
        self.xtx += &x * x.transpose();
        self.xty += &x * y.transpose();
        self.yty += &y * y.transpose();
        self.count += 1;
    }
}

#[derive(Debug, Clone)]
pub struct LinearGaussianModel {
    pub feature_map: FeatureMap,
    pub state_dim: usize,
    pub action_dim: usize,
    /// feat_dim x state_dim coefficient matrix: next mean = W^T phi(s, a).
    pub w: DMatrix<f64>,
    /// Residual covariance of the next state.
    pub q_hat: DMatrix<f64>,
    /// Gaussian fit of the initial-state distribution (for likelihoods).
    pub init_mean: DVector<f64>,
    pub init_cov: DMatrix<f64>,
    noise_chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    noise_log_norm: f64,
    init_chol: Option<Cholesky<f64, nalgebra::Dyn>>,
    init_log_norm: f64,
}

const RIDGE: f64 = 1e-8;
/// Covariance floor used when residuals are (numerically) singular, e.g. on
/// noiseless training data.
const COV_JITTER: f64 = 1e-12;

impl LinearGaussianModel {
    pub fn from_moments(
        moments: &RegressionMoments,
        feature_map: FeatureMap,
        state_dim: usize,
        action_dim: usize,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
    ) -> Result<Self> {
        let feat_dim = feature_map.dim(state_dim, action_dim);
        if moments.count < feat_dim {
            return Err(HcopeError::UnderdeterminedRegression {
                transitions: moments.count,
                features: feat_dim,
            });
        }
        let mut gram = moments.xtx.clone();
        for i in 0..feat_dim {
            gram[(i, i)] += RIDGE;
        }
        let chol = Cholesky::new(gram).ok_or_else(|| {
            HcopeError::Numeric("regression normal equations not positive definite".into())
        })?;
        let w = chol.solve(&moments.xty);
        // Residual covariance via moments:
        // (1/n) (Y - X W)^T (Y - X W) = (YtY - W^T XtY - XtY^T W + W^T XtX W)/n.
        let n = moments.count as f64;
        let wt_xty = w.transpose() * &moments.xty;
        let q_hat = (&moments.yty - &wt_xty - wt_xty.transpose()
            + w.transpose() * &moments.xtx * &w)
            / n;
        let q_hat = symmetrize(q_hat);
        let (noise_chol, noise_log_norm) = gaussian_cache(&q_hat);
        let (init_chol, init_log_norm) = gaussian_cache(&init_cov);
        Ok(LinearGaussianModel {
            feature_map,
            state_dim,
            action_dim,
            w,
            q_hat,
            init_mean,
            init_cov,
            noise_chol,
            noise_log_norm,
            init_chol,
            init_log_norm,
        })
    }

    /// Build a model directly from its parameters, bypassing learning (used
    /// to inject known dynamics in tests and diagnostics).
    pub fn from_parts(
        feature_map: FeatureMap,
        w: DMatrix<f64>,
        q_hat: DMatrix<f64>,
        init_mean: DVector<f64>,
        init_cov: DMatrix<f64>,
    ) -> Self {
        let state_dim = w.ncols();
        let feat_dim = w.nrows();
        let action_dim = match feature_map {
            FeatureMap::Linear => feat_dim - 1 - state_dim,
            FeatureMap::Polynomial => feat_dim - 1 - 2 * state_dim,
        };
        let q_hat = symmetrize(q_hat);
        let (noise_chol, noise_log_norm) = gaussian_cache(&q_hat);
        let (init_chol, init_log_norm) = gaussian_cache(&init_cov);
        LinearGaussianModel {
            feature_map,
            state_dim,
            action_dim,
            w,
            q_hat,
            init_mean,
            init_cov,
            noise_chol,
            noise_log_norm,
            init_chol,
            init_log_norm,
        }
    }

    pub fn mean_next(&self, s: &[f64], a: &[f64]) -> Vec<f64> {
        let phi = DVector::from_vec(self.feature_map.features(s, a));
        (self.w.transpose() * phi).as_slice().to_vec()
    }

    pub fn sample_next(&self, s: &[f64], a: &[f64], rng: &mut dyn RngCore) -> Vec<f64> {
        let mut next = DVector::from_vec(self.mean_next(s, a));
        if let Some(chol) = &self.noise_chol {
            let z = DVector::from_iterator(
                self.state_dim,
                (0..self.state_dim).map(|_| StandardNormal.sample(rng)),
            );
            next += chol.l() * z;
        }
        next.as_slice().to_vec()
    }

    /// log N(next; W^T phi(s,a), Q_hat).
    pub fn log_prob_transition(&self, s: &[f64], a: &[f64], next: &[f64]) -> Result<f64> {
        let mean = self.mean_next(s, a);
        let diff = DVector::from_iterator(
            self.state_dim,
            next.iter().zip(&mean).map(|(n, m)| n - m),
        );
        log_density(&diff, self.noise_chol.as_ref(), self.noise_log_norm)
    }

    /// log of the fitted Gaussian initial-state density.
    pub fn log_prob_initial(&self, s0: &[f64]) -> Result<f64> {
        let diff = DVector::from_column_slice(s0) - &self.init_mean;
        log_density(&diff, self.init_chol.as_ref(), self.init_log_norm)
    }

    /// Training mean squared error over the dataset's transitions.
    pub fn training_mse(&self, ds: &Dataset) -> Result<f64> {
        let mut total = 0.0;
        let mut count = 0usize;
        for traj in &ds.trajectories {
            for (s, a, next) in traj.transitions() {
                let (sv, av, nv) = continuous_transition(s, a, next)?;
                let mean = self.mean_next(sv, av);
                total += nv
                    .iter()
                    .zip(&mean)
                    .map(|(n, m)| (n - m).powi(2))
                    .sum::<f64>();
                count += 1;
            }
        }
        Ok(total / count.max(1) as f64)
    }
}

fn symmetrize(m: DMatrix<f64>) -> DMatrix<f64> {
    let mt = m.transpose();
    (m + mt) * 0.5
}

/// Cholesky factor and log normalizing constant of a covariance, with a
/// diagonal jitter fallback for singular matrices. `None` marks a covariance
/// that is exactly zero after jitter fails (deterministic model).
fn gaussian_cache(cov: &DMatrix<f64>) -> (Option<Cholesky<f64, nalgebra::Dyn>>, f64) {
    let d = cov.nrows();
    for jitter_scale in 0..8 {
        let mut c = cov.clone();
        let jitter = COV_JITTER * 10f64.powi(jitter_scale * 2);
        for i in 0..d {
            c[(i, i)] += jitter;
        }
        if let Some(chol) = Cholesky::new(c) {
            let log_det: f64 = (0..d).map(|i| chol.l()[(i, i)].ln()).sum::<f64>() * 2.0;
            let log_norm = -0.5 * (d as f64 * (2.0 * std::f64::consts::PI).ln() + log_det);
            return (Some(chol), log_norm);
        }
    }
    (None, 0.0)
}

fn log_density(
    diff: &DVector<f64>,
    chol: Option<&Cholesky<f64, nalgebra::Dyn>>,
    log_norm: f64,
) -> Result<f64> {
    match chol {
        Some(chol) => {
            let solved = chol.solve(diff);
            Ok(log_norm - 0.5 * diff.dot(&solved))
        }
        None => Err(HcopeError::Numeric(
            "degenerate covariance in Gaussian density".into(),
        )),
    }
}

pub(crate) fn continuous_transition<'a>(
    s: &'a State,
    a: &'a crate::mdp::Action,
    next: &'a State,
) -> Result<(&'a [f64], &'a [f64], &'a [f64])> {
    let sv = s
        .continuous()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected continuous state".into()))?;
    let av = a
        .continuous()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected continuous action".into()))?;
    let nv = next
        .continuous()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected continuous state".into()))?;
    Ok((sv, av, nv))
}

/// Per-trajectory regression moments plus the initial state, the unit the
/// bootstrap resamples over.
pub fn trajectory_moments(
    ds: &Dataset,
    feature_map: FeatureMap,
    state_dim: usize,
    action_dim: usize,
) -> Result<Vec<(RegressionMoments, Vec<f64>)>> {
    let feat_dim = feature_map.dim(state_dim, action_dim);
    ds.trajectories
        .iter()
        .map(|traj| {
            let mut m = RegressionMoments::zeros(feat_dim, state_dim);
            for (s, a, next) in traj.transitions() {
                let (sv, av, nv) = continuous_transition(s, a, next)?;
                m.observe(&feature_map.features(sv, av), nv);
            }
            let s0 = traj.steps[0]
                .state
                .continuous()
                .ok_or_else(|| {
                    HcopeError::DimensionMismatch("expected continuous state".into())
                })?
                .to_vec();
            Ok((m, s0))
        })
        .collect()
}

/// Gaussian fit of the initial states indexed by `idx` (with replacement
/// allowed), floored to stay nonsingular.
pub fn fit_initial_gaussian(
    initials: &[Vec<f64>],
    idx: &[usize],
    state_dim: usize,
) -> (DVector<f64>, DMatrix<f64>) {
    let n = idx.len().max(1) as f64;
    let mut mean = DVector::zeros(state_dim);
    for &i in idx {
        mean += DVector::from_column_slice(&initials[i]);
    }
    mean /= n;
    let mut cov = DMatrix::zeros(state_dim, state_dim);
    for &i in idx {
        let d = DVector::from_column_slice(&initials[i]) - &mean;
        cov += &d * d.transpose();
    }
    cov /= n;
    for i in 0..state_dim {
        cov[(i, i)] += 1e-9;
    }
    (mean, cov)
}

pub fn learn_regression(ds: &Dataset, feature_map: FeatureMap) -> Result<LinearGaussianModel> {
    let first = ds
        .trajectories
        .first()
        .ok_or_else(|| HcopeError::Config("empty dataset for regression".into()))?;
    let state_dim = first.steps[0]
        .state
        .continuous()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected continuous dataset".into()))?
        .len();
    let action_dim = first.steps[0]
        .action
        .continuous()
        .ok_or_else(|| HcopeError::DimensionMismatch("expected continuous dataset".into()))?
        .len();
    let per_traj = trajectory_moments(ds, feature_map, state_dim, action_dim)?;
    let feat_dim = feature_map.dim(state_dim, action_dim);
    let mut moments = RegressionMoments::zeros(feat_dim, state_dim);
    for (m, _) in &per_traj {
        moments.add(m);
    }
    let initials: Vec<Vec<f64>> = per_traj.into_iter().map(|(_, s0)| s0).collect();
    let idx: Vec<usize> = (0..initials.len()).collect();
    let (init_mean, init_cov) = fit_initial_gaussian(&initials, &idx, state_dim);
    LinearGaussianModel::from_moments(
        &moments,
        feature_map,
        state_dim,
        action_dim,
        init_mean,
        init_cov,
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_dataset, CliffWorldConfig, CliffWorldEnv};
    use crate::mdp::{Action, Step, Trajectory};
    use crate::seed;

    fn linear_dataset(noise: f64, n: usize, seed_v: u64) -> (Dataset, CliffWorldEnv) {
        let env = CliffWorldEnv::new(CliffWorldConfig {
            noise_std: noise,
            ..Default::default()
        });
        let pi = env.behavior_policy();
        let ds = sample_dataset(&env, &pi, "b", n, seed_v).unwrap();
        (ds, env)
    }

    #[test]
    fn noiseless_linear_data_exact_fit() {
        let (ds, env) = linear_dataset(0.0, 30, 5);
        let model = learn_regression(&ds, FeatureMap::Linear).unwrap();
        assert!(model.training_mse(&ds).unwrap() <= 1e-8);
        // W recovers (A, B): check predictions on fresh state-action pairs.
        for k in 0..10 {
            let s = vec![0.3 * k as f64, 0.1 * k as f64, 0.05 * k as f64, -0.02 * k as f64];
            let a = vec![0.5, -0.25];
            let truth = env.mean_next(&s, &a);
            let pred = model.mean_next(&s, &a);
            for (t, p) in truth.iter().zip(&pred) {
                assert!((t - p).abs() < 1e-6, "{t} vs {p}");
            }
        }
    }

    #[test]
    fn polynomial_features_cannot_fit_linear_data() {
        let (ds, _) = linear_dataset(0.0, 30, 5);
        let linear = learn_regression(&ds, FeatureMap::Linear).unwrap();
        let poly = learn_regression(&ds, FeatureMap::Polynomial).unwrap();
        let mse_lin = linear.training_mse(&ds).unwrap();
        let mse_poly = poly.training_mse(&ds).unwrap();
        assert!(mse_lin <= 1e-8, "linear mse {mse_lin}");
        assert!(mse_poly > 1e-3, "polynomial mse {mse_poly}");
        assert!(mse_poly > mse_lin);
    }

    #[test]
    fn underdetermined_is_an_error() {
        let steps = vec![Step {
            state: State::Continuous(vec![0.0; 4]),
            action: Action::Continuous(vec![0.0; 2]),
            reward: 0.0,
        }];
        let traj =
            Trajectory::new(steps, false, Some(State::Continuous(vec![0.0; 4]))).unwrap();
        let ds = Dataset::new(vec![traj], "b", "t");
        match learn_regression(&ds, FeatureMap::Linear) {
            Err(HcopeError::UnderdeterminedRegression {
                transitions,
                features,
            }) => {
                assert_eq!(transitions, 1);
                assert_eq!(features, 7);
            }
            other => panic!("expected underdetermined error, got {other:?}"),
        }
    }

    #[test]
    fn residual_covariance_recovers_noise() {
        let (ds, env) = linear_dataset(0.1, 400, 8);
        let model = learn_regression(&ds, FeatureMap::Linear).unwrap();
        let q = env.cfg.noise_std * env.cfg.noise_std;
        for i in 0..4 {
            for j in 0..4 {
                let expect = if i == j { q } else { 0.0 };
                assert!(
                    (model.q_hat[(i, j)] - expect).abs() < 0.1 * q,
                    "q_hat[{i}][{j}] = {}",
                    model.q_hat[(i, j)]
                );
            }
        }
    }

    #[test]
    fn transition_log_prob_matches_univariate_formula() {
        let (ds, _) = linear_dataset(0.1, 100, 9);
        let model = learn_regression(&ds, FeatureMap::Linear).unwrap();
        let s = vec![1.0, 2.0, 0.1, 0.2];
        let a = vec![0.3, 0.4];
        let mean = model.mean_next(&s, &a);
        let lp = model.log_prob_transition(&s, &a, &mean).unwrap();
        // At the mean the density is the normalizing constant.
        let det = model.q_hat.clone().determinant();
        let expect = -0.5 * (4.0 * (2.0 * std::f64::consts::PI).ln() + det.ln());
        assert!((lp - expect).abs() < 1e-6, "{lp} vs {expect}");
    }

    #[test]
    fn sampling_follows_fitted_moments() {
        let (ds, _) = linear_dataset(0.1, 200, 10);
        let model = learn_regression(&ds, FeatureMap::Linear).unwrap();
        let s = vec![0.5, 0.5, 0.0, 0.0];
        let a = vec![0.1, 0.1];
        let mean = model.mean_next(&s, &a);
        let mut rng = seed::rng(3, &[]);
        let n = 20_000;
        let mut acc = vec![0.0; 4];
        for _ in 0..n {
            let next = model.sample_next(&s, &a, &mut rng);
            for (t, v) in acc.iter_mut().zip(&next) {
                *t += v;
            }
        }
        for (m, t) in mean.iter().zip(&acc) {
            let emp = t / n as f64;
            assert!((emp - m).abs() < 0.01, "{emp} vs {m}");
        }
    }

    #[test]
    fn initial_state_fit_matches_start_distribution() {
        let (ds, env) = linear_dataset(0.1, 500, 11);
        let model = learn_regression(&ds, FeatureMap::Linear).unwrap();
        assert!((model.init_mean[0] - env.cfg.start[0]).abs() < 0.02);
        assert!((model.init_mean[1] - env.cfg.start[1]).abs() < 0.02);
        assert!(model.log_prob_initial(&[0.5, 0.5, 0.0, 0.0]).unwrap().is_finite());
    }

    #[test]
    fn feature_maps_shapes() {
        let s = [1.0, 2.0];
        let a = [3.0];
        assert_eq!(FeatureMap::Linear.features(&s, &a), vec![1.0, 1.0, 2.0, 3.0]);
        assert_eq!(
            FeatureMap::Polynomial.features(&s, &a),
            vec![1.0, 1.0, 1.0, 4.0, 8.0, 3.0]
        );
    }
}
