//! Uniform estimator interface for the bootstrap.
//!
//! An estimator is "prepared" once against the full dataset (weights, the
//! single learned model, value tables), after which evaluating a bootstrap
//! resample only needs the list of resampled trajectory indices. The one
//! exception is MB, whose whole point under the bootstrap is to refit its
//! model on each resample; its per-trajectory sufficient statistics
//! (transition counts or regression moments) are precomputed so a refit is a
//! cheap merge.

use std::collections::HashMap;
use std::fmt;
use std::str::FromStr;

use crate::doubly_robust::{dr, wdr, ValueTable};
use crate::env::Environment;
use crate::error::{HcopeError, Result};
use crate::importance::IsData;
use crate::mdp::{Dataset, MdpSpec};
use crate::model::{
    env_reward_table, fit_initial_gaussian, learn_regression, learn_tabular,
    mb_continuous_with_model, trajectory_moments, value_iteration, FeatureMap,
    LinearGaussianModel, McValueEvaluator, RegressionMoments, StateBounds,
};
use crate::policy::{Policy, TabularPolicy};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum ModelClass {
    Tabular,
    LinearRegression,
    PolynomialRegression,
}

impl ModelClass {
    fn suffix(&self) -> &'static str {
        match self {
            ModelClass::Tabular => "tabular",
            ModelClass::LinearRegression => "lr",
            ModelClass::PolynomialRegression => "pr",
        }
    }

    pub fn feature_map(&self) -> Option<FeatureMap> {
        match self {
            ModelClass::Tabular => None,
            ModelClass::LinearRegression => Some(FeatureMap::Linear),
            ModelClass::PolynomialRegression => Some(FeatureMap::Polynomial),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum EstimatorKind {
    Is,
    Pdis,
    Wis,
    Pdwis,
    Mb(ModelClass),
    Dr(ModelClass),
    Wdr(ModelClass),
}

impl fmt::Display for EstimatorKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EstimatorKind::Is => write!(f, "is"),
            EstimatorKind::Pdis => write!(f, "pdis"),
            EstimatorKind::Wis => write!(f, "wis"),
            EstimatorKind::Pdwis => write!(f, "pdwis"),
            EstimatorKind::Mb(m) => write!(f, "mb-{}", m.suffix()),
            EstimatorKind::Dr(m) => write!(f, "dr-{}", m.suffix()),
            EstimatorKind::Wdr(m) => write!(f, "wdr-{}", m.suffix()),
        }
    }
}

impl FromStr for EstimatorKind {
    type Err = HcopeError;

    fn from_str(s: &str) -> Result<Self> {
        let model = |suffix: &str| -> Result<ModelClass> {
            match suffix {
                "tabular" => Ok(ModelClass::Tabular),
                "lr" => Ok(ModelClass::LinearRegression),
                "pr" => Ok(ModelClass::PolynomialRegression),
                other => Err(HcopeError::Config(format!("unknown model class '{other}'"))),
            }
        };
        match s {
            "is" => Ok(EstimatorKind::Is),
            "pdis" => Ok(EstimatorKind::Pdis),
            "wis" => Ok(EstimatorKind::Wis),
            "pdwis" => Ok(EstimatorKind::Pdwis),
            _ => {
                if let Some(rest) = s.strip_prefix("mb-") {
                    Ok(EstimatorKind::Mb(model(rest)?))
                } else if let Some(rest) = s.strip_prefix("dr-") {
                    Ok(EstimatorKind::Dr(model(rest)?))
                } else if let Some(rest) = s.strip_prefix("wdr-") {
                    Ok(EstimatorKind::Wdr(model(rest)?))
                } else {
                    Err(HcopeError::Config(format!("unknown estimator '{s}'")))
                }
            }
        }
    }
}

#[derive(Debug, Clone, Copy)]
pub struct EstimatorConfig {
    /// Simulated episodes per MB evaluation of a continuous model.
    pub mb_rollouts: usize,
    /// Rollouts per Monte Carlo value-function query (continuous WDR/DR).
    pub vf_rollouts: usize,
    pub master_seed: u64,
}

impl Default for EstimatorConfig {
    fn default() -> Self {
        EstimatorConfig {
            mb_rollouts: 1000,
            vf_rollouts: 100,
            master_seed: 0,
        }
    }
}

/// An estimator bound to a dataset: evaluating a resample needs only the
/// resampled row indices plus a seed path scoping any internal randomness.
pub trait PreparedEstimator: Send + Sync {
    fn name(&self) -> String;

    fn n(&self) -> usize;

    fn estimate(&self, idx: &[usize], path: &[u64]) -> Result<f64>;

    fn warnings(&self) -> Vec<String> {
        Vec::new()
    }

    fn weight_variance(&self) -> Option<f64> {
        None
    }
}

struct IsFamily {
    kind: EstimatorKind,
    data: IsData,
}

impl PreparedEstimator for IsFamily {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn n(&self) -> usize {
        self.data.weights.n()
    }

    fn estimate(&self, idx: &[usize], _path: &[u64]) -> Result<f64> {
        match self.kind {
            EstimatorKind::Is => self.data.is(idx),
            EstimatorKind::Pdis => self.data.pdis(idx),
            EstimatorKind::Wis => self.data.wis(idx),
            EstimatorKind::Pdwis => self.data.pdwis(idx),
            _ => unreachable!("non-IS kind in IsFamily"),
        }
    }

    fn weight_variance(&self) -> Option<f64> {
        Some(self.data.weights.final_weight_variance())
    }
}

struct DoublyRobust {
    kind: EstimatorKind,
    data: IsData,
    table: ValueTable,
    weighted: bool,
}

impl PreparedEstimator for DoublyRobust {
    fn name(&self) -> String {
        self.kind.to_string()
    }

    fn n(&self) -> usize {
        self.data.weights.n()
    }

    fn estimate(&self, idx: &[usize], _path: &[u64]) -> Result<f64> {
        if self.weighted {
            wdr(&self.data, &self.table, idx)
        } else {
            dr(&self.data, &self.table, idx)
        }
    }

    fn warnings(&self) -> Vec<String> {
        self.table.warnings.clone()
    }

    fn weight_variance(&self) -> Option<f64> {
        Some(self.data.weights.final_weight_variance())
    }
}

/// MB on tabular data. Refitting per resample merges per-trajectory
/// transition lists; the DP runs over the compact set of states that occur in
/// the resample (everything else is an unvisited self-loop whose value never
/// feeds back into the visited set).
struct MbTabular {
    name: String,
    /// Per trajectory: (s * A + a, next state).
    transitions: Vec<Vec<(u32, u32)>>,
    initials: Vec<u32>,
    reward: Vec<Vec<f64>>,
    pi_rows: Vec<Vec<f64>>,
    spec: MdpSpec,
    n_actions: usize,
}

impl MbTabular {
    fn evaluate(&self, idx: &[usize]) -> f64 {
        let na = self.n_actions;
        // Compact state index over everything the resample touches.
        let mut compact: HashMap<u32, usize> = HashMap::new();
        let mut states: Vec<u32> = Vec::new();
        let intern = |s: u32, compact: &mut HashMap<u32, usize>, states: &mut Vec<u32>| {
            *compact.entry(s).or_insert_with(|| {
                states.push(s);
                states.len() - 1
            })
        };
        let mut counts: HashMap<(usize, usize), HashMap<usize, u64>> = HashMap::new();
        let mut d0: HashMap<usize, f64> = HashMap::new();
        for &i in idx {
            let s0 = intern(self.initials[i], &mut compact, &mut states);
            *d0.entry(s0).or_insert(0.0) += 1.0;
            for &(sa, ns) in &self.transitions[i] {
                let s = intern(sa / na as u32, &mut compact, &mut states);
                let a = (sa % na as u32) as usize;
                let n = intern(ns, &mut compact, &mut states);
                *counts.entry((s, a)).or_default().entry(n).or_insert(0) += 1;
            }
        }
        let rows: HashMap<(usize, usize), Vec<(usize, f64)>> = counts
            .into_iter()
            .map(|((s, a), m)| {
                let total: u64 = m.values().sum();
                let row = m
                    .into_iter()
                    .map(|(n, c)| (n, c as f64 / total as f64))
                    .collect();
                ((s, a), row)
            })
            .collect();
        let nc = states.len();
        let mut v_next = vec![0.0; nc];
        let mut v_cur = vec![0.0; nc];
        for _t in (0..self.spec.horizon).rev() {
            for (c, &raw_s) in states.iter().enumerate() {
                let s = raw_s as usize;
                let mut vs = 0.0;
                for a in 0..na {
                    let q = match rows.get(&(c, a)) {
                        Some(row) => {
                            let mut future = 0.0;
                            for &(n, p) in row {
                                future += p * v_next[n];
                            }
                            self.reward[s][a] + self.spec.gamma * future
                        }
                        None => self.reward[s][a] + self.spec.gamma * v_next[c],
                    };
                    vs += self.pi_rows[s][a] * q;
                }
                v_cur[c] = vs;
            }
            std::mem::swap(&mut v_cur, &mut v_next);
        }
        let n = idx.len() as f64;
        d0.iter().map(|(&c, &w)| w / n * v_next[c]).sum()
    }
}

impl PreparedEstimator for MbTabular {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn n(&self) -> usize {
        self.transitions.len()
    }

    fn estimate(&self, idx: &[usize], _path: &[u64]) -> Result<f64> {
        if idx.is_empty() {
            return Err(HcopeError::Config("empty index set".into()));
        }
        Ok(self.evaluate(idx))
    }
}

/// MB on continuous data: refit the regression from merged per-trajectory
/// moments, then roll out pi_e inside the model.
struct MbContinuous<'a> {
    name: String,
    moments: Vec<RegressionMoments>,
    initials: Vec<Vec<f64>>,
    feature_map: FeatureMap,
    state_dim: usize,
    action_dim: usize,
    pi_e: &'a Policy,
    env: &'a dyn Environment,
    rollouts: usize,
    master_seed: u64,
    bounds: Option<StateBounds>,
}

impl MbContinuous<'_> {
    fn fit(&self, idx: &[usize]) -> Result<LinearGaussianModel> {
        let feat_dim = self.feature_map.dim(self.state_dim, self.action_dim);
        let mut merged = RegressionMoments::zeros(feat_dim, self.state_dim);
        for &i in idx {
            merged.add(&self.moments[i]);
        }
        let (init_mean, init_cov) = fit_initial_gaussian(&self.initials, idx, self.state_dim);
        LinearGaussianModel::from_moments(
            &merged,
            self.feature_map,
            self.state_dim,
            self.action_dim,
            init_mean,
            init_cov,
        )
    }
}

impl PreparedEstimator for MbContinuous<'_> {
    fn name(&self) -> String {
        self.name.clone()
    }

    fn n(&self) -> usize {
        self.moments.len()
    }

    fn estimate(&self, idx: &[usize], path: &[u64]) -> Result<f64> {
        let model = self.fit(idx)?;
        mb_continuous_with_model(
            &model,
            &self.initials,
            idx,
            self.pi_e,
            self.env,
            self.rollouts,
            self.master_seed,
            self.bounds.as_ref(),
            path,
        )
    }
}

fn tabular_policy(p: &Policy) -> Result<&TabularPolicy> {
    match p {
        Policy::Tabular(t) => Ok(t),
        _ => Err(HcopeError::Config(
            "tabular estimator needs a tabular policy".into(),
        )),
    }
}

fn tabular_dims(env: &dyn Environment) -> Result<(usize, usize)> {
    match (env.state_count(), env.action_count()) {
        (Some(ns), Some(na)) => Ok((ns, na)),
        _ => Err(HcopeError::Config(
            "tabular model class on a continuous environment".into(),
        )),
    }
}

fn continuous_dims(ds: &Dataset) -> Result<(usize, usize)> {
    let first = ds
        .trajectories
        .first()
        .ok_or_else(|| HcopeError::Config("empty dataset".into()))?;
    match (
        first.steps[0].state.continuous(),
        first.steps[0].action.continuous(),
    ) {
        (Some(s), Some(a)) => Ok((s.len(), a.len())),
        _ => Err(HcopeError::Config(
            "regression model class on a discrete dataset".into(),
        )),
    }
}

fn per_trajectory_transitions(
    ds: &Dataset,
    n_states: usize,
    n_actions: usize,
) -> Result<(Vec<Vec<(u32, u32)>>, Vec<u32>)> {
    let mut all = Vec::with_capacity(ds.trajectories.len());
    let mut initials = Vec::with_capacity(ds.trajectories.len());
    for traj in &ds.trajectories {
        let s0 = traj.steps[0]
            .state
            .discrete()
            .filter(|&s| s < n_states)
            .ok_or_else(|| HcopeError::DimensionMismatch("bad state index".into()))?;
        initials.push(s0 as u32);
        let mut list = Vec::with_capacity(traj.len());
        for (s, a, next) in traj.transitions() {
            let si = s
                .discrete()
                .filter(|&x| x < n_states)
                .ok_or_else(|| HcopeError::DimensionMismatch("bad state index".into()))?;
            let ai = a
                .discrete()
                .filter(|&x| x < n_actions)
                .ok_or_else(|| HcopeError::DimensionMismatch("bad action index".into()))?;
            let ni = next
                .discrete()
                .filter(|&x| x < n_states)
                .ok_or_else(|| HcopeError::DimensionMismatch("bad state index".into()))?;
            list.push(((si * n_actions + ai) as u32, ni as u32));
        }
        all.push(list);
    }
    Ok((all, initials))
}

/// Bind an estimator to a dataset. Weights and (for DR/WDR) the single model
/// and its value functions are computed here, once.
pub fn prepare<'a>(
    kind: EstimatorKind,
    ds: &Dataset,
    pi_e: &'a Policy,
    pi_b: &'a Policy,
    env: &'a dyn Environment,
    cfg: &EstimatorConfig,
) -> Result<Box<dyn PreparedEstimator + 'a>> {
    let spec = env.spec();
    match kind {
        EstimatorKind::Is | EstimatorKind::Pdis | EstimatorKind::Wis | EstimatorKind::Pdwis => {
            let data = IsData::prepare(ds, pi_e, pi_b, &spec)?;
            Ok(Box::new(IsFamily { kind, data }))
        }
        EstimatorKind::Mb(ModelClass::Tabular) => {
            let (ns, na) = tabular_dims(env)?;
            let pi = tabular_policy(pi_e)?;
            let (transitions, initials) = per_trajectory_transitions(ds, ns, na)?;
            Ok(Box::new(MbTabular {
                name: kind.to_string(),
                transitions,
                initials,
                reward: env_reward_table(env)?,
                pi_rows: (0..ns).map(|s| pi.row(s).to_vec()).collect(),
                spec,
                n_actions: na,
            }))
        }
        EstimatorKind::Mb(mc) => {
            let feature_map = mc.feature_map().expect("regression class");
            let (state_dim, action_dim) = continuous_dims(ds)?;
            let per_traj = trajectory_moments(ds, feature_map, state_dim, action_dim)?;
            let (moments, initials): (Vec<_>, Vec<_>) = per_traj.into_iter().unzip();
            Ok(Box::new(MbContinuous {
                name: kind.to_string(),
                moments,
                initials,
                feature_map,
                state_dim,
                action_dim,
                pi_e,
                env,
                rollouts: cfg.mb_rollouts,
                master_seed: cfg.master_seed,
                bounds: StateBounds::from_env(env).or_else(|| StateBounds::from_dataset(ds)),
            }))
        }
        EstimatorKind::Dr(mc) | EstimatorKind::Wdr(mc) => {
            let weighted = matches!(kind, EstimatorKind::Wdr(_));
            let data = IsData::prepare(ds, pi_e, pi_b, &spec)?;
            let table = match mc {
                ModelClass::Tabular => {
                    let (ns, na) = tabular_dims(env)?;
                    let pi = tabular_policy(pi_e)?;
                    let model = learn_tabular(ds, ns, na)?;
                    let reward = env_reward_table(env)?;
                    let vf = value_iteration(&model, &reward, pi, spec.gamma, spec.horizon);
                    ValueTable::from_tabular(ds, &vf, pi, &spec)?
                }
                _ => {
                    let feature_map = mc.feature_map().expect("regression class");
                    continuous_dims(ds)?;
                    let model = learn_regression(ds, feature_map)?;
                    let ev = McValueEvaluator {
                        model: &model,
                        env,
                        pi_e,
                        rollouts: cfg.vf_rollouts,
                        master_seed: cfg.master_seed,
                        bounds: StateBounds::from_env(env).or_else(|| StateBounds::from_dataset(ds)),
                    };
                    ValueTable::from_mc(ds, &ev, &spec)?
                }
            };
            Ok(Box::new(DoublyRobust {
                kind,
                data,
                table,
                weighted,
            }))
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::env::{sample_dataset, MountainCarEnv, TabularEnv};
    use crate::model::mb_tabular;
    use crate::tabular::micro;

    #[test]
    fn kind_round_trips_through_strings() {
        let kinds = [
            "is", "pdis", "wis", "pdwis", "mb-tabular", "mb-lr", "mb-pr", "dr-tabular", "dr-lr",
            "dr-pr", "wdr-tabular", "wdr-lr", "wdr-pr",
        ];
        for k in kinds {
            let parsed: EstimatorKind = k.parse().unwrap();
            assert_eq!(parsed.to_string(), k);
        }
        assert!("magic".parse::<EstimatorKind>().is_err());
        assert!("mb-neural".parse::<EstimatorKind>().is_err());
    }

    #[test]
    fn prepared_is_matches_direct_functions() {
        let case = micro::web4();
        let spec = case.mdp.spec();
        let env = TabularEnv::new(case.mdp, "micro");
        let pi_e = Policy::Tabular(case.pi_e);
        let pi_b = Policy::Tabular(case.pi_b);
        let ds = sample_dataset(&env, &pi_b, "b", 10, 3).unwrap();
        let cfg = EstimatorConfig::default();
        let idx: Vec<usize> = (0..10).collect();
        let data = IsData::prepare(&ds, &pi_e, &pi_b, &spec).unwrap();
        for (kind, expect) in [
            (EstimatorKind::Is, data.is(&idx).unwrap()),
            (EstimatorKind::Pdis, data.pdis(&idx).unwrap()),
            (EstimatorKind::Wis, data.wis(&idx).unwrap()),
            (EstimatorKind::Pdwis, data.pdwis(&idx).unwrap()),
        ] {
            let prep = prepare(kind, &ds, &pi_e, &pi_b, &env, &cfg).unwrap();
            assert_eq!(prep.estimate(&idx, &[]).unwrap(), expect);
        }
    }

    #[test]
    fn mb_tabular_full_dataset_matches_reference_path() {
        let case = micro::loop3();
        let env = TabularEnv::new(case.mdp, "micro");
        let pi_e = Policy::Tabular(case.pi_e.clone());
        let pi_b = Policy::Tabular(case.pi_b);
        let ds = sample_dataset(&env, &pi_b, "b", 25, 4).unwrap();
        let cfg = EstimatorConfig::default();
        let prep = prepare(EstimatorKind::Mb(ModelClass::Tabular), &ds, &pi_e, &pi_b, &env, &cfg)
            .unwrap();
        let idx: Vec<usize> = (0..25).collect();
        let via_prep = prep.estimate(&idx, &[]).unwrap();
        let reference = mb_tabular(&ds, &case.pi_e, &env).unwrap();
        assert!(
            (via_prep - reference).abs() < 1e-12,
            "{via_prep} vs {reference}"
        );
    }

    #[test]
    fn mb_tabular_resample_multiplicities_matter() {
        let case = micro::loop3();
        let env = TabularEnv::new(case.mdp, "micro");
        let pi_e = Policy::Tabular(case.pi_e);
        let pi_b = Policy::Tabular(case.pi_b);
        let ds = sample_dataset(&env, &pi_b, "b", 10, 5).unwrap();
        let cfg = EstimatorConfig::default();
        let prep = prepare(EstimatorKind::Mb(ModelClass::Tabular), &ds, &pi_e, &pi_b, &env, &cfg)
            .unwrap();
        let a = prep.estimate(&[0, 0, 0, 1], &[]).unwrap();
        let b = prep.estimate(&[0, 1, 2, 3], &[]).unwrap();
        assert!(a.is_finite() && b.is_finite());
        assert_ne!(a, b);
    }

    #[test]
    fn mb_tabular_compact_dp_matches_dense_on_mountain_car() {
        let env = MountainCarEnv::default();
        let pi_b = Policy::Tabular(env.uniform_policy());
        let pump = env.energy_pump_policy(0.1);
        let pi_e = Policy::Tabular(pump.clone());
        let ds = sample_dataset(&env, &pi_b, "b", 30, 6).unwrap();
        let cfg = EstimatorConfig::default();
        let prep = prepare(EstimatorKind::Mb(ModelClass::Tabular), &ds, &pi_e, &pi_b, &env, &cfg)
            .unwrap();
        let idx: Vec<usize> = (0..30).collect();
        let compact = prep.estimate(&idx, &[]).unwrap();
        let dense = mb_tabular(&ds, &pump, &env).unwrap();
        assert!((compact - dense).abs() < 1e-9, "{compact} vs {dense}");
    }

    #[test]
    fn model_class_environment_mismatch_is_config_error() {
        let case = micro::chain2();
        let env = TabularEnv::new(case.mdp, "micro");
        let pi_e = Policy::Tabular(case.pi_e);
        let pi_b = Policy::Tabular(case.pi_b);
        let ds = sample_dataset(&env, &pi_b, "b", 5, 7).unwrap();
        let cfg = EstimatorConfig::default();
        let err = prepare(
            EstimatorKind::Mb(ModelClass::LinearRegression),
            &ds,
            &pi_e,
            &pi_b,
            &env,
            &cfg,
        )
        .err()
        .unwrap();
        assert!(matches!(err, HcopeError::Config(_) | HcopeError::DimensionMismatch(_)));
    }

    #[test]
    fn wdr_prepared_single_model_reused_across_index_sets() {
        let case = micro::web4();
        let env = TabularEnv::new(case.mdp, "micro");
        let pi_e = Policy::Tabular(case.pi_e);
        let pi_b = Policy::Tabular(case.pi_b);
        let ds = sample_dataset(&env, &pi_b, "b", 12, 8).unwrap();
        let cfg = EstimatorConfig::default();
        let prep = prepare(
            EstimatorKind::Wdr(ModelClass::Tabular),
            &ds,
            &pi_e,
            &pi_b,
            &env,
            &cfg,
        )
        .unwrap();
        let full: Vec<usize> = (0..12).collect();
        let v1 = prep.estimate(&full, &[]).unwrap();
        let v2 = prep.estimate(&full, &[99]).unwrap(); // path must not matter
        assert_eq!(v1, v2);
        assert!(prep.estimate(&full[..6], &[]).unwrap().is_finite());
    }
}
