//! MDP abstractions: states, actions, trajectories, datasets, returns,
//! return normalization, and dataset persistence.

use std::fmt;
use std::io::{BufRead, BufReader, BufWriter, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::error::{HcopeError, Result};

/// Schema version written to the first line of dataset files.
pub const DATASET_SCHEMA_VERSION: &str = "hcope-dataset-v1";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum State {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl State {
    pub fn discrete(&self) -> Option<usize> {
        match self {
            State::Discrete(i) => Some(*i),
            State::Continuous(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&[f64]> {
        match self {
            State::Discrete(_) => None,
            State::Continuous(v) => Some(v),
        }
    }
}

impl fmt::Display for State {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            State::Discrete(i) => write!(f, "s{i}"),
            State::Continuous(v) => write!(f, "{v:?}"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub enum Action {
    Discrete(usize),
    Continuous(Vec<f64>),
}

impl Action {
    pub fn discrete(&self) -> Option<usize> {
        match self {
            Action::Discrete(i) => Some(*i),
            Action::Continuous(_) => None,
        }
    }

    pub fn continuous(&self) -> Option<&[f64]> {
        match self {
            Action::Discrete(_) => None,
            Action::Continuous(v) => Some(v),
        }
    }
}

/// One time step: the state visited, the action taken there, and the reward
/// received for that (state, action).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Step {
    pub state: State,
    pub action: Action,
    pub reward: f64,
}

/// An ordered state-action-reward history.
///
/// `final_state` is the state entered after the last recorded action, when the
/// simulator observed it; learned dynamics models use it to recover the last
/// transition (in particular the one into a terminal state).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub steps: Vec<Step>,
    pub terminal: bool,
    pub final_state: Option<State>,
}

impl Trajectory {
    pub fn new(steps: Vec<Step>, terminal: bool, final_state: Option<State>) -> Result<Self> {
        if steps.is_empty() {
            return Err(HcopeError::EmptyTrajectory);
        }
        Ok(Trajectory {
            steps,
            terminal,
            final_state,
        })
    }

    pub fn len(&self) -> usize {
        self.steps.len()
    }

    pub fn is_empty(&self) -> bool {
        self.steps.is_empty()
    }

    /// (s_t, a_t, s_{t+1}) transitions observable in this trajectory.
    pub fn transitions(&self) -> impl Iterator<Item = (&State, &Action, &State)> {
        let tail = self
            .steps
            .windows(2)
            .map(|w| (&w[0].state, &w[0].action, &w[1].state));
        let last = self.final_state.iter().map(move |fs| {
            let s = self.steps.last().expect("non-empty trajectory");
            (&s.state, &s.action, fs)
        });
        tail.chain(last)
    }
}

/// A bag of trajectories generated by one behavior policy in one environment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Dataset {
    pub trajectories: Vec<Trajectory>,
    pub behavior_policy_id: String,
    pub env_id: String,
}

impl Dataset {
    pub fn new(trajectories: Vec<Trajectory>, behavior_policy_id: &str, env_id: &str) -> Self {
        Dataset {
            trajectories,
            behavior_policy_id: behavior_policy_id.to_string(),
            env_id: env_id.to_string(),
        }
    }

    pub fn len(&self) -> usize {
        self.trajectories.len()
    }

    pub fn is_empty(&self) -> bool {
        self.trajectories.is_empty()
    }
}

/// Horizon, discount, and reward range of an episodic MDP.
///
/// The reward range is used to shift rewards to a non-negative scale for the
/// normalization and bias-bound paths; user-facing returns stay on the raw
/// scale.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MdpSpec {
    pub gamma: f64,
    pub horizon: usize,
    pub r_min: f64,
    pub r_max: f64,
}

impl MdpSpec {
    pub fn new(gamma: f64, horizon: usize, r_min: f64, r_max: f64) -> Result<Self> {
        if !(0.0..=1.0).contains(&gamma) {
            return Err(HcopeError::Config(format!("gamma {gamma} outside [0,1]")));
        }
        if horizon == 0 {
            return Err(HcopeError::Config("horizon must be positive".into()));
        }
        if r_min > r_max || !r_min.is_finite() || !r_max.is_finite() {
            return Err(HcopeError::Config(format!(
                "invalid reward range [{r_min}, {r_max}]"
            )));
        }
        Ok(MdpSpec {
            gamma,
            horizon,
            r_min,
            r_max,
        })
    }

    /// Sum_{t=0}^{L-1} gamma^t.
    pub fn discount_sum(&self) -> f64 {
        discounted_geometric(self.gamma, self.horizon)
    }

    /// Minimum achievable return Sum_t gamma^t r_min.
    pub fn g_min(&self) -> f64 {
        self.r_min * self.discount_sum()
    }

    /// Maximum achievable return Sum_t gamma^t r_max.
    pub fn g_max(&self) -> f64 {
        self.r_max * self.discount_sum()
    }

    pub fn reward_range(&self) -> f64 {
        self.r_max - self.r_min
    }
}

/// Sum_{t=0}^{n-1} gamma^t.
pub fn discounted_geometric(gamma: f64, n: usize) -> f64 {
    if (gamma - 1.0).abs() < 1e-15 {
        n as f64
    } else {
        (1.0 - gamma.powi(n as i32)) / (1.0 - gamma)
    }
}

/// Discounted return g(H) = Sum_t gamma^t r_t.
pub fn trajectory_return(traj: &Trajectory, gamma: f64) -> Result<f64> {
    if traj.steps.is_empty() {
        return Err(HcopeError::EmptyTrajectory);
    }
    let mut g = 0.0;
    let mut disc = 1.0;
    for step in &traj.steps {
        g += disc * step.reward;
        disc *= gamma;
    }
    Ok(g)
}

/// Map a raw return into [0, 1] via (g - g_min) / (g_max - g_min).
pub fn normalize_return(g: f64, spec: &MdpSpec) -> Result<f64> {
    let (lo, hi) = (spec.g_min(), spec.g_max());
    if hi - lo <= 0.0 {
        return Err(HcopeError::DegenerateRewardRange);
    }
    Ok((g - lo) / (hi - lo))
}

/// Inverse of [`normalize_return`]: recover the raw-scale return.
pub fn denormalize_return(g_norm: f64, spec: &MdpSpec) -> Result<f64> {
    let (lo, hi) = (spec.g_min(), spec.g_max());
    if hi - lo <= 0.0 {
        return Err(HcopeError::DegenerateRewardRange);
    }
    Ok(g_norm * (hi - lo) + lo)
}

/// Map a per-step reward into [0, 1].
pub fn normalize_reward(r: f64, spec: &MdpSpec) -> Result<f64> {
    if spec.reward_range() <= 0.0 {
        return Err(HcopeError::DegenerateRewardRange);
    }
    Ok((r - spec.r_min) / spec.reward_range())
}

// ── Persistence ───────────────────────────────────────────────────────

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    env_id: String,
    behavior_policy_id: String,
}

/// Flat numeric encoding of one trajectory; one JSON record per line.
/// Discrete indices are stored as exact integral f64 values (`state_dim = 0`
/// marks a discrete state, likewise `action_dim`).
#[derive(Serialize, Deserialize)]
struct TrajectoryRecord {
    state_dim: usize,
    action_dim: usize,
    states: Vec<f64>,
    actions: Vec<f64>,
    rewards: Vec<f64>,
    terminal: bool,
    final_state: Option<Vec<f64>>,
}

fn encode_state(s: &State) -> (usize, Vec<f64>) {
    match s {
        State::Discrete(i) => (0, vec![*i as f64]),
        State::Continuous(v) => (v.len(), v.clone()),
    }
}

fn decode_state(dim: usize, flat: &[f64]) -> State {
    if dim == 0 {
        State::Discrete(flat[0] as usize)
    } else {
        State::Continuous(flat.to_vec())
    }
}

impl TrajectoryRecord {
    fn from_trajectory(traj: &Trajectory, line: usize) -> Result<Self> {
        let (state_dim, _) = encode_state(&traj.steps[0].state);
        let action_dim = match &traj.steps[0].action {
            Action::Discrete(_) => 0,
            Action::Continuous(v) => v.len(),
        };
        let swidth = state_dim.max(1);
        let awidth = action_dim.max(1);
        let mut states = Vec::with_capacity(traj.len() * swidth);
        let mut actions = Vec::with_capacity(traj.len() * awidth);
        let mut rewards = Vec::with_capacity(traj.len());
        for step in &traj.steps {
            let (sd, sv) = encode_state(&step.state);
            if sd != state_dim {
                return Err(HcopeError::Parse {
                    line,
                    message: "mixed state kinds within one trajectory".into(),
                });
            }
            states.extend_from_slice(&sv);
            match &step.action {
                Action::Discrete(i) if action_dim == 0 => actions.push(*i as f64),
                Action::Continuous(v) if v.len() == action_dim => actions.extend_from_slice(v),
                _ => {
                    return Err(HcopeError::Parse {
                        line,
                        message: "mixed action kinds within one trajectory".into(),
                    })
                }
            }
            rewards.push(step.reward);
        }
        let final_state = traj.final_state.as_ref().map(|s| encode_state(s).1);
        Ok(TrajectoryRecord {
            state_dim,
            action_dim,
            states,
            actions,
            rewards,
            terminal: traj.terminal,
            final_state,
        })
    }

    fn into_trajectory(self, line: usize) -> Result<Trajectory> {
        let swidth = self.state_dim.max(1);
        let awidth = self.action_dim.max(1);
        let n = self.rewards.len();
        if self.states.len() != n * swidth || self.actions.len() != n * awidth || n == 0 {
            return Err(HcopeError::Parse {
                line,
                message: format!(
                    "inconsistent record: {} states, {} actions, {} rewards",
                    self.states.len(),
                    self.actions.len(),
                    n
                ),
            });
        }
        let steps = (0..n)
            .map(|t| {
                let state = decode_state(self.state_dim, &self.states[t * swidth..(t + 1) * swidth]);
                let action = if self.action_dim == 0 {
                    Action::Discrete(self.actions[t] as usize)
                } else {
                    Action::Continuous(self.actions[t * awidth..(t + 1) * awidth].to_vec())
                };
                Step {
                    state,
                    action,
                    reward: self.rewards[t],
                }
            })
            .collect();
        let final_state = self
            .final_state
            .map(|flat| decode_state(self.state_dim, &flat));
        Ok(Trajectory {
            steps,
            terminal: self.terminal,
            final_state,
        })
    }
}

/// Write a dataset as a schema line, a header record, and one trajectory per
/// line. Numbers survive the round trip bit-exactly.
pub fn save_dataset(ds: &Dataset, path: &Path) -> Result<()> {
    let mut w = BufWriter::new(std::fs::File::create(path)?);
    writeln!(w, "{DATASET_SCHEMA_VERSION}")?;
    let header = DatasetHeader {
        env_id: ds.env_id.clone(),
        behavior_policy_id: ds.behavior_policy_id.clone(),
    };
    writeln!(w, "{}", serde_json::to_string(&header).expect("header json"))?;
    for (i, traj) in ds.trajectories.iter().enumerate() {
        let rec = TrajectoryRecord::from_trajectory(traj, i + 3)?;
        writeln!(w, "{}", serde_json::to_string(&rec).expect("record json"))?;
    }
    w.flush()?;
    Ok(())
}

pub fn load_dataset(path: &Path) -> Result<Dataset> {
    let reader = BufReader::new(std::fs::File::open(path)?);
    let mut lines = reader.lines().enumerate();
    let (_, schema) = lines.next().ok_or(HcopeError::Parse {
        line: 1,
        message: "empty file".into(),
    })?;
    let schema = schema?;
    if schema.trim() != DATASET_SCHEMA_VERSION {
        return Err(HcopeError::Parse {
            line: 1,
            message: format!("unknown schema version {schema:?}"),
        });
    }
    let (_, header_line) = lines.next().ok_or(HcopeError::Parse {
        line: 2,
        message: "missing header".into(),
    })?;
    let header_line = header_line?;
    let header: DatasetHeader =
        serde_json::from_str(&header_line).map_err(|e| HcopeError::Parse {
            line: 2,
            message: e.to_string(),
        })?;
    let mut trajectories = Vec::new();
    for (idx, line) in lines {
        let line_no = idx + 1;
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        let rec: TrajectoryRecord =
            serde_json::from_str(&line).map_err(|e| HcopeError::Parse {
                line: line_no,
                message: e.to_string(),
            })?;
        trajectories.push(rec.into_trajectory(line_no)?);
    }
    Ok(Dataset {
        trajectories,
        behavior_policy_id: header.behavior_policy_id,
        env_id: header.env_id,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use approx::assert_relative_eq;

    fn traj(rewards: &[f64]) -> Trajectory {
        let steps = rewards
            .iter()
            .map(|&r| Step {
                state: State::Discrete(0),
                action: Action::Discrete(0),
                reward: r,
            })
            .collect();
        Trajectory::new(steps, false, None).unwrap()
    }

    #[test]
    fn return_zero_rewards() {
        assert_eq!(trajectory_return(&traj(&[0.0, 0.0, 0.0]), 0.7).unwrap(), 0.0);
    }

    #[test]
    fn return_undiscounted_sum() {
        assert_eq!(trajectory_return(&traj(&[1.0, 1.0, 1.0]), 1.0).unwrap(), 3.0);
    }

    #[test]
    fn return_discounted_hand_sum() {
        // 1 + 0.5 + 0.25
        assert_relative_eq!(
            trajectory_return(&traj(&[1.0, 1.0, 1.0]), 0.5).unwrap(),
            1.75
        );
    }

    #[test]
    fn return_empty_is_error() {
        let t = Trajectory {
            steps: vec![],
            terminal: false,
            final_state: None,
        };
        assert!(matches!(
            trajectory_return(&t, 1.0),
            Err(HcopeError::EmptyTrajectory)
        ));
    }

    #[test]
    fn normalize_endpoints() {
        let spec = MdpSpec::new(1.0, 100, -1.0, 0.0).unwrap();
        assert_eq!(normalize_return(spec.g_min(), &spec).unwrap(), 0.0);
        assert_eq!(normalize_return(spec.g_max(), &spec).unwrap(), 1.0);
    }

    #[test]
    fn normalize_mountain_car_example() {
        // gamma=1, L=100, r in [-1, 0]: raw return -35 maps to 0.65.
        let spec = MdpSpec::new(1.0, 100, -1.0, 0.0).unwrap();
        assert_relative_eq!(normalize_return(-35.0, &spec).unwrap(), 0.65);
    }

    #[test]
    fn normalize_degenerate_range() {
        let spec = MdpSpec::new(1.0, 10, 0.5, 0.5).unwrap();
        assert!(matches!(
            normalize_return(0.5, &spec),
            Err(HcopeError::DegenerateRewardRange)
        ));
    }

    #[test]
    fn dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let mut t2 = traj(&[0.25, -1.5e-17]);
        t2.terminal = true;
        t2.final_state = Some(State::Discrete(3));
        let ds = Dataset::new(
            vec![traj(&[1.0]), t2, traj(&[std::f64::consts::PI])],
            "pi-b",
            "micro",
        );
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert_eq!(ds, loaded);
    }

    #[test]
    fn dataset_round_trip_continuous() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("ds.jsonl");
        let steps = vec![Step {
            state: State::Continuous(vec![0.1, -0.2, 0.3, 0.4]),
            action: Action::Continuous(vec![1.0 / 3.0, -2.0 / 7.0]),
            reward: -3.25,
        }];
        let ds = Dataset::new(
            vec![Trajectory::new(steps, false, Some(State::Continuous(vec![0.0; 4]))).unwrap()],
            "b",
            "cliff-world-v0",
        );
        save_dataset(&ds, &path).unwrap();
        assert_eq!(load_dataset(&path).unwrap(), ds);
    }

    #[test]
    fn empty_dataset_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("empty.jsonl");
        let ds = Dataset::new(vec![], "b", "e");
        save_dataset(&ds, &path).unwrap();
        let loaded = load_dataset(&path).unwrap();
        assert!(loaded.is_empty());
        assert_eq!(loaded.env_id, "e");
    }

    #[test]
    fn truncated_file_reports_line() {
        let dir = tempfile::tempdir().unwrap();
        let path = dir.path().join("bad.jsonl");
        let ds = Dataset::new(vec![traj(&[1.0]), traj(&[2.0])], "b", "e");
        save_dataset(&ds, &path).unwrap();
        let mut text = std::fs::read_to_string(&path).unwrap();
        text.truncate(text.len() - 20);
        std::fs::write(&path, text).unwrap();
        match load_dataset(&path) {
            Err(HcopeError::Parse { line, .. }) => assert_eq!(line, 4),
            other => panic!("expected parse error, got {other:?}"),
        }
    }

    #[test]
    fn transitions_include_final_state() {
        let mut t = traj(&[1.0, 1.0]);
        t.final_state = Some(State::Discrete(9));
        let trans: Vec<_> = t.transitions().collect();
        assert_eq!(trans.len(), 2);
        assert_eq!(trans[1].2, &State::Discrete(9));
    }
}
