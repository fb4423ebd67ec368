//! Crate-wide error type.

use thiserror::Error;

#[derive(Debug, Error)]
pub enum HcopeError {
    #[error("empty trajectory")]
    EmptyTrajectory,

    #[error("degenerate reward range: r_min == r_max")]
    DegenerateRewardRange,

    #[error("behavior support violation: pi_b(a|s) = 0 at trajectory {trajectory}, step {step}")]
    SupportViolation { trajectory: usize, step: usize },

    #[error("all importance weights zero at step {step}")]
    ZeroWeightColumn { step: usize },

    #[error("dimension mismatch: {0}")]
    DimensionMismatch(String),

    #[error("underdetermined regression: {transitions} transitions for {features} features")]
    UnderdeterminedRegression { transitions: usize, features: usize },

    #[error("infinite KL divergence: model assigns zero probability on the support of the true distribution")]
    InfiniteKl,

    #[error("model assigns zero probability to observed transition at trajectory {trajectory}, step {step}")]
    ZeroModelProbability { trajectory: usize, step: usize },

    #[error("enumeration budget exceeded: {count} trajectories (limit {limit})")]
    EnumerationBudget { count: f64, limit: f64 },

    #[error("{failed} of {total} bootstrap resamples failed (over 1% tolerance): {reason}")]
    ResampleFailures {
        failed: usize,
        total: usize,
        reason: String,
    },

    #[error("parse error at line {line}: {message}")]
    Parse { line: usize, message: String },

    #[error("config error: {0}")]
    Config(String),

    #[error("numeric failure: {0}")]
    Numeric(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}

impl HcopeError {
    /// CLI exit code: 2 config/usage, 3 support violation, 4 numeric failure.
    pub fn exit_code(&self) -> i32 {
        match self {
            HcopeError::Config(_) | HcopeError::Parse { .. } | HcopeError::Io(_) => 2,
            HcopeError::SupportViolation { .. } => 3,
            _ => 4,
        }
    }
}

pub type Result<T> = std::result::Result<T, HcopeError>;
