//! Learned dynamics models and their value functions.

pub mod regression;
pub mod tabular;
pub mod value;

pub use regression::{
    fit_initial_gaussian, learn_regression, trajectory_moments, FeatureMap, LinearGaussianModel,
    RegressionMoments,
};
pub use tabular::{learn_tabular, TabularModel};
pub use value::{
    env_reward_table, mb_continuous_with_model, mb_from_model, mb_tabular, model_rollout_return,
    value_iteration, McValueEvaluator, StateBounds, TabularVf,
};
