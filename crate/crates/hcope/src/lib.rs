//! High-confidence off-policy evaluation for episodic MDPs.
//!
//! Given trajectories logged under a behavior policy, this crate computes
//! bootstrap confidence lower bounds on the expected return of a different
//! evaluation policy. Estimators cover the importance-sampling family
//! (IS, PDIS, WIS, PDWIS), direct model-based estimates from learned
//! dynamics models, and doubly robust combinations (DR, WDR), together with
//! computable upper bounds on the bias a learned model can introduce.

pub mod bias;
pub mod bootstrap;
pub mod doubly_robust;
pub mod env;
pub mod importance;
pub mod error;
pub mod estimator;
pub mod experiment;
pub mod mdp;
pub mod model;
pub mod policy;
pub mod seed;
pub mod tabular;

pub use error::{HcopeError, Result};
