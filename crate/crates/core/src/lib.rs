//! Pessimistic Bayesian policy learning for offline contextual bandits and
//! finite-horizon dynamic treatment regimes.

pub mod baselines;
pub mod blbm;
pub mod bnn;
pub mod data;
pub mod dtr;
pub mod envs;
pub mod error;
pub mod evaluation;
pub mod features;
pub mod learner;
pub mod model;
pub mod numerics;
pub mod pessimism;
pub mod posterior;

pub use error::{PblError, Result};
