//! Estimation of average treatment effects on absolute risk at a fixed time
//! horizon from right-censored competing-risks data.
//!
//! The crate fits working regression models for the outcome (cause-specific
//! Cox), censoring (Cox) and treatment (logistic) mechanisms, composes them
//! into absolute-risk predictions, and evaluates G-formula, inverse
//! probability weighted and doubly robust estimators of the risk difference
//! at a horizon, with influence-function-based variances. A simulation
//! laboratory generates benchmark datasets and runs bias/coverage
//! experiments; its replicate loop is data-parallel (rayon) behind the
//! `parallel` feature, with a sequential fallback.

pub mod ate;
pub mod cox;
pub mod dataset;
pub mod error;
pub mod exec;
pub mod inference;
pub mod linalg;
pub mod logistic;
pub mod report;
pub mod risk;
pub mod simlab;
pub mod stats;
pub mod step;

pub use error::{Error, Result};
