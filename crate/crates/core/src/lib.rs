//! Q-posterior inference: a Gaussian synthetic likelihood on the score
//! equations of a model, with pseudo-marginal samplers for latent-variable
//! models and a replication harness for coverage studies.

pub mod error;
pub mod estimators;
pub mod experiments;
pub mod kernel;
pub mod models;
pub mod panel;
pub mod params;
pub mod samplers;
pub mod selftest;
pub mod special;
pub mod summary;
pub mod weight;

pub use error::{QError, Result};
