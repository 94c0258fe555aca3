//! Synthetic causal data for continuous treatments, a histogram-likelihood
//! toolkit, evaluation metrics and a small in-context learner.

pub mod alt_priors;
pub mod cli;
pub mod dataset;
pub mod error;
pub mod eval;
pub mod model;
pub mod ppd;
pub mod prior;
pub mod rng;
pub mod scenario;
pub mod stats;

pub use dataset::Dataset;
pub use error::{Error, Result};
