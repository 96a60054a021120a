//! Fairness workbench for binary classifiers on tabular data.
//!
//! The crate is organised around the audit loop: load a [`dataset::Dataset`],
//! train a population of classical models ([`sweep`]), score them with group
//! and counterfactual metrics ([`metrics`], [`sampler`]), explain individual
//! predictions with a local surrogate ([`explain`]), then mask proxy
//! categories and retrain ([`remedy`]). Everything persists through [`store`].

pub mod audit;
pub mod dataset;
pub mod explain;
pub mod metrics;
pub mod models;
pub mod predictor;
pub mod remedy;
pub mod sampler;
pub mod seed;
pub mod store;
pub mod sweep;
pub mod synthetic;

mod error;

pub use error::{Error, Result};
pub use predictor::Predictor;
