//! Inference attacks on anonymized tabular data.
//!
//! Two attacks share one Naive Bayes model of the population:
//!
//! * the naive attack learns the model from a differentially private release
//!   of per-attribute joint counts ([`mechanism`], [`classifier`]);
//! * the deFinetti attack learns it from an Anatomy release by Metropolis
//!   sampling over within-group assignments ([`anatomy`], [`definetti`]).
//!
//! [`harness`] runs both as seeded experiments and writes CSV result tables.

pub mod anatomy;
pub mod classifier;
pub mod dataset;
pub mod definetti;
pub mod error;
pub mod harness;
pub mod mechanism;
pub mod seeding;
pub mod workload;

pub use error::{Error, Result};
