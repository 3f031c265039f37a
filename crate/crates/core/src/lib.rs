//! Genetic-programming construction of interpretable composite features for
//! tabular classification.
//!
//! The library evolves expression trees over base feature columns, scores
//! each candidate by augmenting the feature set of a gradient-boosted-tree
//! classifier, and emits run logs suitable for anytime-trajectory and
//! co-occurrence analysis.

pub mod analysis;
pub mod classifier;
pub mod cli;
pub mod data;
pub mod engine;
pub mod error;
pub mod exprtree;
pub mod fitness;

pub use error::Error;
