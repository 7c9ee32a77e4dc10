//! Explaining why an observed label deviates from a reference value.
//!
//! The pipeline recovers the most probable feature vector for a reference
//! label (the sample mean or a mode of the label distribution) by maximizing
//! a log-posterior over features, then splits the deviation between the
//! observation and that reference point into per-feature ANOVA terms.
//! Dividing each term by the total deviation gives the responsible scores,
//! which are reported next to interventional Shapley values.
//!
//! Modules, bottom-up:
//!
//! - [`dataset`]: data model, synthetic multimodal generator, CSV ingestion, splitting
//! - [`models`]: linear least squares and gradient-boosted trees, residual statistics
//! - [`mixtures`]: 1-D Gaussian mixtures by EM, mode finding, z-scores, feature priors
//! - [`inverse`]: log-posterior, multistart MAP search, run-count bound
//! - [`anova`]: Monte Carlo ANOVA effects and deviation decomposition
//! - [`attribution`]: responsible scores, Shapley values, explanation reports
//!
//! Inner loops (restarts, background rows, coalitions) run on rayon when the
//! `parallel` feature is enabled (the default) and sequentially otherwise.
//! Results are identical either way: every parallel map collects in index
//! order and every reduction is a fixed-order sum.

pub mod anova;
pub mod attribution;
pub mod dataset;
pub mod error;
pub mod inverse;
pub mod mixtures;
pub mod models;
pub mod optim;
pub mod par;
pub mod rng;
pub mod svg;

pub use error::{Error, Result};
