//! Learned per-sample routing between an AI classifier and a pool of noisy
//! human annotators.
//!
//! For every input the system picks one of `2M + 1` collaboration modes: the
//! AI alone, the AI complemented by `k` users, or deferral to `k` users. The
//! selection network and the fusion network are trained jointly on
//! multi-rater noisy labels with a cost-weighted objective.
//!
//! Modules, bottom-up:
//!
//! - [`numerics`]: MLPs, softmax/cross-entropy, Gumbel-Softmax, SGD.
//! - [`taskgen`]: synthetic Gaussian tasks and simulated annotator pools.
//! - [`consensus`]: consensus training labels with quality filtering.
//! - [`basemodel`]: the frozen AI classifier.
//! - [`collab`]: selection/collaboration modules, loss, training, inference.
//! - [`eval`]: cost–accuracy curves, λ sweeps, ablations, baselines.

pub mod basemodel;
pub mod bundle;
pub mod collab;
pub mod consensus;
mod error;
pub mod eval;
pub mod numerics;
pub mod taskgen;

pub use error::{Error, Result};
