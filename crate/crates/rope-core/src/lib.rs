//! Workbench for off-policy evaluation with behavioral state-action
//! similarity metrics.
//!
//! The crate is organized around five layers:
//!
//! - [`mdp`]: tabular MDPs, exact policy evaluation, rollouts, datasets.
//! - [`metric`]: dynamic-programming solvers for four behavioral metrics
//!   over state-action pairs, zero-distance grouping, and property checks.
//! - [`aggregation`]: epsilon-neighborhood clustering, the induced
//!   clustered Markov reward process, and value-gap bound verification.
//! - [`neural`]: a small feed-forward stack with reverse-mode gradients,
//!   the metric encoder trained from a fixed dataset, and fitted
//!   Q-evaluation variants with EMA target networks.
//! - [`eval`]: RMAE/IQM statistics, bootstrap confidence intervals,
//!   performance profiles, and multi-seed experiment sweeps.
//!
//! With the default `parallel` feature, metric sweeps and experiment runs
//! use a rayon pool; results are bit-identical to the sequential fallback.

pub mod aggregation;
pub mod error;
pub mod eval;
pub mod mdp;
pub mod metric;
pub mod neural;
pub(crate) mod par;

pub use error::{Error, Result};
