//! Evaluation statistics and experiment orchestration.

mod stats;
mod sweep;

pub use stats::{bootstrap_ci, iqm, median, performance_profile, rmae};
pub use sweep::{
    build_env, default_beta_grid, derive_seed, run_sweep, run_sweep_with, Algorithm,
    AlgorithmConfig, AlgorithmSummary, DatasetConfig, EnvConfig, EvalReport, ExperimentConfig,
    FeatureConfig, RunArtifacts, RunRecord, SweepEnv, REPORT_SCHEMA_VERSION,
};
