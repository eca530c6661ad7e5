//! Multi-seed experiment sweeps comparing estimator variants, with
//! deterministic seed derivation, a parallel run pool, and serial
//! aggregation into an evaluation report.

use serde::{Deserialize, Serialize};

use super::stats::{bootstrap_ci, iqm, performance_profile, rmae};
use crate::error::{Error, Result};
use crate::mdp::{
    build_gridworld, build_random_mdp, build_random_policy, generate_dataset, policy_evaluation_q,
    policy_value, PolicyTable, TabularMdp, TransitionDataset, DEFAULT_EPISODE_CAP,
};
use crate::neural::{
    fqe_train, initial_weights, rope_train, DenseNet, EncoderNetwork, FeatureMap, QInput,
    TrainConfig, TrainLog,
};
use crate::par::map_indexed;

pub const REPORT_SCHEMA_VERSION: u32 = 1;

/// DP tolerance used for the ground-truth policy values inside sweeps.
const DP_TOL: f64 = 1e-10;
const DP_MAX_ITER: usize = 1_000_000;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum EnvConfig {
    Gridworld,
    /// Random dense MDP; the evaluation policy is a seeded random policy and
    /// the behavior policy is uniform.
    RandomMdp {
        n_states: usize,
        n_actions: usize,
        gamma: f64,
        seed: u64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum DatasetConfig {
    /// Roll out the behavior policy.
    Generate {
        n_transitions: usize,
        seed: u64,
        #[serde(default = "default_episode_cap")]
        episode_cap: usize,
    },
    /// Load a dataset file written by `make-dataset`.
    Path { path: String },
}

fn default_episode_cap() -> usize {
    DEFAULT_EPISODE_CAP
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case")]
pub enum FeatureConfig {
    OneHot,
    Redundant {
        noise_dims: usize,
        seed: u64,
    },
    /// Rebuild the per-state table from feature vectors embedded in the
    /// dataset file.
    FromDataset,
}

/// Estimator variants the sweep knows how to run.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Algorithm {
    Fqe,
    FqeClip,
    FqeDeep,
    RopeFqe,
}

impl Algorithm {
    pub fn name(&self) -> &'static str {
        match self {
            Algorithm::Fqe => "fqe",
            Algorithm::FqeClip => "fqe-clip",
            Algorithm::FqeDeep => "fqe-deep",
            Algorithm::RopeFqe => "rope-fqe",
        }
    }
}

impl std::str::FromStr for Algorithm {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "fqe" => Ok(Algorithm::Fqe),
            "fqe-clip" => Ok(Algorithm::FqeClip),
            "fqe-deep" => Ok(Algorithm::FqeDeep),
            "rope-fqe" => Ok(Algorithm::RopeFqe),
            other => Err(Error::validation(format!("unknown algorithm '{other}'"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmConfig {
    pub algorithm: Algorithm,
    /// Angular-weight grid swept by `rope-fqe`.
    #[serde(default = "default_beta_grid")]
    pub beta_grid: Vec<f64>,
    /// Encoder output dimension grid, used by `rope-fqe`.
    #[serde(default)]
    pub output_dim_grid: Vec<usize>,
}

pub fn default_beta_grid() -> Vec<f64> {
    vec![0.1, 1.0, 10.0]
}

impl AlgorithmConfig {
    pub fn plain(algorithm: Algorithm) -> Self {
        AlgorithmConfig {
            algorithm,
            beta_grid: default_beta_grid(),
            output_dim_grid: vec![],
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub env: EnvConfig,
    pub dataset: DatasetConfig,
    pub features: FeatureConfig,
    pub algorithms: Vec<AlgorithmConfig>,
    pub seeds: Vec<u64>,
    /// Shared Q-regression config; all variants train with it.
    pub fqe: TrainConfig,
    /// Encoder pretraining config for `rope-fqe`.
    pub encoder: TrainConfig,
    #[serde(default = "default_thresholds")]
    pub profile_thresholds: Vec<f64>,
    #[serde(default = "default_resamples")]
    pub bootstrap_resamples: usize,
    #[serde(default)]
    pub bootstrap_seed: u64,
    #[serde(default = "default_level")]
    pub bootstrap_level: f64,
}

fn default_thresholds() -> Vec<f64> {
    (1..=40).map(|i| i as f64 * 0.05).collect()
}

fn default_resamples() -> usize {
    2_000
}

fn default_level() -> f64 {
    0.95
}

/// One executed run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub algorithm: String,
    pub hyperparams: String,
    pub seed: u64,
    /// Final estimate; for diverged runs, the last finite checkpoint.
    pub estimate: Option<f64>,
    pub rmae: Option<f64>,
    pub diverged: bool,
    /// `(step, estimate)` checkpoints.
    pub trace: Vec<(usize, f64)>,
    /// Populated when the run failed outright.
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlgorithmSummary {
    pub algorithm: String,
    /// IQM of RMAE pooled over all hyperparameters and seeds.
    pub pooled_iqm_rmae: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
    /// Grid point minimizing the per-point IQM of final RMAE.
    pub best_point: String,
    pub best_point_iqm_rmae: f64,
    /// `(threshold, fraction of runs with rmae below it)`.
    pub profile: Vec<(f64, f64)>,
    pub n_runs: usize,
    pub n_diverged: usize,
    pub n_failed: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub schema_version: u32,
    pub rho_e: f64,
    pub rho_rand: f64,
    pub runs: Vec<RunRecord>,
    pub summaries: Vec<AlgorithmSummary>,
}

impl EvalReport {
    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)?)
    }

    /// CSV with one row per run.
    pub fn runs_csv(&self) -> String {
        let mut out = String::from("algorithm,hyperparams,seed,rmae,diverged\n");
        for r in &self.runs {
            out.push_str(&format!(
                "{},{},{},{},{}\n",
                r.algorithm,
                r.hyperparams,
                r.seed,
                r.rmae.map(|v| v.to_string()).unwrap_or_default(),
                r.diverged
            ));
        }
        out
    }

    /// CSV of the per-algorithm profile curves.
    pub fn profile_csv(&self) -> String {
        let mut out = String::from("algorithm,threshold,fraction\n");
        for s in &self.summaries {
            for (t, f) in &s.profile {
                out.push_str(&format!("{},{},{}\n", s.algorithm, t, f));
            }
        }
        out
    }

    /// RMAE values of one algorithm, pooled over hyperparameters and seeds.
    pub fn rmae_values(&self, algorithm: &str) -> Vec<f64> {
        self.runs
            .iter()
            .filter(|r| r.algorithm == algorithm)
            .filter_map(|r| r.rmae)
            .collect()
    }
}

/// The fully materialized environment of a sweep.
pub struct SweepEnv {
    pub mdp: TabularMdp,
    pub pi_e: PolicyTable,
    pub pi_b: PolicyTable,
    pub rho_e: f64,
    pub rho_rand: f64,
}

/// Materialize the env, its policies, and the DP ground truth.
pub fn build_env(env: &EnvConfig) -> Result<SweepEnv> {
    let (mdp, pi_e, pi_b) = match env {
        EnvConfig::Gridworld => {
            let gw = build_gridworld();
            (gw.mdp, gw.pi_e, gw.pi_b)
        }
        EnvConfig::RandomMdp {
            n_states,
            n_actions,
            gamma,
            seed,
        } => {
            let mdp = build_random_mdp(*n_states, *n_actions, *gamma, *seed)?;
            let pi_e = build_random_policy(*n_states, *n_actions, seed.wrapping_add(1))?;
            let pi_b = PolicyTable::uniform(*n_states, *n_actions);
            (mdp, pi_e, pi_b)
        }
    };
    let q_e = policy_evaluation_q(&mdp, &pi_e, DP_TOL, DP_MAX_ITER)?;
    let rho_e = policy_value(&mdp, &pi_e, &q_e);
    let uniform = PolicyTable::uniform(mdp.n_states, mdp.n_actions);
    let q_rand = policy_evaluation_q(&mdp, &uniform, DP_TOL, DP_MAX_ITER)?;
    let rho_rand = policy_value(&mdp, &uniform, &q_rand);
    Ok(SweepEnv {
        mdp,
        pi_e,
        pi_b,
        rho_e,
        rho_rand,
    })
}

fn materialize_dataset(cfg: &DatasetConfig, env: &SweepEnv) -> Result<TransitionDataset> {
    match cfg {
        DatasetConfig::Generate {
            n_transitions,
            seed,
            episode_cap,
        } => {
            let mut ds =
                generate_dataset(&env.mdp, &env.pi_b, *n_transitions, *seed, *episode_cap)?;
            ds.provenance.behavior = "uniform".to_string();
            Ok(ds)
        }
        DatasetConfig::Path { path } => TransitionDataset::load(path),
    }
}

fn materialize_features(
    cfg: &FeatureConfig,
    env: &SweepEnv,
    dataset: &TransitionDataset,
) -> Result<FeatureMap> {
    match cfg {
        FeatureConfig::OneHot => Ok(FeatureMap::one_hot(env.mdp.n_states, env.mdp.n_actions)),
        FeatureConfig::Redundant { noise_dims, seed } => Ok(FeatureMap::redundant(
            env.mdp.n_states,
            env.mdp.n_actions,
            *noise_dims,
            *seed,
        )),
        FeatureConfig::FromDataset => FeatureMap::from_dataset(dataset),
    }
}

/// FNV-1a combination of strings and numbers into a derived seed, so every
/// (algorithm, grid point, seed) run owns a distinct deterministic stream.
pub fn derive_seed(parts: &[&str], nums: &[u64]) -> u64 {
    let mut hash = 0xcbf2_9ce4_8422_2325_u64;
    let mut eat = |byte: u8| {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
    };
    for p in parts {
        for b in p.as_bytes() {
            eat(*b);
        }
        eat(0xff);
    }
    for n in nums {
        for b in n.to_le_bytes() {
            eat(b);
        }
    }
    hash
}

struct RunSpec {
    algorithm: Algorithm,
    hyperparams: String,
    beta: f64,
    output_dim: usize,
    seed: u64,
}

fn grid_points(algo: &AlgorithmConfig, default_dim: usize) -> Vec<(String, f64, usize)> {
    match algo.algorithm {
        Algorithm::RopeFqe => {
            let dims = if algo.output_dim_grid.is_empty() {
                vec![default_dim]
            } else {
                algo.output_dim_grid.clone()
            };
            let mut points = Vec::new();
            for &beta in &algo.beta_grid {
                for &dim in &dims {
                    points.push((format!("beta={beta},dim={dim}"), beta, dim));
                }
            }
            points
        }
        _ => vec![("-".to_string(), 0.0, 0)],
    }
}

/// Networks and logs produced by one run, for callers that persist them.
pub struct RunArtifacts {
    pub encoder: Option<EncoderNetwork>,
    pub rope_log: Option<TrainLog>,
    pub q_net: DenseNet,
    pub fqe_log: TrainLog,
}

/// Execute every (algorithm, grid point, seed) run, compute the DP ground
/// truth, and aggregate IQM-of-RMAE with bootstrap CIs and per-algorithm
/// performance profiles. Runs execute in the parallel pool when the
/// `parallel` feature is on; aggregation order is fixed either way.
pub fn run_sweep(config: &ExperimentConfig) -> Result<EvalReport> {
    run_sweep_with(config, |_, _| Ok(()))
}

/// [`run_sweep`] with a sink that receives each successful run's artifacts
/// (called from the worker pool; artifact filenames must not collide).
pub fn run_sweep_with(
    config: &ExperimentConfig,
    sink: impl Fn(&RunRecord, RunArtifacts) -> Result<()> + Sync,
) -> Result<EvalReport> {
    config.fqe.validate()?;
    config.encoder.validate()?;
    if config.seeds.is_empty() || config.algorithms.is_empty() {
        return Err(Error::validation(
            "sweep needs at least one seed and one algorithm".to_string(),
        ));
    }
    let env = build_env(&config.env)?;
    let dataset = materialize_dataset(&config.dataset, &env)?;
    let features = materialize_features(&config.features, &env, &dataset)?;
    let weights = initial_weights(&env.mdp, &env.pi_e);

    // Default encoder width: |X| to match the sweep convention of sizing
    // the representation by the joint space.
    let default_dim = env.mdp.n_state_actions();

    let mut specs = Vec::new();
    for algo in &config.algorithms {
        for (label, beta, dim) in grid_points(algo, default_dim) {
            for &seed in &config.seeds {
                specs.push(RunSpec {
                    algorithm: algo.algorithm,
                    hyperparams: label.clone(),
                    beta,
                    output_dim: dim,
                    seed,
                });
            }
        }
    }

    let records: Vec<RunRecord> = map_indexed(specs.len(), |i| {
        let spec = &specs[i];
        let failed = |e: Error| RunRecord {
            algorithm: spec.algorithm.name().to_string(),
            hyperparams: spec.hyperparams.clone(),
            seed: spec.seed,
            estimate: None,
            rmae: None,
            diverged: false,
            trace: Vec::new(),
            error: Some(e.to_string()),
        };
        match execute_run(spec, config, &env, &dataset, &features, &weights) {
            Ok((record, artifacts)) => match sink(&record, artifacts) {
                Ok(()) => record,
                Err(e) => failed(e),
            },
            Err(e) => failed(e),
        }
    });

    let mut summaries = Vec::new();
    for algo in &config.algorithms {
        let name = algo.algorithm.name();
        let algo_runs: Vec<&RunRecord> = records.iter().filter(|r| r.algorithm == name).collect();
        let pooled: Vec<f64> = algo_runs.iter().filter_map(|r| r.rmae).collect();
        if pooled.is_empty() {
            return Err(Error::validation(format!(
                "algorithm {name} produced no successful runs"
            )));
        }
        let pooled_iqm = iqm(&pooled)?;
        let (ci_lo, ci_hi) = bootstrap_ci(
            &pooled,
            config.bootstrap_level,
            config.bootstrap_resamples,
            config.bootstrap_seed,
        )?;
        // Best grid point by per-point IQM of final RMAE.
        let mut best: Option<(String, f64)> = None;
        for (label, _, _) in grid_points(algo, default_dim) {
            let point: Vec<f64> = algo_runs
                .iter()
                .filter(|r| r.hyperparams == label)
                .filter_map(|r| r.rmae)
                .collect();
            if point.is_empty() {
                continue;
            }
            let point_iqm = iqm(&point)?;
            if best.as_ref().map(|(_, v)| point_iqm < *v).unwrap_or(true) {
                best = Some((label, point_iqm));
            }
        }
        let (best_point, best_point_iqm_rmae) =
            best.ok_or_else(|| Error::validation(format!("no grid point finished for {name}")))?;
        let profile = performance_profile(&pooled, &config.profile_thresholds)?;
        summaries.push(AlgorithmSummary {
            algorithm: name.to_string(),
            pooled_iqm_rmae: pooled_iqm,
            ci_lo,
            ci_hi,
            best_point,
            best_point_iqm_rmae,
            profile,
            n_runs: algo_runs.len(),
            n_diverged: algo_runs.iter().filter(|r| r.diverged).count(),
            n_failed: algo_runs.iter().filter(|r| r.error.is_some()).count(),
        });
    }

    let report = EvalReport {
        schema_version: REPORT_SCHEMA_VERSION,
        rho_e: env.rho_e,
        rho_rand: env.rho_rand,
        runs: records,
        summaries,
    };
    for s in &report.summaries {
        if !(s.ci_lo <= s.pooled_iqm_rmae && s.pooled_iqm_rmae <= s.ci_hi) {
            return Err(Error::validation(format!(
                "bootstrap interval [{}, {}] misses the point IQM {} for {}",
                s.ci_lo, s.ci_hi, s.pooled_iqm_rmae, s.algorithm
            )));
        }
    }
    Ok(report)
}

fn execute_run(
    spec: &RunSpec,
    config: &ExperimentConfig,
    env: &SweepEnv,
    dataset: &TransitionDataset,
    features: &FeatureMap,
    weights: &[f64],
) -> Result<(RunRecord, RunArtifacts)> {
    let name = spec.algorithm.name();
    let mut fqe_cfg = config.fqe.clone();
    fqe_cfg.gamma = env.mdp.gamma;
    fqe_cfg.seed = derive_seed(
        &["fqe", name, &spec.hyperparams],
        &[config.fqe.seed, spec.seed],
    );

    match spec.algorithm {
        Algorithm::FqeClip => {
            fqe_cfg.clip_targets = true;
        }
        Algorithm::FqeDeep => {
            // Double the capacity by doubling depth.
            let mut dims = fqe_cfg.hidden_dims.clone();
            dims.extend_from_slice(&fqe_cfg.hidden_dims);
            fqe_cfg.hidden_dims = dims;
        }
        _ => {}
    }

    let (encoder, rope_log) = if spec.algorithm == Algorithm::RopeFqe {
        let mut enc_cfg = config.encoder.clone();
        enc_cfg.gamma = env.mdp.gamma;
        enc_cfg.seed = derive_seed(
            &["encoder", name, &spec.hyperparams],
            &[config.encoder.seed, spec.seed],
        );
        let outcome = rope_train(
            dataset,
            &env.pi_e,
            features,
            &enc_cfg,
            spec.beta,
            spec.output_dim,
        )?;
        (Some(outcome.encoder), Some(outcome.log))
    } else {
        (None, None)
    };

    let input = match &encoder {
        Some(enc) => QInput::encoded(features, enc),
        None => QInput::raw(features),
    };
    let outcome = fqe_train(dataset, &env.pi_e, &input, &fqe_cfg, Some(weights))?;
    let estimate = outcome
        .estimate_trace
        .last()
        .map(|&(_, est)| est)
        .ok_or_else(|| Error::validation("run produced no checkpoints".to_string()))?;
    let run_rmae = rmae(estimate, env.rho_e, env.rho_rand)?;

    Ok((
        RunRecord {
            algorithm: name.to_string(),
            hyperparams: spec.hyperparams.clone(),
            seed: spec.seed,
            estimate: Some(estimate),
            rmae: Some(run_rmae),
            diverged: outcome.diverged,
            trace: outcome.estimate_trace,
            error: None,
        },
        RunArtifacts {
            encoder,
            rope_log,
            q_net: outcome.q_net,
            fqe_log: outcome.log,
        },
    ))
}
