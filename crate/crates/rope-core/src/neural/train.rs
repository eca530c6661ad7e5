//! Training loops: the encoder distance regression and the fitted-Q
//! regression family, both with EMA target networks and fully deterministic
//! given their config seed.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::encoder::{parametric_distance_from_embeddings, EncoderNetwork};
use super::features::FeatureMap;
use super::loss::{fqe_loss_grad, rope_loss_grad, FqeBatch, RopeBatch};
use super::net::{Activation, DenseNet};
use super::optim::{Optimizer, OptimizerKind};
use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, TabularMdp, TransitionDataset};

/// Hyperparameters shared by both training loops.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrainConfig {
    pub hidden_dims: Vec<usize>,
    pub learning_rate: f64,
    pub weight_decay: f64,
    pub batch_size: usize,
    pub total_gradient_steps: usize,
    /// EMA coefficient of the target blend.
    pub target_tau: f64,
    /// Gradient steps between target blends.
    pub target_update_every: usize,
    pub huber_delta: f64,
    /// Stability constant of the angular distance.
    pub kappa: f64,
    pub clip_targets: bool,
    /// Explicit clip bounds; derived from the dataset when clipping is on
    /// and no bounds are given.
    pub clip_range: Option<(f64, f64)>,
    pub optimizer: OptimizerKind,
    pub grad_clip_norm: f64,
    pub gamma: f64,
    pub seed: u64,
    pub log_every: usize,
    pub checkpoint_every: usize,
}

impl TrainConfig {
    /// Defaults sized for small tabular studies.
    pub fn desk_scale() -> Self {
        TrainConfig {
            hidden_dims: vec![64, 64],
            learning_rate: 3e-4,
            weight_decay: 1e-4,
            batch_size: 128,
            total_gradient_steps: 20_000,
            target_tau: 0.005,
            target_update_every: 100,
            huber_delta: 1.0,
            kappa: 1e-6,
            clip_targets: false,
            clip_range: None,
            optimizer: OptimizerKind::Sgd,
            grad_clip_norm: 10.0,
            gamma: 0.99,
            seed: 0,
            log_every: 100,
            checkpoint_every: 1_000,
        }
    }

    /// The full-scale preset: bigger nets, bigger batches, Adam.
    pub fn paper_scale() -> Self {
        TrainConfig {
            hidden_dims: vec![256, 256],
            learning_rate: 1e-5,
            weight_decay: 1e-2,
            batch_size: 512,
            total_gradient_steps: 300_000,
            optimizer: OptimizerKind::Adam,
            ..TrainConfig::desk_scale()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("learning_rate", self.learning_rate),
            ("target_tau", self.target_tau),
            ("huber_delta", self.huber_delta),
        ];
        for (name, v) in positive {
            if v <= 0.0 {
                return Err(Error::validation(format!("{name} must be positive")));
            }
        }
        if self.target_tau > 1.0 {
            return Err(Error::validation(
                "target_tau must be in (0, 1]".to_string(),
            ));
        }
        if self.weight_decay < 0.0 || self.kappa < 0.0 || self.grad_clip_norm < 0.0 {
            return Err(Error::validation(
                "weight_decay, kappa and grad_clip_norm must be nonnegative".to_string(),
            ));
        }
        if self.batch_size == 0
            || self.total_gradient_steps == 0
            || self.target_update_every == 0
            || self.log_every == 0
            || self.checkpoint_every == 0
        {
            return Err(Error::validation(
                "batch_size, step counts and cadences must be >= 1".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::validation("gamma must lie in [0, 1)".to_string()));
        }
        if self.hidden_dims.contains(&0) {
            return Err(Error::validation(
                "hidden dims must be positive".to_string(),
            ));
        }
        if self.clip_range.is_some() && !self.clip_targets {
            return Err(Error::validation(
                "clip_range given but clip_targets is off".to_string(),
            ));
        }
        if let Some((lo, hi)) = self.clip_range {
            if lo > hi {
                return Err(Error::validation("clip_range is inverted".to_string()));
            }
        }
        Ok(())
    }
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig::desk_scale()
    }
}

/// One logged training step.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LogRow {
    pub step: usize,
    pub loss: f64,
    /// Mean `|q|` of the batch, or mean encoder distance.
    pub mean_value: f64,
    pub target_updates: usize,
}

/// Training trace plus run-level flags.
#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct TrainLog {
    pub rows: Vec<LogRow>,
    /// Set when the dataset's reward spread is degenerate, which starves the
    /// short-term distance term and risks representation collapse.
    pub collapse_risk: bool,
    /// The clip bounds actually applied, when clipping was on.
    pub effective_clip_range: Option<(f64, f64)>,
    /// Smallest and largest regression target seen during training.
    pub target_range_seen: Option<(f64, f64)>,
    pub initial_loss: f64,
    pub final_loss: f64,
}

impl TrainLog {
    /// CSV with columns `step,loss,mean_value,target_updates`.
    pub fn to_csv(&self) -> String {
        let mut out = String::from("step,loss,mean_value,target_updates\n");
        for row in &self.rows {
            out.push_str(&format!(
                "{},{},{},{}\n",
                row.step, row.loss, row.mean_value, row.target_updates
            ));
        }
        out
    }
}

/// Result of encoder training.
pub struct RopeOutcome {
    pub encoder: EncoderNetwork,
    pub log: TrainLog,
}

/// Result of fitted-Q training.
pub struct FqeOutcome {
    pub q_net: DenseNet,
    pub log: TrainLog,
    pub diverged: bool,
    /// `(step, estimate)` checkpoints; populated when initial-state weights
    /// were supplied.
    pub estimate_trace: Vec<(usize, f64)>,
}

/// What the Q network consumes: raw pair features, or frozen-encoder
/// embeddings of them.
pub struct QInput<'a> {
    pub map: &'a FeatureMap,
    pub encoder: Option<&'a EncoderNetwork>,
}

impl<'a> QInput<'a> {
    pub fn raw(map: &'a FeatureMap) -> Self {
        QInput { map, encoder: None }
    }

    pub fn encoded(map: &'a FeatureMap, encoder: &'a EncoderNetwork) -> Self {
        QInput {
            map,
            encoder: Some(encoder),
        }
    }

    /// Q-network input rows for every state-action pair, in flat index
    /// order. The encoder, when present, is applied frozen.
    pub fn pair_matrix(&self) -> Result<Array2<f64>> {
        let raw = self.map.pair_inputs();
        match self.encoder {
            None => Ok(raw),
            Some(enc) => enc.encode(&raw),
        }
    }
}

fn check_dataset_matches(dataset: &TransitionDataset, map: &FeatureMap) -> Result<()> {
    if dataset.provenance.n_states != map.n_states()
        || dataset.provenance.n_actions != map.n_actions()
    {
        return Err(Error::dimension(format!(
            "dataset is {}x{}, feature map is {}x{}",
            dataset.provenance.n_states,
            dataset.provenance.n_actions,
            map.n_states(),
            map.n_actions()
        )));
    }
    Ok(())
}

fn sample_batch(rng: &mut ChaCha8Rng, len: usize, batch: usize) -> Vec<usize> {
    (0..batch).map(|_| rng.gen_range(0..len)).collect()
}

/// Train the state-action encoder by bootstrapped distance regression on
/// pairs of independently sampled mini-batches. Deterministic given
/// `config.seed`.
pub fn rope_train(
    dataset: &TransitionDataset,
    pi_e: &PolicyTable,
    features: &FeatureMap,
    config: &TrainConfig,
    beta: f64,
    output_dim: usize,
) -> Result<RopeOutcome> {
    config.validate()?;
    check_dataset_matches(dataset, features)?;
    if output_dim == 0 {
        return Err(Error::validation("output_dim must be positive".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pair_inputs = features.pair_inputs();
    let n_actions = features.n_actions();
    let mut encoder = EncoderNetwork::new(
        features.dim(),
        &config.hidden_dims,
        output_dim,
        beta,
        config.kappa,
        &mut rng,
    )?;
    let mut optimizer = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        config.weight_decay,
        config.grad_clip_norm,
    );

    let (r_lo, r_hi) = dataset.reward_range();
    let collapse_risk = (r_hi - r_lo).abs() < 1e-12;

    let mut target_embeddings = encoder.target.forward(&pair_inputs)?;
    let mut target_updates = 0;
    let mut log = TrainLog {
        collapse_risk,
        ..TrainLog::default()
    };

    let n = dataset.len();
    for step in 1..=config.total_gradient_steps {
        let batch_a = sample_batch(&mut rng, n, config.batch_size);
        let batch_b = sample_batch(&mut rng, n, config.batch_size);

        let mut x1_rows = Vec::with_capacity(config.batch_size);
        let mut v_rows = Array2::zeros((config.batch_size, output_dim));
        let mut bootstrap = Vec::with_capacity(config.batch_size);
        for (i, (&ia, &ib)) in batch_a.iter().zip(batch_b.iter()).enumerate() {
            let t1 = &dataset.transitions[ia];
            let t2 = &dataset.transitions[ib];
            let a1_next = pi_e.sample(t1.next_state, &mut rng);
            let a2_next = pi_e.sample(t2.next_state, &mut rng);
            let x1 = t1.state * n_actions + t1.action;
            let x2 = t2.state * n_actions + t2.action;
            let x1_next = t1.next_state * n_actions + a1_next;
            let x2_next = t2.next_state * n_actions + a2_next;

            let next_d = parametric_distance_from_embeddings(
                target_embeddings.row(x1_next).as_slice().expect("row"),
                target_embeddings.row(x2_next).as_slice().expect("row"),
                beta,
                config.kappa,
            )
            .value;
            bootstrap.push((t1.reward - t2.reward).abs() + config.gamma * next_d);
            x1_rows.push(x1);
            v_rows.row_mut(i).assign(&target_embeddings.row(x2));
        }

        let batch = RopeBatch {
            x1_rows,
            target_embeddings: v_rows,
            bootstrap,
        };
        let out = rope_loss_grad(
            &encoder.online,
            &pair_inputs,
            &batch,
            beta,
            config.kappa,
            config.huber_delta,
        )?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "encoder distance regression".to_string(),
            });
        }
        optimizer.step(&mut encoder.online, out.grads);

        if step % config.target_update_every == 0 {
            encoder.ema_update(config.target_tau)?;
            target_embeddings = encoder.target.forward(&pair_inputs)?;
            target_updates += 1;
        }

        if step == 1 {
            log.initial_loss = out.loss;
        }
        if step == config.total_gradient_steps {
            log.final_loss = out.loss;
        }
        if step % config.log_every == 0 || step == 1 || step == config.total_gradient_steps {
            log.rows.push(LogRow {
                step,
                loss: out.loss,
                mean_value: out.mean_abs_output,
                target_updates,
            });
        }
    }
    encoder.online.check_finite()?;

    Ok(RopeOutcome { encoder, log })
}

/// Weights of the exact initial-distribution expectation: one weight per
/// state-action pair, `d0(s) * pi_e(a|s)`.
pub fn initial_weights(mdp: &TabularMdp, pi_e: &PolicyTable) -> Vec<f64> {
    let mut w = vec![0.0; mdp.n_state_actions()];
    for s in 0..mdp.n_states {
        for a in 0..mdp.n_actions {
            w[mdp.pair_index(s, a)] = mdp.initial_dist[s] * pi_e.prob(s, a);
        }
    }
    w
}

/// Train a Q network on the dataset by bootstrapped Huber regression with
/// an EMA target network. Optionally clips regression targets to the
/// dataset-derived value range, and records a per-checkpoint estimate trace
/// when `estimate_weights` is given.
pub fn fqe_train(
    dataset: &TransitionDataset,
    pi_e: &PolicyTable,
    input: &QInput,
    config: &TrainConfig,
    estimate_weights: Option<&[f64]>,
) -> Result<FqeOutcome> {
    config.validate()?;
    check_dataset_matches(dataset, input.map)?;

    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let pair_matrix = input.pair_matrix()?;
    let n_pairs = pair_matrix.nrows();
    let n_states = input.map.n_states();
    let n_actions = input.map.n_actions();

    let mut dims = vec![pair_matrix.ncols()];
    dims.extend_from_slice(&config.hidden_dims);
    dims.push(1);
    let mut q_net = DenseNet::new(&dims, Activation::Identity, false, &mut rng)?;
    let mut target_net = q_net.clone();
    let mut optimizer = Optimizer::new(
        config.optimizer,
        config.learning_rate,
        config.weight_decay,
        config.grad_clip_norm,
    );

    let (r_lo, r_hi) = dataset.reward_range();
    let clip_range = if config.clip_targets {
        Some(
            config
                .clip_range
                .unwrap_or((r_lo / (1.0 - config.gamma), r_hi / (1.0 - config.gamma))),
        )
    } else {
        None
    };
    let r_abs_max = r_lo.abs().max(r_hi.abs());
    let divergence_threshold = 1e3 * r_abs_max.max(1e-6) / (1.0 - config.gamma);

    // Expected next-state value per state under the *target* net; refreshed
    // whenever the target net changes.
    let refresh_exp_next = |target_net: &DenseNet| -> Result<Vec<f64>> {
        let qbar = target_net.forward(&pair_matrix)?;
        let mut exp_next = vec![0.0; n_states];
        for s in 0..n_states {
            let mut acc = 0.0;
            for a in 0..n_actions {
                acc += pi_e.prob(s, a) * qbar[[s * n_actions + a, 0]];
            }
            exp_next[s] = acc;
        }
        Ok(exp_next)
    };
    let mut exp_next = refresh_exp_next(&target_net)?;

    let mut log = TrainLog::default();
    let mut target_updates = 0;
    let mut diverged = false;
    let mut running_abs_q = 0.0;
    let mut target_lo = f64::INFINITY;
    let mut target_hi = f64::NEG_INFINITY;
    let mut estimate_trace = Vec::new();

    let estimate = |q_net: &DenseNet, weights: &[f64]| -> Result<f64> {
        let preds = q_net.forward(&pair_matrix)?;
        Ok(weights
            .iter()
            .enumerate()
            .map(|(x, &w)| w * preds[[x, 0]])
            .sum())
    };

    let n = dataset.len();
    debug_assert_eq!(n_pairs, n_states * n_actions);
    let mut last_step = 0;
    for step in 1..=config.total_gradient_steps {
        last_step = step;
        let indices = sample_batch(&mut rng, n, config.batch_size);
        let mut input_rows = Vec::with_capacity(config.batch_size);
        let mut targets = Vec::with_capacity(config.batch_size);
        for &i in &indices {
            let t = &dataset.transitions[i];
            let bootstrap = if t.done { 0.0 } else { exp_next[t.next_state] };
            let mut target = t.reward + config.gamma * bootstrap;
            if let Some((lo, hi)) = clip_range {
                target = target.clamp(lo, hi);
            }
            target_lo = target_lo.min(target);
            target_hi = target_hi.max(target);
            input_rows.push(t.state * n_actions + t.action);
            targets.push(target);
        }

        let batch = FqeBatch {
            input_rows,
            targets,
        };
        let out = fqe_loss_grad(&q_net, &pair_matrix, &batch, config.huber_delta)?;
        if !out.loss.is_finite() {
            return Err(Error::NonFiniteLoss {
                step,
                detail: "fitted-Q regression".to_string(),
            });
        }
        optimizer.step(&mut q_net, out.grads);

        if step % config.target_update_every == 0 {
            target_net.ema_update_from(&q_net, config.target_tau)?;
            exp_next = refresh_exp_next(&target_net)?;
            target_updates += 1;
        }

        running_abs_q = if step == 1 {
            out.mean_abs_output
        } else {
            0.99 * running_abs_q + 0.01 * out.mean_abs_output
        };

        if step == 1 {
            log.initial_loss = out.loss;
        }
        log.final_loss = out.loss;
        if step % config.log_every == 0 || step == 1 || step == config.total_gradient_steps {
            log.rows.push(LogRow {
                step,
                loss: out.loss,
                mean_value: out.mean_abs_output,
                target_updates,
            });
        }
        if let Some(weights) = estimate_weights {
            if step % config.checkpoint_every == 0 || step == config.total_gradient_steps {
                estimate_trace.push((step, estimate(&q_net, weights)?));
            }
        }

        if running_abs_q > divergence_threshold {
            diverged = true;
            break;
        }
    }

    if diverged {
        if let Some(weights) = estimate_weights {
            if estimate_trace.last().map(|&(s, _)| s) != Some(last_step) {
                estimate_trace.push((last_step, estimate(&q_net, weights)?));
            }
        }
    }
    q_net.check_finite()?;
    log.effective_clip_range = clip_range;
    if target_lo.is_finite() {
        log.target_range_seen = Some((target_lo, target_hi));
    }

    Ok(FqeOutcome {
        q_net,
        log,
        diverged,
        estimate_trace,
    })
}

/// Exact policy-value estimate from a trained Q network:
/// the expectation of `q(s0, a0)` over the initial distribution and `pi_e`.
pub fn fqe_estimate(
    q_net: &DenseNet,
    mdp: &TabularMdp,
    pi_e: &PolicyTable,
    input: &QInput,
) -> Result<f64> {
    let weights = initial_weights(mdp, pi_e);
    let pair_matrix = input.pair_matrix()?;
    let preds = q_net.forward(&pair_matrix)?;
    Ok(weights
        .iter()
        .enumerate()
        .map(|(x, &w)| w * preds[[x, 0]])
        .sum())
}

/// Sample-mean variant of [`fqe_estimate`] over explicitly provided initial
/// states, with the action expectation still exact under `pi_e`.
pub fn fqe_estimate_from_states(
    q_net: &DenseNet,
    initial_states: &[usize],
    pi_e: &PolicyTable,
    input: &QInput,
) -> Result<f64> {
    if initial_states.is_empty() {
        return Err(Error::validation("no initial states given".to_string()));
    }
    let pair_matrix = input.pair_matrix()?;
    let preds = q_net.forward(&pair_matrix)?;
    let n_actions = input.map.n_actions();
    let mut acc = 0.0;
    for &s in initial_states {
        for a in 0..n_actions {
            acc += pi_e.prob(s, a) * preds[[s * n_actions + a, 0]];
        }
    }
    Ok(acc / initial_states.len() as f64)
}
