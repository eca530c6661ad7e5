use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context as _};
use serde::Serialize;

use rope_core::eval::{derive_seed, run_sweep_with, EvalReport, ExperimentConfig};
use rope_core::mdp::{
    build_gridworld, build_random_mdp, build_random_policy, generate_dataset, policy_evaluation_q,
    policy_value, PolicyTable, QTable, TabularMdp, TransitionDataset, ACTION_NAMES,
};
use rope_core::metric::{
    group_zero_distance, q_level_groups, solve_fixed_point, GroupAssignment, MetricKind,
};
use rope_core::neural::{
    checkpoint, fqe_estimate, fqe_train, rope_train, FeatureMap, OptimizerKind, QInput, TrainConfig,
};
use rope_core::{aggregation, eval};

use crate::{EnvArgs, FeatureArgs, Outcome, TrainArgs};

pub struct Context {
    pub seed: Option<u64>,
    pub out: PathBuf,
    pub config: Option<PathBuf>,
    pub strict: bool,
    pub force: bool,
}

impl Context {
    fn master_seed(&self) -> u64 {
        self.seed.unwrap_or(0)
    }

    /// Create the output directory. An existing nonempty directory needs
    /// --force; creation of the final path component is a single atomic
    /// mkdir.
    fn prepare_out(&self) -> anyhow::Result<&Path> {
        let path = self.out.as_path();
        if path.exists() {
            let nonempty = path.read_dir()?.next().is_some();
            if nonempty && !self.force {
                bail!(
                    "output directory {} is nonempty; pass --force to overwrite",
                    path.display()
                );
            }
        } else {
            if let Some(parent) = path.parent() {
                if !parent.as_os_str().is_empty() {
                    fs::create_dir_all(parent)?;
                }
            }
            fs::create_dir(path)?;
        }
        Ok(path)
    }

    fn write_json(&self, name: &str, value: &impl Serialize) -> anyhow::Result<()> {
        let text = serde_json::to_string_pretty(value)?;
        fs::write(self.out.join(name), text + "\n")?;
        Ok(())
    }

    fn write_text(&self, name: &str, text: &str) -> anyhow::Result<()> {
        fs::write(self.out.join(name), text)?;
        Ok(())
    }
}

/// Environment bundle: the MDP plus evaluation and behavior policies.
struct Env {
    mdp: TabularMdp,
    pi_e: PolicyTable,
    pi_b: PolicyTable,
    name: String,
}

impl EnvArgs {
    fn build(&self, master_seed: u64) -> anyhow::Result<Env> {
        match self.env.as_str() {
            "gridworld" => {
                let gw = build_gridworld();
                Ok(Env {
                    mdp: gw.mdp,
                    pi_e: gw.pi_e,
                    pi_b: gw.pi_b,
                    name: "gridworld".to_string(),
                })
            }
            "random-mdp" => {
                let seed = derive_seed(&["env"], &[master_seed]);
                let mdp = build_random_mdp(self.n_states, self.n_actions, self.gamma, seed)?;
                let pi_e =
                    build_random_policy(self.n_states, self.n_actions, seed.wrapping_add(1))?;
                let pi_b = PolicyTable::uniform(self.n_states, self.n_actions);
                Ok(Env {
                    mdp,
                    pi_e,
                    pi_b,
                    name: "random-mdp".to_string(),
                })
            }
            other => bail!("unknown env '{other}' (expected gridworld or random-mdp)"),
        }
    }
}

impl FeatureArgs {
    fn build(
        &self,
        env: &Env,
        master_seed: u64,
        dataset: &TransitionDataset,
    ) -> anyhow::Result<FeatureMap> {
        match self.features.as_str() {
            "one-hot" => Ok(FeatureMap::one_hot(env.mdp.n_states, env.mdp.n_actions)),
            "redundant" => Ok(FeatureMap::redundant(
                env.mdp.n_states,
                env.mdp.n_actions,
                self.noise_dims,
                derive_seed(&["features"], &[master_seed]),
            )),
            "from-dataset" => Ok(FeatureMap::from_dataset(dataset)?),
            other => bail!("unknown feature map '{other}'"),
        }
    }
}

impl TrainArgs {
    fn build(&self, master_seed: u64, label: &str) -> anyhow::Result<TrainConfig> {
        let mut cfg = match self.preset.as_str() {
            "desk" => TrainConfig::desk_scale(),
            "paper" => TrainConfig::paper_scale(),
            other => bail!("unknown preset '{other}' (expected desk or paper)"),
        };
        if let Some(v) = self.steps {
            cfg.total_gradient_steps = v;
        }
        if let Some(v) = self.learning_rate {
            cfg.learning_rate = v;
        }
        if let Some(v) = self.batch_size {
            cfg.batch_size = v;
        }
        if let Some(s) = &self.hidden {
            cfg.hidden_dims = s
                .split(',')
                .map(|p| p.trim().parse::<usize>())
                .collect::<Result<_, _>>()
                .context("parsing --hidden")?;
        }
        if let Some(v) = self.tau {
            cfg.target_tau = v;
        }
        if let Some(v) = self.target_update_every {
            cfg.target_update_every = v;
        }
        if let Some(s) = &self.optimizer {
            cfg.optimizer = match s.as_str() {
                "sgd" => OptimizerKind::Sgd,
                "adam" => OptimizerKind::Adam,
                other => bail!("unknown optimizer '{other}'"),
            };
        }
        if let Some(v) = self.weight_decay {
            cfg.weight_decay = v;
        }
        cfg.seed = derive_seed(&[label], &[master_seed]);
        Ok(cfg)
    }
}

#[allow(clippy::too_many_arguments)]
pub fn make_dataset(
    ctx: &Context,
    env_args: &EnvArgs,
    n_transitions: usize,
    behavior: &str,
    episode_cap: usize,
    features: &str,
    noise_dims: usize,
    check_coverage: bool,
) -> anyhow::Result<Outcome> {
    let env = env_args.build(ctx.master_seed())?;
    ctx.prepare_out()?;
    let behavior_policy = match behavior {
        "uniform" => env.pi_b.clone(),
        "pi-e" => env.pi_e.clone(),
        other => bail!("unknown behavior '{other}' (expected uniform or pi-e)"),
    };
    let seed = derive_seed(&["dataset"], &[ctx.master_seed()]);
    let mut dataset =
        generate_dataset(&env.mdp, &behavior_policy, n_transitions, seed, episode_cap)?;
    dataset.provenance.env = env.name.clone();
    dataset.provenance.behavior = behavior.to_string();

    match features {
        "none" => {}
        "one-hot" => {
            let map = FeatureMap::one_hot(env.mdp.n_states, env.mdp.n_actions);
            dataset.attach_features(map.state_dim(), |s| map.state_features(s));
        }
        "redundant" => {
            let map = FeatureMap::redundant(
                env.mdp.n_states,
                env.mdp.n_actions,
                noise_dims,
                derive_seed(&["features"], &[ctx.master_seed()]),
            );
            dataset.attach_features(map.state_dim(), |s| map.state_features(s));
        }
        other => bail!("unknown feature option '{other}'"),
    }

    if check_coverage {
        dataset.ensure_coverage(&env.pi_e, &env.mdp.terminal_mask)?;
    }

    dataset.save(ctx.out.join("dataset.jsonl"))?;
    ctx.write_text("mdp.json", &(env.mdp.to_json()? + "\n"))?;
    ctx.write_json(
        "effective-config.json",
        &serde_json::json!({
            "command": "make-dataset",
            "env": env.name,
            "n_transitions": n_transitions,
            "behavior": behavior,
            "episode_cap": episode_cap,
            "features": features,
            "noise_dims": noise_dims,
            "check_coverage": check_coverage,
            "seed": ctx.master_seed(),
        }),
    )?;
    println!(
        "wrote {} transitions to {}",
        dataset.len(),
        ctx.out.join("dataset.jsonl").display()
    );
    Ok(Outcome::Success)
}

fn metric_policy(kind: MetricKind, env: &Env) -> &PolicyTable {
    match kind {
        MetricKind::MicoOnPolicy => &env.pi_b,
        _ => &env.pi_e,
    }
}

pub fn solve_metric(
    ctx: &Context,
    env_args: &EnvArgs,
    metric: &str,
    tol: f64,
    max_sweeps: usize,
) -> anyhow::Result<Outcome> {
    let env = env_args.build(ctx.master_seed())?;
    let kind: MetricKind = metric.parse()?;
    ctx.prepare_out()?;
    let table = solve_fixed_point(kind, &env.mdp, metric_policy(kind, &env), tol, max_sweeps)?;
    ctx.write_text(
        &format!("distance-{}.json", kind.name()),
        &(table.to_json()? + "\n"),
    )?;
    ctx.write_json(
        "effective-config.json",
        &serde_json::json!({
            "command": "solve-metric",
            "env": env.name,
            "metric": kind.name(),
            "tol": tol,
            "max_sweeps": max_sweeps,
        }),
    )?;
    println!(
        "{}: converged={} residual={:.3e}",
        kind.name(),
        table.converged,
        table.residual
    );
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct GroupingVerdict {
    metric: String,
    verdict: String,
    n_groups_metric: usize,
    n_groups_q: usize,
    tolerance: f64,
}

fn grouping_csv(mdp: &TabularMdp, groups: &GroupAssignment) -> String {
    let mut out = String::from("cell,direction,group_id\n");
    for x in 0..mdp.n_state_actions() {
        let (s, a) = mdp.pair_of(x);
        let id = groups.group_ids[x]
            .map(|g| g.to_string())
            .unwrap_or_default();
        out.push_str(&format!("{s},{},{id}\n", ACTION_NAMES[a]));
    }
    out
}

pub fn groupings(
    ctx: &Context,
    env_args: &EnvArgs,
    metric: &str,
    tol: f64,
) -> anyhow::Result<Outcome> {
    if env_args.env != "gridworld" {
        bail!("groupings is defined for the gridworld env");
    }
    let env = env_args.build(ctx.master_seed())?;
    let kind: MetricKind = metric.parse()?;
    ctx.prepare_out()?;

    let table = solve_fixed_point(kind, &env.mdp, metric_policy(kind, &env), 1e-10, 10_000)?;
    let mask = env.mdp.pair_terminal_mask();
    let groups = group_zero_distance(&table, tol, &mask)?;
    let q = policy_evaluation_q(&env.mdp, &env.pi_e, 1e-12, 1_000_000)?;
    let q_groups = q_level_groups(&q, tol, &mask);
    let aligned = groups.same_partition(&q_groups);

    ctx.write_text(
        &format!("grouping-{}.csv", kind.name()),
        &grouping_csv(&env.mdp, &groups),
    )?;
    ctx.write_text(
        &format!("grouping-{}.json", kind.name()),
        &(groups.to_json()? + "\n"),
    )?;

    // Side-by-side comparison against the action-value level sets.
    let mut cmp = String::from("cell,direction,metric_group,q_group\n");
    for x in 0..env.mdp.n_state_actions() {
        let (s, a) = env.mdp.pair_of(x);
        cmp.push_str(&format!(
            "{s},{},{},{}\n",
            ACTION_NAMES[a],
            groups.group_ids[x]
                .map(|g| g.to_string())
                .unwrap_or_default(),
            q_groups.group_ids[x]
                .map(|g| g.to_string())
                .unwrap_or_default(),
        ));
    }
    ctx.write_text("comparison.csv", &cmp)?;
    let verdict = GroupingVerdict {
        metric: kind.name().to_string(),
        verdict: if aligned { "ALIGNED" } else { "MISALIGNED" }.to_string(),
        n_groups_metric: groups.n_groups,
        n_groups_q: q_groups.n_groups,
        tolerance: tol,
    };
    ctx.write_json("verdict.json", &verdict)?;
    println!("{}: {}", kind.name(), verdict.verdict);
    Ok(Outcome::Success)
}

#[derive(Serialize)]
struct BoundRow {
    mdp_seed: Option<u64>,
    epsilon: f64,
    /// Per-pair bound on |q(x) - clustered value of phi(x)|.
    action_value: aggregation::BoundReport,
    /// Initial-distribution bound on the estimate difference.
    estimate: aggregation::BoundReport,
}

fn verify_bounds_one(
    mdp: &TabularMdp,
    pi_e: &PolicyTable,
    epsilon: f64,
    mdp_seed: Option<u64>,
    corrupt: bool,
) -> anyhow::Result<BoundRow> {
    let d = solve_fixed_point(MetricKind::Rope, mdp, pi_e, 1e-12, 100_000)?;
    let mask = mdp.pair_terminal_mask();
    let clustering = aggregation::epsilon_cluster(&d, epsilon, &mask)?;
    let mrp = aggregation::build_clustered_mrp(mdp, pi_e, &clustering)?;
    let mut q_tilde = aggregation::mrp_value(&mrp, 1e-12, 10_000_000)?;
    if corrupt {
        // Negative test: shift every clustered value past the bound.
        let shift = 10.0 + 4.0 / (1.0 - mdp.gamma);
        for v in &mut q_tilde {
            *v += shift;
        }
    }
    let q = policy_evaluation_q(mdp, pi_e, 1e-12, 10_000_000)?;
    let action_value =
        aggregation::verify_action_value_bound(&q, &q_tilde, &clustering, epsilon, mdp.gamma);
    let estimate = aggregation::verify_estimate_bound(mdp, pi_e, &q, &q_tilde, &clustering)?;
    Ok(BoundRow {
        mdp_seed,
        epsilon,
        action_value,
        estimate,
    })
}

pub fn verify_bounds(
    ctx: &Context,
    env_args: &EnvArgs,
    epsilons: &str,
    mdps: usize,
    corrupt: bool,
) -> anyhow::Result<Outcome> {
    let epsilons: Vec<f64> = epsilons
        .split(',')
        .map(|p| p.trim().parse::<f64>())
        .collect::<Result<_, _>>()
        .context("parsing --epsilons")?;
    ctx.prepare_out()?;

    let mut rows = Vec::new();
    match env_args.env.as_str() {
        "gridworld" => {
            let env = env_args.build(ctx.master_seed())?;
            for &eps in &epsilons {
                rows.push(verify_bounds_one(&env.mdp, &env.pi_e, eps, None, corrupt)?);
            }
        }
        "random-mdp" => {
            for i in 0..mdps as u64 {
                let seed = derive_seed(&["verify-bounds"], &[ctx.master_seed(), i]);
                let mdp =
                    build_random_mdp(env_args.n_states, env_args.n_actions, env_args.gamma, seed)?;
                let pi_e = build_random_policy(
                    env_args.n_states,
                    env_args.n_actions,
                    seed.wrapping_add(1),
                )?;
                for &eps in &epsilons {
                    rows.push(verify_bounds_one(&mdp, &pi_e, eps, Some(seed), corrupt)?);
                }
            }
        }
        other => bail!("unknown env '{other}'"),
    }

    let all_pass = rows.iter().all(|r| r.action_value.pass && r.estimate.pass);
    ctx.write_json("bound-reports.json", &rows)?;
    let mut csv = String::from(
        "mdp_seed,epsilon,value_gap,value_bound,value_pass,estimate_gap,estimate_bound,estimate_pass\n",
    );
    for r in &rows {
        csv.push_str(&format!(
            "{},{},{},{},{},{},{},{}\n",
            r.mdp_seed.map(|s| s.to_string()).unwrap_or_default(),
            r.epsilon,
            r.action_value.max_gap,
            r.action_value.bound,
            r.action_value.pass,
            r.estimate.max_gap,
            r.estimate.bound,
            r.estimate.pass
        ));
    }
    ctx.write_text("bounds.csv", &csv)?;
    println!("{} bound checks, all_pass={all_pass}", rows.len() * 2);
    Ok(if all_pass {
        Outcome::Success
    } else {
        Outcome::BoundViolation
    })
}

pub fn train_rope(
    ctx: &Context,
    dataset_path: &Path,
    env_args: &EnvArgs,
    feature_args: &FeatureArgs,
    train_args: &TrainArgs,
    beta: f64,
    output_dim: Option<usize>,
) -> anyhow::Result<Outcome> {
    let env = env_args.build(ctx.master_seed())?;
    let dataset = TransitionDataset::load(dataset_path)?;
    let features = feature_args.build(&env, ctx.master_seed(), &dataset)?;
    let mut cfg = train_args.build(ctx.master_seed(), "train-rope")?;
    cfg.gamma = env.mdp.gamma;
    let output_dim = output_dim.unwrap_or(env.mdp.n_state_actions());
    ctx.prepare_out()?;

    let outcome = rope_train(&dataset, &env.pi_e, &features, &cfg, beta, output_dim)?;
    checkpoint::save_encoder(ctx.out.join("encoder.bin"), &outcome.encoder)?;
    ctx.write_text("train-log.csv", &outcome.log.to_csv())?;
    ctx.write_json(
        "run.json",
        &serde_json::json!({
            "command": "train-rope",
            "beta": beta,
            "output_dim": output_dim,
            "collapse_risk": outcome.log.collapse_risk,
            "initial_loss": outcome.log.initial_loss,
            "final_loss": outcome.log.final_loss,
            "config": cfg,
        }),
    )?;
    println!(
        "encoder trained: loss {:.5} -> {:.5}{}",
        outcome.log.initial_loss,
        outcome.log.final_loss,
        if outcome.log.collapse_risk {
            " (collapse risk: degenerate reward spread)"
        } else {
            ""
        }
    );
    Ok(Outcome::Success)
}

#[allow(clippy::too_many_arguments)]
pub fn train_fqe(
    ctx: &Context,
    dataset_path: &Path,
    env_args: &EnvArgs,
    feature_args: &FeatureArgs,
    train_args: &TrainArgs,
    encoder_path: Option<&Path>,
    variant: &str,
) -> anyhow::Result<Outcome> {
    let env = env_args.build(ctx.master_seed())?;
    let dataset = TransitionDataset::load(dataset_path)?;
    let features = feature_args.build(&env, ctx.master_seed(), &dataset)?;
    let mut cfg = train_args.build(ctx.master_seed(), "train-fqe")?;
    cfg.gamma = env.mdp.gamma;
    match variant {
        "plain" => {}
        "clip" => cfg.clip_targets = true,
        "deep" => {
            let mut dims = cfg.hidden_dims.clone();
            dims.extend_from_slice(&cfg.hidden_dims);
            cfg.hidden_dims = dims;
        }
        other => bail!("unknown variant '{other}' (expected plain, clip or deep)"),
    }
    ctx.prepare_out()?;

    let encoder = match encoder_path {
        Some(p) => Some(checkpoint::load_encoder(p)?),
        None => None,
    };
    let input = match &encoder {
        Some(enc) => QInput::encoded(&features, enc),
        None => QInput::raw(&features),
    };
    let weights = rope_core::neural::initial_weights(&env.mdp, &env.pi_e);
    let outcome = fqe_train(&dataset, &env.pi_e, &input, &cfg, Some(&weights))?;
    let estimate = fqe_estimate(&outcome.q_net, &env.mdp, &env.pi_e, &input)?;

    let (rho_e, rho_rand) = dp_reference(&env.mdp, &env.pi_e)?;
    let rmae = eval::rmae(estimate, rho_e, rho_rand)?;

    checkpoint::save_net(ctx.out.join("qnet.bin"), &outcome.q_net)?;
    ctx.write_text("train-log.csv", &outcome.log.to_csv())?;
    ctx.write_json(
        "run.json",
        &serde_json::json!({
            "command": "train-fqe",
            "variant": variant,
            "estimate": estimate,
            "rho_e": rho_e,
            "rho_rand": rho_rand,
            "rmae": rmae,
            "diverged": outcome.diverged,
            "effective_clip_range": outcome.log.effective_clip_range,
            "target_range_seen": outcome.log.target_range_seen,
            "trace": outcome.estimate_trace,
            "config": cfg,
        }),
    )?;
    println!(
        "fqe[{variant}]: estimate={estimate:.4} rmae={rmae:.4} diverged={}",
        outcome.diverged
    );
    if outcome.diverged && ctx.strict {
        return Ok(Outcome::Divergence);
    }
    Ok(Outcome::Success)
}

fn dp_reference(mdp: &TabularMdp, pi_e: &PolicyTable) -> anyhow::Result<(f64, f64)> {
    let q_e: QTable = policy_evaluation_q(mdp, pi_e, 1e-10, 1_000_000)?;
    let rho_e = policy_value(mdp, pi_e, &q_e);
    let uniform = PolicyTable::uniform(mdp.n_states, mdp.n_actions);
    let q_rand = policy_evaluation_q(mdp, &uniform, 1e-10, 1_000_000)?;
    Ok((rho_e, policy_value(mdp, &uniform, &q_rand)))
}

/// Shared implementation of `evaluate` (artifacts on) and `sweep`
/// (aggregates only).
pub fn evaluate(ctx: &Context, with_artifacts: bool) -> anyhow::Result<Outcome> {
    let config_path = ctx
        .config
        .as_ref()
        .context("evaluate/sweep needs --config FILE")?;
    let text = fs::read_to_string(config_path)
        .with_context(|| format!("reading {}", config_path.display()))?;
    let mut config: ExperimentConfig = toml::from_str(&text).context("parsing config")?;
    if let Some(seed) = ctx.seed {
        // CLI flag overrides the config file's seed bases.
        config.fqe.seed = seed;
        config.encoder.seed = seed;
    }
    ctx.prepare_out()?;
    ctx.write_text("effective-config.toml", &toml::to_string_pretty(&config)?)?;

    let out_dir = ctx.out.clone();
    let report: EvalReport = run_sweep_with(&config, |record, artifacts| {
        if !with_artifacts {
            return Ok(());
        }
        let tag = format!(
            "{}-{}-s{}",
            record.algorithm,
            record
                .hyperparams
                .replace(['=', ','], "_")
                .replace('.', "p"),
            record.seed
        );
        checkpoint::save_net(out_dir.join(format!("{tag}-qnet.bin")), &artifacts.q_net)?;
        std::fs::write(
            out_dir.join(format!("{tag}-fqe-log.csv")),
            artifacts.fqe_log.to_csv(),
        )?;
        if let Some(enc) = &artifacts.encoder {
            checkpoint::save_encoder(out_dir.join(format!("{tag}-encoder.bin")), enc)?;
        }
        if let Some(log) = &artifacts.rope_log {
            std::fs::write(out_dir.join(format!("{tag}-rope-log.csv")), log.to_csv())?;
        }
        Ok(())
    })?;

    ctx.write_text("report.json", &(report.to_json()? + "\n"))?;
    ctx.write_text("runs.csv", &report.runs_csv())?;
    ctx.write_text("profile.csv", &report.profile_csv())?;
    for s in &report.summaries {
        println!(
            "{}: iqm_rmae={:.4} ci=[{:.4}, {:.4}] best={} ({:.4}) diverged={}/{} failed={}",
            s.algorithm,
            s.pooled_iqm_rmae,
            s.ci_lo,
            s.ci_hi,
            s.best_point,
            s.best_point_iqm_rmae,
            s.n_diverged,
            s.n_runs,
            s.n_failed
        );
    }
    let any_diverged = report.runs.iter().any(|r| r.diverged);
    if any_diverged && ctx.strict {
        return Ok(Outcome::Divergence);
    }
    Ok(Outcome::Success)
}
