mod commands;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

/// How a command finished; maps onto the process exit code.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Outcome {
    Success,
    /// A verified bound or check failed.
    BoundViolation,
    /// At least one run diverged and --strict was set.
    Divergence,
}

#[derive(Parser)]
#[command(
    name = "rope",
    version,
    about = "Off-policy evaluation workbench: behavioral metrics, aggregation bounds, and fitted Q-evaluation"
)]
struct Cli {
    /// Master seed; all command randomness derives from it.
    #[arg(long, global = true)]
    seed: Option<u64>,

    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "rope-out")]
    out: PathBuf,

    /// Experiment config file (TOML) for evaluate/sweep.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    /// Exit with code 3 when any run diverges.
    #[arg(long, global = true)]
    strict: bool,

    /// Write into an existing, nonempty output directory.
    #[arg(long, global = true)]
    force: bool,

    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct EnvArgs {
    /// Environment: "gridworld" or "random-mdp".
    #[arg(long, default_value = "gridworld")]
    env: String,

    /// States of the random MDP.
    #[arg(long, default_value_t = 5)]
    n_states: usize,

    /// Actions of the random MDP.
    #[arg(long, default_value_t = 3)]
    n_actions: usize,

    /// Discount of the random MDP (gridworld is fixed at 0.99).
    #[arg(long, default_value_t = 0.9)]
    gamma: f64,
}

#[derive(Args, Clone)]
struct FeatureArgs {
    /// Feature map: "one-hot", "redundant", or "from-dataset".
    #[arg(long, default_value = "one-hot")]
    features: String,

    /// Noise dimensions of the redundant map.
    #[arg(long, default_value_t = 16)]
    noise_dims: usize,
}

#[derive(Args, Clone)]
struct TrainArgs {
    /// Config preset: "desk" or "paper".
    #[arg(long, default_value = "desk")]
    preset: String,

    /// Gradient steps (overrides the preset).
    #[arg(long)]
    steps: Option<usize>,

    #[arg(long)]
    learning_rate: Option<f64>,

    #[arg(long)]
    batch_size: Option<usize>,

    /// Comma-separated hidden layer widths, e.g. "64,64".
    #[arg(long)]
    hidden: Option<String>,

    #[arg(long)]
    tau: Option<f64>,

    #[arg(long)]
    target_update_every: Option<usize>,

    /// "sgd" or "adam".
    #[arg(long)]
    optimizer: Option<String>,

    #[arg(long)]
    weight_decay: Option<f64>,
}

#[derive(Subcommand)]
enum Command {
    /// Roll out a behavior policy and write a transition dataset.
    MakeDataset {
        #[command(flatten)]
        env: EnvArgs,

        #[arg(long, default_value_t = 2_000)]
        n_transitions: usize,

        /// "uniform" or "pi-e".
        #[arg(long, default_value = "uniform")]
        behavior: String,

        #[arg(long, default_value_t = 100)]
        episode_cap: usize,

        /// Attach feature vectors: "none", "one-hot" or "redundant".
        #[arg(long, default_value = "none")]
        features: String,

        #[arg(long, default_value_t = 16)]
        noise_dims: usize,

        /// Require every pair supported by the evaluation policy to appear.
        #[arg(long)]
        check_coverage: bool,
    },

    /// Solve a behavioral metric to its fixed point and write the table.
    SolveMetric {
        #[command(flatten)]
        env: EnvArgs,

        /// "rope", "mico", "psm" or "random".
        #[arg(long, default_value = "rope")]
        metric: String,

        #[arg(long, default_value_t = 1e-10)]
        tol: f64,

        #[arg(long, default_value_t = 10_000)]
        max_sweeps: usize,
    },

    /// Zero-distance groups of a metric on the gridworld, compared against
    /// the action-value level sets.
    Groupings {
        #[command(flatten)]
        env: EnvArgs,

        #[arg(long, default_value = "rope")]
        metric: String,

        /// Grouping tolerance.
        #[arg(long, default_value_t = 1e-8)]
        tol: f64,
    },

    /// Verify the aggregation value-gap bounds over epsilon-clusterings.
    VerifyBounds {
        #[command(flatten)]
        env: EnvArgs,

        /// Comma-separated cluster radii.
        #[arg(long, default_value = "0,0.05,0.1,0.2")]
        epsilons: String,

        /// Number of seeded random MDPs (ignored for the gridworld).
        #[arg(long, default_value_t = 100)]
        mdps: usize,

        /// Inject a fault into the clustered values (negative test).
        #[arg(long, hide = true)]
        corrupt: bool,
    },

    /// Train the state-action encoder from a dataset file.
    TrainRope {
        /// Dataset written by make-dataset.
        #[arg(long)]
        dataset: PathBuf,

        #[command(flatten)]
        env: EnvArgs,

        #[command(flatten)]
        features: FeatureArgs,

        #[command(flatten)]
        train: TrainArgs,

        /// Angular distance weight.
        #[arg(long, default_value_t = 10.0)]
        beta: f64,

        /// Encoder output dimension (defaults to |S| * |A|).
        #[arg(long)]
        output_dim: Option<usize>,
    },

    /// Train a fitted-Q network from a dataset file.
    TrainFqe {
        #[arg(long)]
        dataset: PathBuf,

        #[command(flatten)]
        env: EnvArgs,

        #[command(flatten)]
        features: FeatureArgs,

        #[command(flatten)]
        train: TrainArgs,

        /// Frozen encoder checkpoint to feed the Q network.
        #[arg(long)]
        encoder: Option<PathBuf>,

        /// "plain", "clip" or "deep".
        #[arg(long, default_value = "plain")]
        variant: String,
    },

    /// Run the end-to-end pipeline from an experiment config, writing
    /// checkpoints, logs, and the evaluation report.
    Evaluate,

    /// Run a multi-seed hyperparameter sweep from an experiment config.
    Sweep,
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(Outcome::Success) => ExitCode::SUCCESS,
        Ok(Outcome::BoundViolation) => ExitCode::from(2),
        Ok(Outcome::Divergence) => ExitCode::from(3),
        Err(err) => {
            eprintln!("error: {err:#}");
            ExitCode::from(1)
        }
    }
}

fn run(cli: Cli) -> anyhow::Result<Outcome> {
    let ctx = commands::Context {
        seed: cli.seed,
        out: cli.out.clone(),
        config: cli.config.clone(),
        strict: cli.strict,
        force: cli.force,
    };
    match cli.command {
        Command::MakeDataset {
            env,
            n_transitions,
            behavior,
            episode_cap,
            features,
            noise_dims,
            check_coverage,
        } => commands::make_dataset(
            &ctx,
            &env,
            n_transitions,
            &behavior,
            episode_cap,
            &features,
            noise_dims,
            check_coverage,
        ),
        Command::SolveMetric {
            env,
            metric,
            tol,
            max_sweeps,
        } => commands::solve_metric(&ctx, &env, &metric, tol, max_sweeps),
        Command::Groupings { env, metric, tol } => commands::groupings(&ctx, &env, &metric, tol),
        Command::VerifyBounds {
            env,
            epsilons,
            mdps,
            corrupt,
        } => commands::verify_bounds(&ctx, &env, &epsilons, mdps, corrupt),
        Command::TrainRope {
            dataset,
            env,
            features,
            train,
            beta,
            output_dim,
        } => commands::train_rope(&ctx, &dataset, &env, &features, &train, beta, output_dim),
        Command::TrainFqe {
            dataset,
            env,
            features,
            train,
            encoder,
            variant,
        } => commands::train_fqe(
            &ctx,
            &dataset,
            &env,
            &features,
            &train,
            encoder.as_deref(),
            &variant,
        ),
        Command::Evaluate => commands::evaluate(&ctx, true),
        Command::Sweep => commands::evaluate(&ctx, false),
    }
}
