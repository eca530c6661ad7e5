//! Throughput of the two training loops at desk scale, plus the sweep
//! pool running several seeds concurrently (parallel with the default
//! feature set, sequential without).

use criterion::{criterion_group, criterion_main, Criterion};

use rope_core::eval::{
    run_sweep, Algorithm, AlgorithmConfig, DatasetConfig, EnvConfig, ExperimentConfig,
    FeatureConfig,
};
use rope_core::mdp::{build_gridworld, generate_dataset};
use rope_core::neural::{fqe_train, rope_train, FeatureMap, OptimizerKind, QInput, TrainConfig};

fn short_config(steps: usize, seed: u64) -> TrainConfig {
    TrainConfig {
        hidden_dims: vec![64, 64],
        learning_rate: 1e-3,
        weight_decay: 1e-5,
        batch_size: 128,
        total_gradient_steps: steps,
        target_tau: 0.05,
        target_update_every: 10,
        optimizer: OptimizerKind::Adam,
        seed,
        ..TrainConfig::desk_scale()
    }
}

fn training_loops(c: &mut Criterion) {
    let gw = build_gridworld();
    let dataset = generate_dataset(&gw.mdp, &gw.pi_b, 2_000, 7, 100).unwrap();
    let map = FeatureMap::redundant(9, 4, 16, 3);

    let mut group = c.benchmark_group("training_500_steps");
    group.sample_size(10);
    group.bench_function("encoder", |b| {
        b.iter(|| rope_train(&dataset, &gw.pi_e, &map, &short_config(500, 1), 10.0, 17).unwrap())
    });
    group.bench_function("fitted_q", |b| {
        let input = QInput::raw(&map);
        b.iter(|| fqe_train(&dataset, &gw.pi_e, &input, &short_config(500, 2), None).unwrap())
    });
    group.finish();
}

fn sweep_pool(c: &mut Criterion) {
    let config = ExperimentConfig {
        env: EnvConfig::Gridworld,
        dataset: DatasetConfig::Generate {
            n_transitions: 500,
            seed: 7,
            episode_cap: 100,
        },
        features: FeatureConfig::OneHot,
        algorithms: vec![AlgorithmConfig::plain(Algorithm::Fqe)],
        seeds: (0..4).collect(),
        fqe: TrainConfig {
            checkpoint_every: 200,
            ..short_config(400, 0)
        },
        encoder: short_config(200, 0),
        profile_thresholds: vec![0.1, 0.5, 1.0],
        bootstrap_resamples: 1_000,
        bootstrap_seed: 0,
        bootstrap_level: 0.95,
    };
    let mut group = c.benchmark_group("sweep_pool");
    group.sample_size(10);
    group.bench_function("four_seeds", |b| b.iter(|| run_sweep(&config).unwrap()));
    group.finish();
}

criterion_group!(benches, training_loops, sweep_pool);
criterion_main!(benches);
