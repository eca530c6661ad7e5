//! Parallel vs sequential distance-operator sweeps.
//!
//! Run with `cargo bench -p rope-core`; disable the rayon path entirely with
//! `cargo bench -p rope-core --no-default-features`.

use criterion::{criterion_group, criterion_main, BenchmarkId, Criterion};
use std::hint::black_box;

use ndarray::Array2;
use rope_core::mdp::{build_random_mdp, build_random_policy};
use rope_core::metric::{solve_fixed_point, DistanceOperator, MetricKind};

fn operator_apply(c: &mut Criterion) {
    let mut group = c.benchmark_group("operator_apply");
    for &n_states in &[16usize, 48, 96] {
        let n_actions = 4;
        let mdp = build_random_mdp(n_states, n_actions, 0.9, 7).unwrap();
        let pi = build_random_policy(n_states, n_actions, 8).unwrap();
        let op = DistanceOperator::new(MetricKind::Rope, &mdp, &pi).unwrap();
        let n = mdp.n_state_actions();
        let d = Array2::from_shape_fn((n, n), |(i, j)| ((i * 31 + j) % 17) as f64 / 17.0);

        group.bench_with_input(BenchmarkId::new("parallel", n), &d, |b, d| {
            b.iter(|| op.apply(black_box(d)).unwrap())
        });
        group.bench_with_input(BenchmarkId::new("sequential", n), &d, |b, d| {
            b.iter(|| op.apply_seq(black_box(d)).unwrap())
        });
    }
    group.finish();
}

fn fixed_point_solve(c: &mut Criterion) {
    let mut group = c.benchmark_group("fixed_point_solve");
    group.sample_size(10);
    let mdp = build_random_mdp(32, 4, 0.9, 7).unwrap();
    let pi = build_random_policy(32, 4, 8).unwrap();
    for kind in MetricKind::ALL {
        group.bench_function(kind.name(), |b| {
            b.iter(|| solve_fixed_point(kind, &mdp, &pi, 1e-8, 10_000).unwrap())
        });
    }
    group.finish();
}

criterion_group!(benches, operator_apply, fixed_point_solve);
criterion_main!(benches);
