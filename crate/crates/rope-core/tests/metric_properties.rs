//! Property tests for the distance operators over seeded random MDPs.

use ndarray::Array2;
use proptest::prelude::*;

use rope_core::mdp::{build_random_mdp, build_random_policy, PolicyTable};
use rope_core::metric::{
    group_zero_distance, solve_fixed_point_observed, DistanceOperator, DistanceTable, MetricKind,
};

fn arb_kind() -> impl Strategy<Value = MetricKind> {
    prop_oneof![
        Just(MetricKind::Rope),
        Just(MetricKind::MicoOnPolicy),
        Just(MetricKind::Psm),
        Just(MetricKind::RandomPolicy),
    ]
}

fn instance(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
) -> (rope_core::mdp::TabularMdp, PolicyTable) {
    let mdp = build_random_mdp(n_states, n_actions, gamma, seed).unwrap();
    let pi = build_random_policy(n_states, n_actions, seed + 1).unwrap();
    (mdp, pi)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(32))]

    /// One operator application preserves symmetry of symmetric inputs up
    /// to roundoff.
    #[test]
    fn symmetry_is_preserved(
        kind in arb_kind(),
        seed in 0u64..500,
        n_states in 2usize..6,
        n_actions in 1usize..4,
    ) {
        let (mdp, pi) = instance(n_states, n_actions, 0.9, seed);
        let op = DistanceOperator::new(kind, &mdp, &pi).unwrap();
        let n = mdp.n_state_actions();
        // symmetric input with zero diagonal
        let mut d = Array2::zeros((n, n));
        for i in 0..n {
            for j in (i + 1)..n {
                let v = ((seed as usize + i * 31 + j * 7) % 17) as f64 / 17.0;
                d[[i, j]] = v;
                d[[j, i]] = v;
            }
        }
        let next = op.apply(&d).unwrap();
        for i in 0..n {
            for j in 0..n {
                prop_assert!((next[[i, j]] - next[[j, i]]).abs() <= 1e-10);
            }
        }
    }

    /// The operators are monotone: d1 <= d2 entrywise implies
    /// F(d1) <= F(d2) entrywise.
    #[test]
    fn operators_are_monotone(
        kind in arb_kind(),
        seed in 0u64..500,
        n_states in 2usize..6,
    ) {
        let (mdp, pi) = instance(n_states, 2, 0.9, seed);
        let op = DistanceOperator::new(kind, &mdp, &pi).unwrap();
        let n = mdp.n_state_actions();
        let d1 = Array2::from_shape_fn((n, n), |(i, j)| {
            ((seed as usize + i * 13 + j * 5) % 11) as f64 / 11.0
        });
        let bump = Array2::from_shape_fn((n, n), |(i, j)| {
            ((seed as usize + i * 3 + j * 17) % 7) as f64 / 7.0
        });
        let d2 = &d1 + &bump;
        let f1 = op.apply(&d1).unwrap();
        let f2 = op.apply(&d2).unwrap();
        for (a, b) in f1.iter().zip(f2.iter()) {
            prop_assert!(a <= b);
        }
    }

    /// Iterates from the zero table are entrywise nondecreasing for the
    /// reward-difference operators.
    #[test]
    fn iterates_from_zero_are_nondecreasing(
        kind in prop_oneof![
            Just(MetricKind::Rope),
            Just(MetricKind::MicoOnPolicy),
            Just(MetricKind::RandomPolicy),
        ],
        seed in 0u64..500,
    ) {
        let (mdp, pi) = instance(4, 2, 0.9, seed);
        let mut previous: Option<Array2<f64>> = None;
        let mut monotone = true;
        solve_fixed_point_observed(kind, &mdp, &pi, 1e-6, 200, |_, values| {
            if let Some(prev) = &previous {
                if prev.iter().zip(values.iter()).any(|(p, v)| v < p) {
                    monotone = false;
                }
            }
            previous = Some(values.clone());
        }).unwrap();
        prop_assert!(monotone);
    }

    /// Group ids are contiguous from zero and ordered by smallest member.
    #[test]
    fn group_ids_are_canonical(seed in 0u64..500, tol in 0.0f64..0.5) {
        let (mdp, pi) = instance(4, 2, 0.9, seed);
        let d = rope_core::metric::solve_fixed_point(MetricKind::Rope, &mdp, &pi, 1e-10, 10_000)
            .unwrap();
        let groups = group_zero_distance(&d, tol, &mdp.pair_terminal_mask()).unwrap();
        let mut first_seen = Vec::new();
        for id in groups.group_ids.iter().flatten() {
            if !first_seen.contains(id) {
                first_seen.push(*id);
            }
        }
        // ids appear in increasing order of first occurrence: 0, 1, 2, ...
        prop_assert_eq!(first_seen, (0..groups.n_groups).collect::<Vec<_>>());
    }
}

#[test]
fn mico_with_pi_e_equals_rope_fixed_point() {
    // When the behavior policy *is* the evaluation policy, the two
    // operators coincide, so their fixed points do too.
    let (mdp, pi) = instance(5, 3, 0.9, 123);
    let rope =
        rope_core::metric::solve_fixed_point(MetricKind::Rope, &mdp, &pi, 1e-12, 100_000).unwrap();
    let mico =
        rope_core::metric::solve_fixed_point(MetricKind::MicoOnPolicy, &mdp, &pi, 1e-12, 100_000)
            .unwrap();
    let diff = (&rope.values - &mico.values)
        .iter()
        .fold(0.0_f64, |m, v| m.max(v.abs()));
    assert!(diff <= 1e-12, "fixed points differ by {diff}");
}

#[test]
fn converged_tables_satisfy_their_invariants() {
    let (mdp, pi) = instance(5, 2, 0.9, 9);
    for kind in MetricKind::ALL {
        let d = rope_core::metric::solve_fixed_point(kind, &mdp, &pi, 1e-10, 10_000).unwrap();
        assert!(d.converged);
        assert!(d.values.iter().all(|&v| v >= 0.0), "{kind:?} negativity");
        let once_more: DistanceTable = match kind {
            MetricKind::Rope => rope_core::metric::apply_rope_operator(&d, &mdp, &pi).unwrap(),
            MetricKind::MicoOnPolicy => {
                rope_core::metric::apply_mico_onpolicy_operator(&d, &mdp, &pi).unwrap()
            }
            MetricKind::Psm => rope_core::metric::apply_psm_operator(&d, &mdp, &pi).unwrap(),
            MetricKind::RandomPolicy => {
                rope_core::metric::apply_random_policy_operator(&d, &mdp).unwrap()
            }
        };
        assert!(once_more.residual <= 1e-10, "{kind:?} not a fixed point");
    }
}
