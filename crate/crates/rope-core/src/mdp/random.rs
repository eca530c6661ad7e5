//! Seeded random MDP generators for property suites.

use ndarray::{Array1, Array2, Array3};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rand_distr::{Dirichlet, Distribution};

use super::{PolicyTable, TabularMdp};
use crate::error::{Error, Result};

/// Random MDP with transition rows drawn from a flat Dirichlet and rewards
/// uniform in `[0, 1]`. No terminal states; the initial distribution is
/// uniform. Deterministic given `seed`.
pub fn build_random_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
) -> Result<TabularMdp> {
    if n_states < 2 || n_actions < 1 {
        return Err(Error::validation(format!(
            "need n_states >= 2 and n_actions >= 1, got {n_states} and {n_actions}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let dirichlet = Dirichlet::new_with_size(1.0, n_states)
        .map_err(|e| Error::validation(format!("dirichlet: {e}")))?;

    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    let mut reward = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        for a in 0..n_actions {
            let row = dirichlet.sample(&mut rng);
            // Renormalize so the stored row sums to 1 at f64 precision.
            let sum: f64 = row.iter().sum();
            for (s2, &p) in row.iter().enumerate() {
                transition[[s, a, s2]] = p / sum;
            }
            fixup_row_sum(&mut transition, s, a, n_states);
            reward[[s, a]] = rng.gen::<f64>();
        }
    }

    TabularMdp::new(
        transition,
        reward,
        gamma,
        Array1::from_elem(n_states, 1.0 / n_states as f64),
        vec![false; n_states],
    )
}

/// Random MDP with deterministic transitions (each row a point mass) and
/// rewards uniform in `[0, 1]`. Used by the pseudo-metric checks, which need
/// zero self-distances.
pub fn build_deterministic_mdp(
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    seed: u64,
) -> Result<TabularMdp> {
    if n_states < 2 || n_actions < 1 {
        return Err(Error::validation(format!(
            "need n_states >= 2 and n_actions >= 1, got {n_states} and {n_actions}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transition = Array3::zeros((n_states, n_actions, n_states));
    let mut reward = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        for a in 0..n_actions {
            let s2 = rng.gen_range(0..n_states);
            transition[[s, a, s2]] = 1.0;
            reward[[s, a]] = rng.gen::<f64>();
        }
    }
    TabularMdp::new(
        transition,
        reward,
        gamma,
        Array1::from_elem(n_states, 1.0 / n_states as f64),
        vec![false; n_states],
    )
}

/// Random stochastic policy with rows from a flat Dirichlet; deterministic
/// given `seed`.
pub fn build_random_policy(n_states: usize, n_actions: usize, seed: u64) -> Result<PolicyTable> {
    if n_states < 1 || n_actions < 1 {
        return Err(Error::validation(
            "policy needs states and actions".to_string(),
        ));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut probs = Array2::zeros((n_states, n_actions));
    for s in 0..n_states {
        // Exponential draws normalized in place (flat Dirichlet).
        let draws: Vec<f64> = (0..n_actions)
            .map(|_| -(rng.gen_range(f64::EPSILON..1.0)).ln())
            .collect();
        let sum: f64 = draws.iter().sum();
        for (a, d) in draws.iter().enumerate() {
            probs[[s, a]] = d / sum;
        }
        let row_sum: f64 = (0..n_actions).map(|a| probs[[s, a]]).sum();
        let err = row_sum - 1.0;
        if err != 0.0 {
            let argmax = (0..n_actions)
                .max_by(|&i, &j| probs[[s, i]].partial_cmp(&probs[[s, j]]).unwrap())
                .unwrap();
            probs[[s, argmax]] -= err;
        }
    }
    PolicyTable::new(probs)
}

/// Nudge the largest entry of a sampled row so the f64 sum is exactly 1,
/// keeping within the 1e-12 validation tolerance regardless.
fn fixup_row_sum(transition: &mut Array3<f64>, s: usize, a: usize, n_states: usize) {
    let sum: f64 = (0..n_states).map(|s2| transition[[s, a, s2]]).sum();
    let err = sum - 1.0;
    if err != 0.0 {
        let argmax = (0..n_states)
            .max_by(|&i, &j| {
                transition[[s, a, i]]
                    .partial_cmp(&transition[[s, a, j]])
                    .unwrap()
            })
            .unwrap();
        transition[[s, a, argmax]] -= err;
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn same_seed_is_bit_identical() {
        let a = build_random_mdp(5, 3, 0.9, 42).unwrap();
        let b = build_random_mdp(5, 3, 0.9, 42).unwrap();
        assert_eq!(a, b);
        let c = build_random_mdp(5, 3, 0.9, 43).unwrap();
        assert_ne!(a, c);
    }

    #[test]
    fn rewards_in_unit_interval() {
        let mdp = build_random_mdp(6, 3, 0.5, 7).unwrap();
        assert!(mdp.reward.iter().all(|&r| (0.0..=1.0).contains(&r)));
    }

    #[test]
    fn rows_sum_to_one() {
        let mdp = build_random_mdp(6, 3, 0.5, 11).unwrap();
        for s in 0..6 {
            for a in 0..3 {
                let sum: f64 = mdp.transition.slice(ndarray::s![s, a, ..]).sum();
                assert!((sum - 1.0).abs() <= 1e-12);
            }
        }
    }

    #[test]
    fn rejects_degenerate_sizes() {
        assert!(build_random_mdp(1, 2, 0.9, 0).is_err());
        assert!(build_random_mdp(3, 0, 0.9, 0).is_err());
    }

    #[test]
    fn deterministic_builder_has_point_mass_rows() {
        let mdp = build_deterministic_mdp(4, 2, 0.9, 3).unwrap();
        for s in 0..4 {
            for a in 0..2 {
                let row = mdp.transition.slice(ndarray::s![s, a, ..]);
                assert_eq!(row.iter().filter(|&&p| p == 1.0).count(), 1);
                assert_eq!(row.iter().filter(|&&p| p == 0.0).count(), 3);
            }
        }
    }
}
