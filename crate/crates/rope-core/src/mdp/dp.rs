//! Exact dynamic-programming policy evaluation.

use ndarray::Array2;

use super::{PolicyTable, QTable, TabularMdp};
use crate::error::{Error, Result};

/// Solve `q(s,a) = r(s,a) + gamma * E_{s' ~ P, a' ~ pi}[q(s',a')]` by
/// fixed-point iteration from zero until the sup-norm change is at most
/// `tol`.
pub fn policy_evaluation_q(
    mdp: &TabularMdp,
    policy: &PolicyTable,
    tol: f64,
    max_iter: usize,
) -> Result<QTable> {
    policy.check_matches(mdp)?;
    if tol <= 0.0 {
        return Err(Error::validation("tol must be positive".to_string()));
    }

    let n_s = mdp.n_states;
    let n_a = mdp.n_actions;
    let mut q = Array2::<f64>::zeros((n_s, n_a));
    let mut residual = f64::INFINITY;

    for _ in 0..max_iter {
        // State values under the current q: v(s) = sum_a pi(a|s) q(s,a).
        let mut v = vec![0.0; n_s];
        for s in 0..n_s {
            let mut acc = 0.0;
            for a in 0..n_a {
                acc += policy.probs[[s, a]] * q[[s, a]];
            }
            v[s] = acc;
        }

        residual = 0.0;
        for s in 0..n_s {
            for a in 0..n_a {
                let row = mdp.transition.slice(ndarray::s![s, a, ..]);
                let exp_next: f64 = row.iter().zip(v.iter()).map(|(p, vs)| p * vs).sum();
                let new = mdp.reward[[s, a]] + mdp.gamma * exp_next;
                residual = residual.max((new - q[[s, a]]).abs());
                q[[s, a]] = new;
            }
        }
        if residual <= tol {
            return Ok(QTable { values: q });
        }
    }
    Err(Error::NonConvergence { residual, max_iter })
}

/// Expected discounted return of `policy`:
/// `rho = sum_s d0(s) sum_a pi(a|s) q(s,a)`.
pub fn policy_value(mdp: &TabularMdp, policy: &PolicyTable, q: &QTable) -> f64 {
    let mut rho = 0.0;
    for s in 0..mdp.n_states {
        let mut inner = 0.0;
        for a in 0..mdp.n_actions {
            inner += policy.probs[[s, a]] * q.values[[s, a]];
        }
        rho += mdp.initial_dist[s] * inner;
    }
    rho
}

/// Sup-norm Bellman residual of `q` under (`mdp`, `policy`).
pub fn bellman_residual(mdp: &TabularMdp, policy: &PolicyTable, q: &QTable) -> f64 {
    let n_s = mdp.n_states;
    let n_a = mdp.n_actions;
    let mut v = vec![0.0; n_s];
    for (s, vs) in v.iter_mut().enumerate() {
        for a in 0..n_a {
            *vs += policy.probs[[s, a]] * q.values[[s, a]];
        }
    }
    let mut worst = 0.0_f64;
    for s in 0..n_s {
        for a in 0..n_a {
            let row = mdp.transition.slice(ndarray::s![s, a, ..]);
            let exp_next: f64 = row.iter().zip(v.iter()).map(|(p, vs)| p * vs).sum();
            let backed_up = mdp.reward[[s, a]] + mdp.gamma * exp_next;
            worst = worst.max((backed_up - q.values[[s, a]]).abs());
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::{arr1, Array3};

    fn constant_reward_loop(c: f64, gamma: f64) -> TabularMdp {
        TabularMdp::new(
            Array3::from_elem((1, 1, 1), 1.0),
            Array2::from_elem((1, 1), c),
            gamma,
            arr1(&[1.0]),
            vec![false],
        )
        .unwrap()
    }

    #[test]
    fn absorbing_terminal_is_zero_everywhere() {
        // Single terminal state: q must be exactly 0 for every action.
        let mut t = Array3::zeros((1, 2, 1));
        t[[0, 0, 0]] = 1.0;
        t[[0, 1, 0]] = 1.0;
        let mdp = TabularMdp::new(t, Array2::zeros((1, 2)), 0.9, arr1(&[1.0]), vec![true]).unwrap();
        let pi = PolicyTable::uniform(1, 2);
        let q = policy_evaluation_q(&mdp, &pi, 1e-12, 10_000).unwrap();
        assert_eq!(q.value(0, 0), 0.0);
        assert_eq!(q.value(0, 1), 0.0);
    }

    #[test]
    fn geometric_series_closed_form() {
        let mdp = constant_reward_loop(0.7, 0.9);
        let pi = PolicyTable::uniform(1, 1);
        let q = policy_evaluation_q(&mdp, &pi, 1e-13, 100_000).unwrap();
        assert!((q.value(0, 0) - 0.7 / 0.1).abs() < 1e-9);
    }

    #[test]
    fn residual_bounded_by_tol() {
        let mdp = constant_reward_loop(1.0, 0.5);
        let pi = PolicyTable::uniform(1, 1);
        let tol = 1e-10;
        let q = policy_evaluation_q(&mdp, &pi, tol, 100_000).unwrap();
        assert!(bellman_residual(&mdp, &pi, &q) <= tol);
    }

    #[test]
    fn non_convergence_reports_residual() {
        let mdp = constant_reward_loop(1.0, 0.99);
        let pi = PolicyTable::uniform(1, 1);
        match policy_evaluation_q(&mdp, &pi, 1e-12, 3) {
            Err(Error::NonConvergence { residual, max_iter }) => {
                assert!(residual > 0.0);
                assert_eq!(max_iter, 3);
            }
            other => panic!("expected NonConvergence, got {other:?}"),
        }
    }

    #[test]
    fn policy_value_point_mass() {
        let mdp = constant_reward_loop(2.0, 0.5);
        let pi = PolicyTable::uniform(1, 1);
        let q = policy_evaluation_q(&mdp, &pi, 1e-12, 100_000).unwrap();
        // Point-mass d0 and pi: rho = q[s0][a0] = 2 / (1 - 0.5).
        assert!((policy_value(&mdp, &pi, &q) - 4.0).abs() < 1e-9);
    }

    #[test]
    fn policy_value_zero_q() {
        let mdp = constant_reward_loop(2.0, 0.5);
        let pi = PolicyTable::uniform(1, 1);
        let q = QTable {
            values: Array2::zeros((1, 1)),
        };
        assert_eq!(policy_value(&mdp, &pi, &q), 0.0);
    }
}
