//! Fixed-point iteration for the distance operators.

use ndarray::Array2;

use super::{sup_norm_diff, DistanceOperator, DistanceTable, MetricKind};
use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, TabularMdp};

/// Iterate the operator from the all-zero table until the sup-norm change of
/// a sweep is at most `tol`. If `max_iter` sweeps do not get there, the table
/// is returned with `converged == false` and the last change as residual.
pub fn solve_fixed_point(
    kind: MetricKind,
    mdp: &TabularMdp,
    policy: &PolicyTable,
    tol: f64,
    max_iter: usize,
) -> Result<DistanceTable> {
    solve_fixed_point_observed(kind, mdp, policy, tol, max_iter, |_, _| {})
}

/// [`solve_fixed_point`] with a per-sweep observer. The observer receives the
/// sweep number (starting at 1) and the table after that sweep; it is called
/// on every sweep, which the convergence-rate checks rely on.
pub fn solve_fixed_point_observed(
    kind: MetricKind,
    mdp: &TabularMdp,
    policy: &PolicyTable,
    tol: f64,
    max_iter: usize,
    mut observe: impl FnMut(usize, &Array2<f64>),
) -> Result<DistanceTable> {
    if tol <= 0.0 {
        return Err(Error::validation("tol must be positive".to_string()));
    }
    let op = DistanceOperator::new(kind, mdp, policy)?;
    let mut values = Array2::zeros((op.n_pairs(), op.n_pairs()));
    let mut residual = f64::INFINITY;
    for sweep in 1..=max_iter {
        let next = op.apply(&values)?;
        residual = sup_norm_diff(&next, &values);
        values = next;
        observe(sweep, &values);
        if residual <= tol {
            return Ok(DistanceTable {
                values,
                metric_kind: kind,
                converged: true,
                residual,
            });
        }
    }
    Ok(DistanceTable {
        values,
        metric_kind: kind,
        converged: false,
        residual,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, build_random_mdp};
    use crate::metric::{apply_rope_operator, DEFAULT_MAX_SWEEPS, DEFAULT_METRIC_TOL};

    #[test]
    fn converged_table_is_a_fixed_point() {
        let gw = build_gridworld();
        let d = solve_fixed_point(
            MetricKind::Rope,
            &gw.mdp,
            &gw.pi_e,
            DEFAULT_METRIC_TOL,
            DEFAULT_MAX_SWEEPS,
        )
        .unwrap();
        assert!(d.converged);
        let once_more = apply_rope_operator(&d, &gw.mdp, &gw.pi_e).unwrap();
        assert!(once_more.residual <= DEFAULT_METRIC_TOL);
    }

    #[test]
    fn sweep_count_respects_contraction_bound() {
        let gw = build_gridworld();
        let tol = 1e-10;
        let mut sweeps = 0;
        let _ = solve_fixed_point_observed(
            MetricKind::Rope,
            &gw.mdp,
            &gw.pi_e,
            tol,
            DEFAULT_MAX_SWEEPS,
            |t, _| sweeps = t,
        )
        .unwrap();
        // Reward differences span at most r_range, so the fixed point is
        // bounded by r_range / (1 - gamma) and the iterate error shrinks by
        // gamma each sweep.
        let r_range = 2.0 * gw.mdp.max_abs_reward();
        let gamma = gw.mdp.gamma;
        let bound = ((tol * (1.0 - gamma) / r_range).ln() / gamma.ln()).ceil() as usize;
        assert!(
            sweeps <= bound,
            "took {sweeps} sweeps, contraction bound {bound}"
        );
    }

    #[test]
    fn max_iter_exceeded_reports_unconverged() {
        let mdp = build_random_mdp(4, 2, 0.99, 0).unwrap();
        let pi = PolicyTable::uniform(4, 2);
        let d = solve_fixed_point(MetricKind::Rope, &mdp, &pi, 1e-12, 3).unwrap();
        assert!(!d.converged);
        assert!(d.residual > 1e-12);
    }

    #[test]
    fn iterate_error_decays_at_contraction_rate() {
        let mdp = build_random_mdp(5, 2, 0.9, 21).unwrap();
        let pi = PolicyTable::uniform(5, 2);
        // Reference solved much tighter than the traced run.
        let reference = solve_fixed_point(MetricKind::Rope, &mdp, &pi, 1e-13, 100_000)
            .unwrap()
            .values;
        let init_err = reference.iter().fold(0.0_f64, |m, &v| m.max(v.abs()));
        let mut ok = true;
        let _ = solve_fixed_point_observed(
            MetricKind::Rope,
            &mdp,
            &pi,
            1e-10,
            DEFAULT_MAX_SWEEPS,
            |t, values| {
                let err = sup_norm_diff(values, &reference);
                let bound = mdp.gamma.powi(t as i32) * init_err + 1e-9;
                if err > bound {
                    ok = false;
                }
            },
        )
        .unwrap();
        assert!(ok);
    }
}
