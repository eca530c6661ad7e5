//! Property verification for converged distance tables.

use serde::{Deserialize, Serialize};

use super::DistanceTable;
use crate::mdp::QTable;

/// Worst-case violations of the diffuse-metric axioms over a table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DiffuseMetricReport {
    /// `max(0, -min entry)`: how far below zero any distance falls.
    pub negativity: f64,
    /// `max |d(x,y) - d(y,x)|`.
    pub asymmetry: f64,
    /// `max over (x,y,z) of d(x,z) - d(x,y) - d(y,z)`, clamped at 0.
    pub triangle_violation: f64,
    /// Smallest self-distance (diffuse metrics allow it to be positive).
    pub min_self_distance: f64,
    /// Largest self-distance.
    pub max_self_distance: f64,
    pub tolerance: f64,
    pub pass: bool,
}

/// Measure the diffuse-metric axioms on `d`: nonnegativity, symmetry, and
/// the triangle inequality, each up to `tol`. Self-distances are reported
/// but not judged.
pub fn check_diffuse_metric(d: &DistanceTable, tol: f64) -> DiffuseMetricReport {
    let n = d.n_pairs();
    let v = &d.values;

    let mut negativity = 0.0_f64;
    let mut asymmetry = 0.0_f64;
    for x in 0..n {
        for y in 0..n {
            negativity = negativity.max(-v[[x, y]]);
            asymmetry = asymmetry.max((v[[x, y]] - v[[y, x]]).abs());
        }
    }

    let mut triangle_violation = 0.0_f64;
    for x in 0..n {
        for z in 0..n {
            let direct = v[[x, z]];
            for y in 0..n {
                triangle_violation = triangle_violation.max(direct - v[[x, y]] - v[[y, z]]);
            }
        }
    }

    let mut min_self = f64::INFINITY;
    let mut max_self = f64::NEG_INFINITY;
    for x in 0..n {
        min_self = min_self.min(v[[x, x]]);
        max_self = max_self.max(v[[x, x]]);
    }

    let pass = negativity <= tol && asymmetry <= tol && triangle_violation <= tol;
    DiffuseMetricReport {
        negativity,
        asymmetry,
        triangle_violation: triangle_violation.max(0.0),
        min_self_distance: min_self,
        max_self_distance: max_self,
        tolerance: tol,
        pass,
    }
}

/// Largest value of `|q(x1) - q(x2)| - d(x1, x2)` over all pairs: how far
/// action-value differences exceed the distance. The converged
/// evaluation-policy metric upper-bounds those differences, so anything
/// above numerical tolerance is a violation.
pub fn action_value_gap_excess(q: &QTable, d: &DistanceTable) -> f64 {
    let flat = q.flat();
    assert_eq!(flat.len(), d.n_pairs(), "q and d index different spaces");
    let mut worst = f64::NEG_INFINITY;
    for x1 in 0..flat.len() {
        for x2 in 0..flat.len() {
            let gap = (flat[x1] - flat[x2]).abs() - d.values[[x1, x2]];
            worst = worst.max(gap);
        }
    }
    worst
}
