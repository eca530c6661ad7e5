//! Exact dynamic-programming computation of behavioral distances over
//! state-action pairs: the evaluation-policy metric and three comparison
//! metrics, fixed-point solving, zero-distance grouping, and the property
//! checks backing the theory.

mod grouping;
mod operator;
mod properties;
mod solve;

pub use grouping::{group_by_closeness, group_zero_distance, q_level_groups, GroupAssignment};
pub use operator::{
    apply_mico_onpolicy_operator, apply_psm_operator, apply_random_policy_operator,
    apply_rope_operator, DistanceOperator,
};
pub use properties::{action_value_gap_excess, check_diffuse_metric, DiffuseMetricReport};
pub use solve::{solve_fixed_point, solve_fixed_point_observed};

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Default sup-norm tolerance for fixed-point solves.
pub const DEFAULT_METRIC_TOL: f64 = 1e-10;
/// Default sweep cap for fixed-point solves.
pub const DEFAULT_MAX_SWEEPS: usize = 10_000;
/// Default tolerance for zero-distance grouping.
pub const DEFAULT_GROUP_TOL: f64 = 1e-8;

pub const DISTANCE_SCHEMA_VERSION: u32 = 1;

/// Which distance operator a table was produced by.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum MetricKind {
    /// Short-term reward difference, next actions from the evaluation policy.
    Rope,
    /// Same operator with next actions from the behavior policy.
    MicoOnPolicy,
    /// Short-term action-probability difference under the evaluation policy.
    Psm,
    /// Reward difference with a single shared uniform next action.
    RandomPolicy,
}

impl MetricKind {
    pub const ALL: [MetricKind; 4] = [
        MetricKind::Rope,
        MetricKind::MicoOnPolicy,
        MetricKind::Psm,
        MetricKind::RandomPolicy,
    ];

    pub fn name(&self) -> &'static str {
        match self {
            MetricKind::Rope => "rope",
            MetricKind::MicoOnPolicy => "mico",
            MetricKind::Psm => "psm",
            MetricKind::RandomPolicy => "random",
        }
    }
}

impl std::str::FromStr for MetricKind {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s {
            "rope" => Ok(MetricKind::Rope),
            "mico" | "mico-onpolicy" => Ok(MetricKind::MicoOnPolicy),
            "psm" => Ok(MetricKind::Psm),
            "random" | "random-policy" => Ok(MetricKind::RandomPolicy),
            other => Err(Error::validation(format!("unknown metric '{other}'"))),
        }
    }
}

/// Pairwise distance matrix over flat state-action indices.
#[derive(Debug, Clone, PartialEq)]
pub struct DistanceTable {
    pub values: Array2<f64>,
    pub metric_kind: MetricKind,
    pub converged: bool,
    /// Sup-norm change of the last operator application.
    pub residual: f64,
}

impl DistanceTable {
    /// The all-zero table the fixed-point iteration starts from.
    pub fn zero(metric_kind: MetricKind, n_pairs: usize) -> Self {
        DistanceTable {
            values: Array2::zeros((n_pairs, n_pairs)),
            metric_kind,
            converged: false,
            residual: f64::INFINITY,
        }
    }

    pub fn n_pairs(&self) -> usize {
        self.values.nrows()
    }

    pub fn distance(&self, x1: usize, x2: usize) -> f64 {
        self.values[[x1, x2]]
    }

    /// Largest absolute entry.
    pub fn sup_norm(&self) -> f64 {
        self.values.iter().fold(0.0_f64, |m, &v| m.max(v.abs()))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = DistanceDocument {
            schema_version: DISTANCE_SCHEMA_VERSION,
            metric: self.metric_kind,
            n_state_actions: self.n_pairs(),
            converged: self.converged,
            residual: self.residual,
            values: self.values.rows().into_iter().map(|r| r.to_vec()).collect(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: DistanceDocument = serde_json::from_str(text)?;
        if doc.schema_version != DISTANCE_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: doc.schema_version,
                expected: DISTANCE_SCHEMA_VERSION,
            });
        }
        let n = doc.n_state_actions;
        if doc.values.len() != n || doc.values.iter().any(|r| r.len() != n) {
            return Err(Error::format("distance matrix is not n x n".to_string()));
        }
        let mut values = Array2::zeros((n, n));
        for (i, row) in doc.values.iter().enumerate() {
            for (j, &v) in row.iter().enumerate() {
                values[[i, j]] = v;
            }
        }
        Ok(DistanceTable {
            values,
            metric_kind: doc.metric,
            converged: doc.converged,
            residual: doc.residual,
        })
    }
}

#[derive(Serialize, Deserialize)]
struct DistanceDocument {
    schema_version: u32,
    metric: MetricKind,
    n_state_actions: usize,
    converged: bool,
    residual: f64,
    values: Vec<Vec<f64>>,
}

/// Sup-norm distance between two matrices of equal shape.
pub(crate) fn sup_norm_diff(a: &Array2<f64>, b: &Array2<f64>) -> f64 {
    a.iter()
        .zip(b.iter())
        .fold(0.0_f64, |m, (&x, &y)| m.max((x - y).abs()))
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn metric_kind_round_trips_names() {
        for kind in MetricKind::ALL {
            assert_eq!(kind.name().parse::<MetricKind>().unwrap(), kind);
        }
    }

    #[test]
    fn json_round_trip() {
        let mut table = DistanceTable::zero(MetricKind::Rope, 3);
        table.values[[0, 1]] = 0.25;
        table.values[[1, 0]] = 0.25;
        table.converged = true;
        table.residual = 1e-12;
        let text = table.to_json().unwrap();
        let back = DistanceTable::from_json(&text).unwrap();
        assert_eq!(table, back);
    }
}
