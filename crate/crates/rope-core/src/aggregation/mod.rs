//! Epsilon-neighborhood clustering under a converged distance, the induced
//! clustered Markov reward process, and numerical verification of the
//! action-value and policy-value gap bounds.

use ndarray::Array2;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, QTable, TabularMdp};
use crate::metric::DistanceTable;

pub const BOUND_REPORT_SCHEMA_VERSION: u32 = 1;

/// Numerical slack used on the left-hand side of bound checks, and as the
/// radius floor that makes zero-radius clustering tolerate converged-to-zero
/// distances.
pub const BOUND_SLACK: f64 = 1e-8;

/// Hard assignment of non-terminal state-action pairs to clusters.
///
/// Built by a greedy covering: pairs are scanned in index order and assigned
/// to the first cluster whose center lies within `epsilon`; otherwise they
/// open a new cluster centered on themselves. Terminal pairs are excluded
/// and map to a dedicated absorbing sink in the clustered process.
///
/// Every non-center member is within `epsilon` of its center. A center's own
/// self-distance can exceed `epsilon` under a diffuse metric; that does not
/// threaten the value-gap bound because a singleton cluster reproduces its
/// member's reward and transition law exactly.
#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster id per state-action index; `None` for terminal pairs.
    pub phi: Vec<Option<usize>>,
    /// Members of each cluster, in cluster-id order.
    pub clusters: Vec<Vec<usize>>,
    /// Center (first member) of each cluster.
    pub centers: Vec<usize>,
    pub epsilon: f64,
}

impl Clustering {
    pub fn n_clusters(&self) -> usize {
        self.clusters.len()
    }

    /// Cluster id of pair `x`, erroring on uncovered pairs.
    pub fn cluster_of(&self, x: usize) -> Result<usize> {
        self.phi
            .get(x)
            .copied()
            .flatten()
            .ok_or(Error::UncoveredPair(x))
    }
}

/// Greedy epsilon-cover of the non-terminal pairs of `d`, deterministic in
/// index order. The assignment radius is `max(epsilon, BOUND_SLACK)` so a
/// zero radius still absorbs distances that converged to zero numerically.
pub fn epsilon_cluster(
    d: &DistanceTable,
    epsilon: f64,
    pair_terminal_mask: &[bool],
) -> Result<Clustering> {
    if epsilon < 0.0 {
        return Err(Error::validation("epsilon must be >= 0".to_string()));
    }
    if pair_terminal_mask.len() != d.n_pairs() {
        return Err(Error::dimension(format!(
            "terminal mask has {} entries, table has {} pairs",
            pair_terminal_mask.len(),
            d.n_pairs()
        )));
    }
    let radius = epsilon.max(BOUND_SLACK);
    let mut phi = vec![None; d.n_pairs()];
    let mut clusters: Vec<Vec<usize>> = Vec::new();
    let mut centers: Vec<usize> = Vec::new();
    for x in 0..d.n_pairs() {
        if pair_terminal_mask[x] {
            continue;
        }
        let found = centers
            .iter()
            .position(|&center| d.values[[x, center]] <= radius);
        match found {
            Some(c) => {
                phi[x] = Some(c);
                clusters[c].push(x);
            }
            None => {
                phi[x] = Some(clusters.len());
                clusters.push(vec![x]);
                centers.push(x);
            }
        }
    }
    Ok(Clustering {
        phi,
        clusters,
        centers,
        epsilon,
    })
}

/// Markov reward process over clusters, plus one absorbing zero-reward sink
/// for the terminal pairs (always the last index).
#[derive(Debug, Clone, PartialEq)]
pub struct ClusteredMrp {
    pub n_clusters: usize,
    /// Mean member reward per cluster; 0 for the sink.
    pub reward: Vec<f64>,
    /// `transition[[c, c2]]`: mean member probability of landing in `c2`.
    pub transition: Array2<f64>,
    pub gamma: f64,
    /// Index of the absorbing sink cluster.
    pub sink: usize,
}

/// Build the clustered MRP: cluster rewards average member rewards, cluster
/// transitions average the members' probabilities of jumping into each
/// cluster under `P` and `pi_e`. Terminal successor pairs land in the sink.
pub fn build_clustered_mrp(
    mdp: &TabularMdp,
    pi_e: &PolicyTable,
    clustering: &Clustering,
) -> Result<ClusteredMrp> {
    let n_pairs = mdp.n_state_actions();
    if clustering.phi.len() != n_pairs {
        return Err(Error::dimension(format!(
            "clustering covers {} pairs, MDP has {n_pairs}",
            clustering.phi.len()
        )));
    }
    for x in 0..n_pairs {
        if !mdp.pair_is_terminal(x) && clustering.phi[x].is_none() {
            return Err(Error::UncoveredPair(x));
        }
    }

    let k = clustering.n_clusters();
    let sink = k;
    let n_total = k + 1;
    let mut reward = vec![0.0; n_total];
    let mut transition = Array2::zeros((n_total, n_total));

    // cluster id of a successor pair, with terminals redirected to the sink
    let cluster_of = |x: usize| -> usize {
        if mdp.pair_is_terminal(x) {
            sink
        } else {
            clustering.phi[x].expect("covered above")
        }
    };

    for (c, members) in clustering.clusters.iter().enumerate() {
        let weight = 1.0 / members.len() as f64;
        for &x in members {
            let (s, a) = mdp.pair_of(x);
            reward[c] += weight * mdp.reward[[s, a]];
            for s2 in 0..mdp.n_states {
                let p = mdp.transition[[s, a, s2]];
                if p == 0.0 {
                    continue;
                }
                for a2 in 0..mdp.n_actions {
                    let pi = pi_e.prob(s2, a2);
                    if pi == 0.0 {
                        continue;
                    }
                    let c2 = cluster_of(s2 * mdp.n_actions + a2);
                    transition[[c, c2]] += weight * p * pi;
                }
            }
        }
    }
    transition[[sink, sink]] = 1.0;

    let mrp = ClusteredMrp {
        n_clusters: n_total,
        reward,
        transition,
        gamma: mdp.gamma,
        sink,
    };
    mrp.validate()?;
    Ok(mrp)
}

impl ClusteredMrp {
    fn validate(&self) -> Result<()> {
        for c in 0..self.n_clusters {
            let sum: f64 = self.transition.row(c).sum();
            if (sum - 1.0).abs() > 1e-10 {
                return Err(Error::validation(format!(
                    "clustered transition row {c} sums to {sum}"
                )));
            }
        }
        Ok(())
    }
}

/// Fixed point of `v = r + gamma * P v` to sup-norm tolerance `tol`.
pub fn mrp_value(mrp: &ClusteredMrp, tol: f64, max_iter: usize) -> Result<Vec<f64>> {
    if tol <= 0.0 {
        return Err(Error::validation("tol must be positive".to_string()));
    }
    let n = mrp.n_clusters;
    let mut v = vec![0.0; n];
    let mut residual = f64::INFINITY;
    for _ in 0..max_iter {
        residual = 0.0;
        let mut next = vec![0.0; n];
        for (c, slot) in next.iter_mut().enumerate() {
            let acc: f64 = mrp
                .transition
                .row(c)
                .iter()
                .zip(v.iter())
                .map(|(p, vc)| p * vc)
                .sum();
            *slot = mrp.reward[c] + mrp.gamma * acc;
            residual = residual.max((*slot - v[c]).abs());
        }
        v = next;
        if residual <= tol {
            return Ok(v);
        }
    }
    Err(Error::NonConvergence { residual, max_iter })
}

/// Outcome of checking one of the aggregation bounds.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundReport {
    pub schema_version: u32,
    pub max_gap: f64,
    pub bound: f64,
    pub epsilon: f64,
    pub gamma: f64,
    pub n_clusters: usize,
    pub pass: bool,
}

impl BoundReport {
    fn new(max_gap: f64, epsilon: f64, gamma: f64, n_clusters: usize) -> Self {
        let bound = 2.0 * epsilon / (1.0 - gamma);
        BoundReport {
            schema_version: BOUND_REPORT_SCHEMA_VERSION,
            max_gap,
            bound,
            epsilon,
            gamma,
            n_clusters,
            pass: max_gap <= bound + BOUND_SLACK,
        }
    }
}

/// Check `max_x |q(x) - q~(phi(x))| <= 2 * epsilon / (1 - gamma)` over the
/// non-terminal pairs (terminal pairs map to the zero-value sink and a zero
/// q, contributing nothing).
pub fn verify_action_value_bound(
    q: &QTable,
    q_tilde: &[f64],
    clustering: &Clustering,
    epsilon: f64,
    gamma: f64,
) -> BoundReport {
    let flat = q.flat();
    let mut max_gap = 0.0_f64;
    for (x, id) in clustering.phi.iter().enumerate() {
        if let Some(c) = id {
            max_gap = max_gap.max((flat[x] - q_tilde[*c]).abs());
        }
    }
    BoundReport::new(max_gap, epsilon, gamma, clustering.n_clusters())
}

/// Check the initial-distribution version of the bound:
/// `|E[q(s0, a0)] - E[q~(phi(s0, a0))]| <= 2 * epsilon / (1 - gamma)`,
/// with both expectations over `d0` and `pi_e` computed exactly.
pub fn verify_estimate_bound(
    mdp: &TabularMdp,
    pi_e: &PolicyTable,
    q: &QTable,
    q_tilde: &[f64],
    clustering: &Clustering,
) -> Result<BoundReport> {
    let mut exact = 0.0;
    let mut clustered = 0.0;
    for s in 0..mdp.n_states {
        let w0 = mdp.initial_dist[s];
        if w0 == 0.0 {
            continue;
        }
        for a in 0..mdp.n_actions {
            let w = w0 * pi_e.prob(s, a);
            if w == 0.0 {
                continue;
            }
            let x = mdp.pair_index(s, a);
            exact += w * q.value(s, a);
            let c = if mdp.pair_is_terminal(x) {
                // Terminal pairs have q = 0 and sink value 0.
                continue;
            } else {
                clustering.cluster_of(x)?
            };
            clustered += w * q_tilde[c];
        }
    }
    Ok(BoundReport::new(
        (exact - clustered).abs(),
        clustering.epsilon,
        mdp.gamma,
        clustering.n_clusters(),
    ))
}
