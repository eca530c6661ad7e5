//! The distance operators and their expected-update application.
//!
//! Every operator has the form
//! `F(d)(x1, x2) = short(x1, x2) + gamma * E[d(X1', X2')]`
//! where the expectation couples the two successor pairs either
//! independently (evaluation-policy metric, on-policy comparison metric,
//! action-probability metric) or through one shared uniformly-random next
//! action (random-policy metric). A sweep is two row-parallel matrix
//! products with a fixed per-row reduction order, so the parallel and
//! sequential paths produce identical bits.

use ndarray::Array2;

use super::{sup_norm_diff, DistanceTable, MetricKind};
use crate::error::{Error, Result};
use crate::mdp::{PolicyTable, TabularMdp};
use crate::par::{for_each_row, for_each_row_seq};

/// A distance operator with its expectation structure precomputed, ready to
/// be applied repeatedly.
pub struct DistanceOperator {
    kind: MetricKind,
    gamma: f64,
    short_term: Array2<f64>,
    coupling: Coupling,
}

enum Coupling {
    /// `mu[x][y]` = probability that the successor pair of `x` is `y`,
    /// sampled independently for each argument.
    IndependentPairs { mu: Array2<f64> },
    /// `psucc[x][s2]` = next-state distribution of `x`; one shared action is
    /// drawn uniformly and applied to both successor states.
    SharedUniformAction {
        psucc: Array2<f64>,
        n_actions: usize,
    },
}

impl DistanceOperator {
    /// Precompute the operator of `kind` for `mdp`. The `policy` argument is
    /// the evaluation policy for the evaluation-policy and
    /// action-probability metrics, the behavior policy for the on-policy
    /// comparison metric, and is ignored by the random-policy metric.
    pub fn new(kind: MetricKind, mdp: &TabularMdp, policy: &PolicyTable) -> Result<Self> {
        if policy.n_states() != mdp.n_states || policy.n_actions() != mdp.n_actions {
            return Err(Error::dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                policy.n_states(),
                policy.n_actions(),
                mdp.n_states,
                mdp.n_actions
            )));
        }
        let n_pairs = mdp.n_state_actions();
        let short_term = match kind {
            MetricKind::Psm => {
                // |pi(a1|s1) - pi(a2|s2)|
                let mut short = Array2::zeros((n_pairs, n_pairs));
                for x1 in 0..n_pairs {
                    let (s1, a1) = mdp.pair_of(x1);
                    for x2 in 0..n_pairs {
                        let (s2, a2) = mdp.pair_of(x2);
                        short[[x1, x2]] = (policy.prob(s1, a1) - policy.prob(s2, a2)).abs();
                    }
                }
                short
            }
            _ => {
                // |r(x1) - r(x2)|
                let mut short = Array2::zeros((n_pairs, n_pairs));
                for x1 in 0..n_pairs {
                    let (s1, a1) = mdp.pair_of(x1);
                    for x2 in 0..n_pairs {
                        let (s2, a2) = mdp.pair_of(x2);
                        short[[x1, x2]] = (mdp.reward[[s1, a1]] - mdp.reward[[s2, a2]]).abs();
                    }
                }
                short
            }
        };

        let coupling = match kind {
            MetricKind::RandomPolicy => {
                let mut psucc = Array2::zeros((n_pairs, mdp.n_states));
                for x in 0..n_pairs {
                    let (s, a) = mdp.pair_of(x);
                    for s2 in 0..mdp.n_states {
                        psucc[[x, s2]] = mdp.transition[[s, a, s2]];
                    }
                }
                Coupling::SharedUniformAction {
                    psucc,
                    n_actions: mdp.n_actions,
                }
            }
            _ => {
                // mu[x][(s2, a2)] = P(s2 | x) * pi(a2 | s2)
                let mut mu = Array2::zeros((n_pairs, n_pairs));
                for x in 0..n_pairs {
                    let (s, a) = mdp.pair_of(x);
                    for s2 in 0..mdp.n_states {
                        let p = mdp.transition[[s, a, s2]];
                        if p == 0.0 {
                            continue;
                        }
                        for a2 in 0..mdp.n_actions {
                            mu[[x, s2 * mdp.n_actions + a2]] = p * policy.prob(s2, a2);
                        }
                    }
                }
                Coupling::IndependentPairs { mu }
            }
        };

        Ok(DistanceOperator {
            kind,
            gamma: mdp.gamma,
            short_term,
            coupling,
        })
    }

    pub fn kind(&self) -> MetricKind {
        self.kind
    }

    pub fn n_pairs(&self) -> usize {
        self.short_term.nrows()
    }

    /// One exact expected update, row-parallel under the `parallel` feature.
    pub fn apply(&self, d: &Array2<f64>) -> Result<Array2<f64>> {
        self.apply_impl(d, |data, ncols, f| for_each_row(data, ncols, f))
    }

    /// One exact expected update on the always-sequential path. Bit-identical
    /// to [`apply`](Self::apply).
    pub fn apply_seq(&self, d: &Array2<f64>) -> Result<Array2<f64>> {
        self.apply_impl(d, |data, ncols, f| for_each_row_seq(data, ncols, f))
    }

    fn apply_impl(
        &self,
        d: &Array2<f64>,
        rows: impl Fn(&mut [f64], usize, &(dyn Fn(usize, &mut [f64]) + Sync)),
    ) -> Result<Array2<f64>> {
        let n = self.n_pairs();
        if d.dim() != (n, n) {
            return Err(Error::dimension(format!(
                "distance table is {:?}, operator expects ({n}, {n})",
                d.dim()
            )));
        }
        match &self.coupling {
            Coupling::IndependentPairs { mu } => {
                // t = mu . d, then out = short + gamma * (t . mu^T)
                let t = matmul(mu, d, &rows);
                let mut out = Array2::zeros((n, n));
                {
                    let gamma = self.gamma;
                    let short = &self.short_term;
                    let data = out.as_slice_mut().expect("contiguous");
                    rows(data, n, &|x1, row: &mut [f64]| {
                        let t_row = t.row(x1);
                        let t_row = t_row.as_slice().expect("contiguous");
                        for (x2, out_v) in row.iter_mut().enumerate() {
                            let mu_row = mu.row(x2);
                            let mu_row = mu_row.as_slice().expect("contiguous");
                            let mut acc = 0.0;
                            for (tv, mv) in t_row.iter().zip(mu_row.iter()) {
                                acc += tv * mv;
                            }
                            *out_v = short[[x1, x2]] + gamma * acc;
                        }
                    });
                }
                Ok(out)
            }
            Coupling::SharedUniformAction { psucc, n_actions } => {
                // c[s1][s2] = mean_a d[(s1, a)][(s2, a)]
                let n_states = psucc.ncols();
                let n_a = *n_actions;
                let mut c = Array2::zeros((n_states, n_states));
                {
                    let data = c.as_slice_mut().expect("contiguous");
                    rows(data, n_states, &|s1, row: &mut [f64]| {
                        for (s2, out_v) in row.iter_mut().enumerate() {
                            let mut acc = 0.0;
                            for a in 0..n_a {
                                acc += d[[s1 * n_a + a, s2 * n_a + a]];
                            }
                            *out_v = acc / n_a as f64;
                        }
                    });
                }
                // t = psucc . c, then out = short + gamma * (t . psucc^T)
                let t = matmul(psucc, &c, &rows);
                let mut out = Array2::zeros((n, n));
                {
                    let gamma = self.gamma;
                    let short = &self.short_term;
                    let data = out.as_slice_mut().expect("contiguous");
                    rows(data, n, &|x1, row: &mut [f64]| {
                        let t_row = t.row(x1);
                        let t_row = t_row.as_slice().expect("contiguous");
                        for (x2, out_v) in row.iter_mut().enumerate() {
                            let p_row = psucc.row(x2);
                            let p_row = p_row.as_slice().expect("contiguous");
                            let mut acc = 0.0;
                            for (tv, pv) in t_row.iter().zip(p_row.iter()) {
                                acc += tv * pv;
                            }
                            *out_v = short[[x1, x2]] + gamma * acc;
                        }
                    });
                }
                Ok(out)
            }
        }
    }
}

/// `a . b` with a fixed k-ascending accumulation order per output row.
fn matmul(
    a: &Array2<f64>,
    b: &Array2<f64>,
    rows: &impl Fn(&mut [f64], usize, &(dyn Fn(usize, &mut [f64]) + Sync)),
) -> Array2<f64> {
    let (m, k) = a.dim();
    let (_, n) = b.dim();
    let mut out = Array2::zeros((m, n));
    {
        let data = out.as_slice_mut().expect("contiguous");
        rows(data, n, &|i, row: &mut [f64]| {
            for kk in 0..k {
                let av = a[[i, kk]];
                if av == 0.0 {
                    continue;
                }
                let b_row = b.row(kk);
                let b_row = b_row.as_slice().expect("contiguous");
                for (out_v, bv) in row.iter_mut().zip(b_row.iter()) {
                    *out_v += av * bv;
                }
            }
        });
    }
    out
}

fn apply_to_table(
    kind: MetricKind,
    d: &DistanceTable,
    mdp: &TabularMdp,
    policy: &PolicyTable,
) -> Result<DistanceTable> {
    let op = DistanceOperator::new(kind, mdp, policy)?;
    let values = op.apply(&d.values)?;
    let residual = sup_norm_diff(&values, &d.values);
    Ok(DistanceTable {
        values,
        metric_kind: kind,
        converged: false,
        residual,
    })
}

/// One expected update of the evaluation-policy metric operator.
pub fn apply_rope_operator(
    d: &DistanceTable,
    mdp: &TabularMdp,
    pi_e: &PolicyTable,
) -> Result<DistanceTable> {
    apply_to_table(MetricKind::Rope, d, mdp, pi_e)
}

/// One expected update with next actions drawn from the behavior policy.
pub fn apply_mico_onpolicy_operator(
    d: &DistanceTable,
    mdp: &TabularMdp,
    pi_b: &PolicyTable,
) -> Result<DistanceTable> {
    apply_to_table(MetricKind::MicoOnPolicy, d, mdp, pi_b)
}

/// One expected update with the action-probability short-term term.
pub fn apply_psm_operator(
    d: &DistanceTable,
    mdp: &TabularMdp,
    pi_e: &PolicyTable,
) -> Result<DistanceTable> {
    apply_to_table(MetricKind::Psm, d, mdp, pi_e)
}

/// One expected update with a single shared uniformly-random next action.
pub fn apply_random_policy_operator(d: &DistanceTable, mdp: &TabularMdp) -> Result<DistanceTable> {
    let uniform = PolicyTable::uniform(mdp.n_states, mdp.n_actions);
    apply_to_table(MetricKind::RandomPolicy, d, mdp, &uniform)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, build_random_mdp};
    use ndarray::{arr1, Array3};

    fn two_self_loops(r1: f64, r2: f64, gamma: f64) -> TabularMdp {
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 0]] = 1.0;
        t[[1, 0, 1]] = 1.0;
        let mut reward = Array2::zeros((2, 1));
        reward[[0, 0]] = r1;
        reward[[1, 0]] = r2;
        TabularMdp::new(t, reward, gamma, arr1(&[0.5, 0.5]), vec![false, false]).unwrap()
    }

    #[test]
    fn zero_input_yields_reward_differences() {
        let gw = build_gridworld();
        let d0 = DistanceTable::zero(MetricKind::Rope, gw.mdp.n_state_actions());
        let d1 = apply_rope_operator(&d0, &gw.mdp, &gw.pi_e).unwrap();
        for x1 in 0..gw.mdp.n_state_actions() {
            let (s1, a1) = gw.mdp.pair_of(x1);
            for x2 in 0..gw.mdp.n_state_actions() {
                let (s2, a2) = gw.mdp.pair_of(x2);
                let expected = (gw.mdp.reward[[s1, a1]] - gw.mdp.reward[[s2, a2]]).abs();
                assert_eq!(d1.values[[x1, x2]], expected);
            }
        }
    }

    #[test]
    fn self_loop_fixed_point_is_geometric() {
        let mdp = two_self_loops(0.2, 0.9, 0.5);
        let pi = PolicyTable::uniform(2, 1);
        let mut d = DistanceTable::zero(MetricKind::Rope, 2);
        for _ in 0..200 {
            d = apply_rope_operator(&d, &mdp, &pi).unwrap();
        }
        let expected = (0.9 - 0.2) / (1.0 - 0.5);
        assert!((d.values[[0, 1]] - expected).abs() < 1e-12);
    }

    #[test]
    fn zero_input_reward_short_term_for_all_reward_metrics() {
        let gw = build_gridworld();
        let n = gw.mdp.n_state_actions();
        let mico = apply_mico_onpolicy_operator(
            &DistanceTable::zero(MetricKind::MicoOnPolicy, n),
            &gw.mdp,
            &gw.pi_b,
        )
        .unwrap();
        let rand_m = apply_random_policy_operator(
            &DistanceTable::zero(MetricKind::RandomPolicy, n),
            &gw.mdp,
        )
        .unwrap();
        for x1 in 0..n {
            let (s1, a1) = gw.mdp.pair_of(x1);
            for x2 in 0..n {
                let (s2, a2) = gw.mdp.pair_of(x2);
                let expected = (gw.mdp.reward[[s1, a1]] - gw.mdp.reward[[s2, a2]]).abs();
                assert_eq!(mico.values[[x1, x2]], expected);
                assert_eq!(rand_m.values[[x1, x2]], expected);
            }
        }
    }

    #[test]
    fn psm_short_term_uses_action_probabilities() {
        let mdp = two_self_loops(0.2, 0.9, 0.5);
        // pi(a0|s0) = 1 and there is only one action, so all short terms are 0.
        let pi = PolicyTable::uniform(2, 1);
        let d0 = DistanceTable::zero(MetricKind::Psm, 2);
        let d1 = apply_psm_operator(&d0, &mdp, &pi).unwrap();
        assert_eq!(d1.values[[0, 1]], 0.0);
    }

    #[test]
    fn psm_separates_on_and_off_policy_pairs() {
        // Two states, two actions, deterministic pi: the chosen action has
        // probability 1, the other 0, so the zero-table update is exactly 1
        // for an (on-policy, off-policy) pair.
        let mut t = Array3::zeros((2, 2, 2));
        for s in 0..2 {
            for a in 0..2 {
                t[[s, a, s]] = 1.0;
            }
        }
        let mdp = TabularMdp::new(
            t,
            Array2::zeros((2, 2)),
            0.5,
            arr1(&[0.5, 0.5]),
            vec![false, false],
        )
        .unwrap();
        let pi = PolicyTable::deterministic(2, &[0, 1]).unwrap();
        let d0 = DistanceTable::zero(MetricKind::Psm, 4);
        let d1 = apply_psm_operator(&d0, &mdp, &pi).unwrap();
        // pair (s0, a0) has pi = 1; pair (s0, a1) has pi = 0.
        assert_eq!(d1.values[[0, 1]], 1.0);
        assert_eq!(d1.values[[0, 0]], 0.0);
    }

    #[test]
    fn single_action_random_policy_equals_rope() {
        let mdp = build_random_mdp(5, 1, 0.9, 3).unwrap();
        let pi = PolicyTable::uniform(5, 1);
        let mut rope = DistanceTable::zero(MetricKind::Rope, 5);
        let mut rand_m = DistanceTable::zero(MetricKind::RandomPolicy, 5);
        for _ in 0..50 {
            rope = apply_rope_operator(&rope, &mdp, &pi).unwrap();
            rand_m = apply_random_policy_operator(&rand_m, &mdp).unwrap();
        }
        // With one action the shared-action coupling collapses to the
        // independent coupling.
        let diff = sup_norm_diff(&rope.values, &rand_m.values);
        assert!(diff <= 1e-12, "diff {diff}");
    }

    #[test]
    fn dimension_mismatch_is_reported() {
        let gw = build_gridworld();
        let d0 = DistanceTable::zero(MetricKind::Rope, 7);
        assert!(apply_rope_operator(&d0, &gw.mdp, &gw.pi_e).is_err());
    }

    #[test]
    fn parallel_and_sequential_paths_agree_bitwise() {
        // Big enough that the parallel path actually forks.
        let mdp = build_random_mdp(40, 3, 0.9, 17).unwrap();
        let pi = PolicyTable::uniform(40, 3);
        let n = mdp.n_state_actions();
        for kind in MetricKind::ALL {
            let op = DistanceOperator::new(kind, &mdp, &pi).unwrap();
            let mut d = Array2::zeros((n, n));
            for i in 0..n {
                for j in 0..n {
                    d[[i, j]] = ((i * 31 + j * 17) % 23) as f64 / 23.0;
                }
            }
            let a = op.apply(&d).unwrap();
            let b = op.apply_seq(&d).unwrap();
            assert_eq!(a, b, "{kind:?}");
        }
    }
}
