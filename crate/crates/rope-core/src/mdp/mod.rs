//! Tabular MDP representation, exact policy evaluation, rollout simulation,
//! and dataset generation. Everything downstream treats this module as the
//! ground-truth oracle layer.

mod dataset;
mod dp;
mod gridworld;
mod random;
mod rollout;

pub use dataset::{DatasetProvenance, Transition, TransitionDataset, DATASET_SCHEMA_VERSION};
pub use dp::{bellman_residual, policy_evaluation_q, policy_value};
pub use gridworld::{build_gridworld, Gridworld, ACTION_NAMES, GRID_SIDE};
pub use random::{build_deterministic_mdp, build_random_mdp, build_random_policy};
pub use rollout::{default_horizon, generate_dataset, rollout_return, DEFAULT_EPISODE_CAP};

use ndarray::{Array1, Array2, Array3};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Tolerance for probability normalization checks.
pub const PROB_TOL: f64 = 1e-12;

/// Schema version stamped on serialized MDP documents.
pub const MDP_SCHEMA_VERSION: u32 = 1;

/// A finite MDP with dense transition and reward tables.
///
/// `transition[[s, a, s2]]` is the probability of landing in `s2` after
/// taking action `a` in state `s`; `reward[[s, a]]` is the expected
/// immediate reward of that pair. Terminal states are absorbing with zero
/// reward under every action.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularMdp {
    pub n_states: usize,
    pub n_actions: usize,
    pub transition: Array3<f64>,
    pub reward: Array2<f64>,
    pub gamma: f64,
    pub initial_dist: Array1<f64>,
    pub terminal_mask: Vec<bool>,
}

impl TabularMdp {
    pub fn new(
        transition: Array3<f64>,
        reward: Array2<f64>,
        gamma: f64,
        initial_dist: Array1<f64>,
        terminal_mask: Vec<bool>,
    ) -> Result<Self> {
        let (n_states, n_actions, n_next) = transition.dim();
        if n_next != n_states {
            return Err(Error::dimension(format!(
                "transition tensor is {n_states}x{n_actions}x{n_next}, expected last dim {n_states}"
            )));
        }
        if reward.dim() != (n_states, n_actions) {
            return Err(Error::dimension(format!(
                "reward table is {:?}, expected ({n_states}, {n_actions})",
                reward.dim()
            )));
        }
        if initial_dist.len() != n_states || terminal_mask.len() != n_states {
            return Err(Error::dimension(
                "initial_dist / terminal_mask length must equal n_states".to_string(),
            ));
        }
        if !(0.0..1.0).contains(&gamma) {
            return Err(Error::validation(format!(
                "gamma must lie in [0, 1), got {gamma}"
            )));
        }
        let mdp = TabularMdp {
            n_states,
            n_actions,
            transition,
            reward,
            gamma,
            initial_dist,
            terminal_mask,
        };
        mdp.validate()?;
        Ok(mdp)
    }

    fn validate(&self) -> Result<()> {
        for s in 0..self.n_states {
            for a in 0..self.n_actions {
                let row = self.transition.slice(ndarray::s![s, a, ..]);
                if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                    return Err(Error::validation(format!(
                        "P[{s}][{a}] has entries outside [0, 1]"
                    )));
                }
                let sum: f64 = row.sum();
                if (sum - 1.0).abs() > PROB_TOL {
                    return Err(Error::validation(format!(
                        "P[{s}][{a}] sums to {sum}, expected 1"
                    )));
                }
            }
        }
        let init_sum: f64 = self.initial_dist.sum();
        if (init_sum - 1.0).abs() > PROB_TOL {
            return Err(Error::validation(format!(
                "initial distribution sums to {init_sum}, expected 1"
            )));
        }
        if self.initial_dist.iter().any(|&p| p < 0.0) {
            return Err(Error::validation(
                "initial distribution has negative mass".to_string(),
            ));
        }
        for s in 0..self.n_states {
            if !self.terminal_mask[s] {
                continue;
            }
            for a in 0..self.n_actions {
                if (self.transition[[s, a, s]] - 1.0).abs() > PROB_TOL {
                    return Err(Error::validation(format!(
                        "terminal state {s} is not absorbing under action {a}"
                    )));
                }
                if self.reward[[s, a]] != 0.0 {
                    return Err(Error::validation(format!(
                        "terminal state {s} has nonzero reward under action {a}"
                    )));
                }
            }
        }
        Ok(())
    }

    /// Number of state-action pairs `|X| = |S| * |A|`.
    pub fn n_state_actions(&self) -> usize {
        self.n_states * self.n_actions
    }

    /// Flat index of the pair `(s, a)`.
    pub fn pair_index(&self, state: usize, action: usize) -> usize {
        state * self.n_actions + action
    }

    /// Inverse of [`pair_index`](Self::pair_index).
    pub fn pair_of(&self, index: usize) -> (usize, usize) {
        (index / self.n_actions, index % self.n_actions)
    }

    /// True when the state of pair `x` is terminal.
    pub fn pair_is_terminal(&self, x: usize) -> bool {
        self.terminal_mask[x / self.n_actions]
    }

    /// Terminal flags per state-action pair, in flat index order.
    pub fn pair_terminal_mask(&self) -> Vec<bool> {
        (0..self.n_state_actions())
            .map(|x| self.pair_is_terminal(x))
            .collect()
    }

    /// Largest absolute expected reward over all pairs.
    pub fn max_abs_reward(&self) -> f64 {
        self.reward.iter().fold(0.0_f64, |m, &r| m.max(r.abs()))
    }

    pub fn to_json(&self) -> Result<String> {
        let doc = MdpDocument {
            schema_version: MDP_SCHEMA_VERSION,
            n_states: self.n_states,
            n_actions: self.n_actions,
            gamma: self.gamma,
            transition: (0..self.n_states)
                .map(|s| {
                    (0..self.n_actions)
                        .map(|a| self.transition.slice(ndarray::s![s, a, ..]).to_vec())
                        .collect()
                })
                .collect(),
            reward: (0..self.n_states)
                .map(|s| self.reward.row(s).to_vec())
                .collect(),
            initial_dist: self.initial_dist.to_vec(),
            terminal_mask: self.terminal_mask.clone(),
        };
        Ok(serde_json::to_string_pretty(&doc)?)
    }

    pub fn from_json(text: &str) -> Result<Self> {
        let doc: MdpDocument = serde_json::from_str(text)?;
        if doc.schema_version != MDP_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: doc.schema_version,
                expected: MDP_SCHEMA_VERSION,
            });
        }
        let mut transition = Array3::zeros((doc.n_states, doc.n_actions, doc.n_states));
        let mut reward = Array2::zeros((doc.n_states, doc.n_actions));
        for s in 0..doc.n_states {
            for a in 0..doc.n_actions {
                reward[[s, a]] = doc.reward[s][a];
                for s2 in 0..doc.n_states {
                    transition[[s, a, s2]] = doc.transition[s][a][s2];
                }
            }
        }
        TabularMdp::new(
            transition,
            reward,
            doc.gamma,
            Array1::from_vec(doc.initial_dist),
            doc.terminal_mask,
        )
    }
}

#[derive(Serialize, Deserialize)]
struct MdpDocument {
    schema_version: u32,
    n_states: usize,
    n_actions: usize,
    gamma: f64,
    transition: Vec<Vec<Vec<f64>>>,
    reward: Vec<Vec<f64>>,
    initial_dist: Vec<f64>,
    terminal_mask: Vec<bool>,
}

/// A stochastic policy stored as a dense `pi[s][a]` table.
#[derive(Debug, Clone, PartialEq)]
pub struct PolicyTable {
    pub probs: Array2<f64>,
}

impl PolicyTable {
    pub fn new(probs: Array2<f64>) -> Result<Self> {
        for (s, row) in probs.rows().into_iter().enumerate() {
            if row.iter().any(|&p| !(0.0..=1.0).contains(&p)) {
                return Err(Error::validation(format!(
                    "pi[{s}] has entries outside [0, 1]"
                )));
            }
            let sum: f64 = row.sum();
            if (sum - 1.0).abs() > PROB_TOL {
                return Err(Error::validation(format!(
                    "pi[{s}] sums to {sum}, expected 1"
                )));
            }
        }
        Ok(PolicyTable { probs })
    }

    /// Uniform-random policy over `n_actions` in every state.
    pub fn uniform(n_states: usize, n_actions: usize) -> Self {
        PolicyTable {
            probs: Array2::from_elem((n_states, n_actions), 1.0 / n_actions as f64),
        }
    }

    /// Deterministic policy taking `actions[s]` in state `s`.
    pub fn deterministic(n_actions: usize, actions: &[usize]) -> Result<Self> {
        let mut probs = Array2::zeros((actions.len(), n_actions));
        for (s, &a) in actions.iter().enumerate() {
            if a >= n_actions {
                return Err(Error::validation(format!(
                    "action {a} out of range for state {s}"
                )));
            }
            probs[[s, a]] = 1.0;
        }
        Ok(PolicyTable { probs })
    }

    pub fn n_states(&self) -> usize {
        self.probs.nrows()
    }

    pub fn n_actions(&self) -> usize {
        self.probs.ncols()
    }

    pub fn prob(&self, state: usize, action: usize) -> f64 {
        self.probs[[state, action]]
    }

    /// True when every state has a single action with probability 1.
    pub fn is_deterministic(&self) -> bool {
        self.probs
            .rows()
            .into_iter()
            .all(|row| row.iter().any(|&p| (p - 1.0).abs() <= PROB_TOL))
    }

    /// Sample an action in `state` by inverse CDF over the action row.
    pub fn sample(&self, state: usize, rng: &mut impl rand::Rng) -> usize {
        let u: f64 = rng.gen();
        let mut acc = 0.0;
        let row = self.probs.row(state);
        for (a, &p) in row.iter().enumerate() {
            acc += p;
            if u < acc {
                return a;
            }
        }
        row.len() - 1
    }

    pub(crate) fn check_matches(&self, mdp: &TabularMdp) -> Result<()> {
        if self.n_states() != mdp.n_states || self.n_actions() != mdp.n_actions {
            return Err(Error::dimension(format!(
                "policy is {}x{}, MDP is {}x{}",
                self.n_states(),
                self.n_actions(),
                mdp.n_states,
                mdp.n_actions
            )));
        }
        Ok(())
    }
}

/// Action-value table `q[s][a]` for some policy.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    pub values: Array2<f64>,
}

impl QTable {
    pub fn value(&self, state: usize, action: usize) -> f64 {
        self.values[[state, action]]
    }

    /// Value at a flat state-action index.
    pub fn value_at(&self, x: usize) -> f64 {
        let n_actions = self.values.ncols();
        self.values[[x / n_actions, x % n_actions]]
    }

    /// Values flattened in state-action index order.
    pub fn flat(&self) -> Vec<f64> {
        self.values.iter().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use ndarray::arr1;

    fn single_state_mdp(gamma: f64, reward: f64) -> TabularMdp {
        TabularMdp::new(
            Array3::from_elem((1, 1, 1), 1.0),
            Array2::from_elem((1, 1), reward),
            gamma,
            arr1(&[1.0]),
            vec![false],
        )
        .unwrap()
    }

    #[test]
    fn rejects_unnormalized_rows() {
        let err = TabularMdp::new(
            Array3::from_elem((1, 1, 1), 0.5),
            Array2::zeros((1, 1)),
            0.9,
            arr1(&[1.0]),
            vec![false],
        )
        .unwrap_err();
        assert!(matches!(err, Error::Validation(_)));
    }

    #[test]
    fn rejects_gamma_one() {
        let mut t = Array3::zeros((1, 1, 1));
        t[[0, 0, 0]] = 1.0;
        let err = TabularMdp::new(t, Array2::zeros((1, 1)), 1.0, arr1(&[1.0]), vec![false]);
        assert!(err.is_err());
    }

    #[test]
    fn rejects_non_absorbing_terminal() {
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 0]] = 1.0; // terminal must self-loop
        let err = TabularMdp::new(
            t,
            Array2::zeros((2, 1)),
            0.9,
            arr1(&[1.0, 0.0]),
            vec![false, true],
        );
        assert!(err.is_err());
    }

    #[test]
    fn json_round_trip() {
        let mdp = single_state_mdp(0.5, 0.25);
        let text = mdp.to_json().unwrap();
        let back = TabularMdp::from_json(&text).unwrap();
        assert_eq!(mdp, back);
    }

    #[test]
    fn policy_rows_must_normalize() {
        assert!(PolicyTable::new(Array2::from_elem((2, 2), 0.4)).is_err());
        assert!(PolicyTable::new(Array2::from_elem((2, 2), 0.5)).is_ok());
    }

    #[test]
    fn deterministic_policy_samples_its_action() {
        let pi = PolicyTable::deterministic(3, &[2, 0]).unwrap();
        let mut rng = rand::rngs::mock::StepRng::new(0, 1);
        assert_eq!(pi.sample(0, &mut rng), 2);
        assert!(pi.is_deterministic());
    }

    #[test]
    fn pair_indexing_round_trips() {
        let mdp = single_state_mdp(0.5, 0.0);
        assert_eq!(mdp.pair_index(0, 0), 0);
        assert_eq!(mdp.pair_of(0), (0, 0));
    }
}
