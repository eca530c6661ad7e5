//! Feature maps bridging tabular state-action pairs to the neural path.
//!
//! The full input of a pair is the state feature vector concatenated with a
//! one-hot action encoding.

use ndarray::Array2;
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};
use crate::mdp::TransitionDataset;

#[derive(Debug, Clone, PartialEq)]
pub enum FeatureMap {
    /// Plain one-hot state encoding.
    OneHot { n_states: usize, n_actions: usize },
    /// One-hot state encoding padded with fixed seeded noise dimensions.
    Redundant {
        n_states: usize,
        n_actions: usize,
        noise: Array2<f64>,
        seed: u64,
    },
    /// Externally supplied per-state feature table.
    Provided {
        table: Array2<f64>,
        n_actions: usize,
    },
}

impl FeatureMap {
    pub fn one_hot(n_states: usize, n_actions: usize) -> Self {
        FeatureMap::OneHot {
            n_states,
            n_actions,
        }
    }

    /// One-hot padded with `noise_dims` standard-normal distractor features,
    /// fixed per state and deterministic given `seed`.
    pub fn redundant(n_states: usize, n_actions: usize, noise_dims: usize, seed: u64) -> Self {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let noise = Array2::from_shape_fn((n_states, noise_dims), |_| {
            // Box-Muller keeps us off rand_distr for one normal draw.
            let u1: f64 = rng.gen_range(f64::EPSILON..1.0);
            let u2: f64 = rng.gen();
            (-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()
        });
        FeatureMap::Redundant {
            n_states,
            n_actions,
            noise,
            seed,
        }
    }

    /// Reconstruct a per-state table from a dataset with embedded features,
    /// erroring when a state appears with two different vectors.
    pub fn from_dataset(dataset: &TransitionDataset) -> Result<Self> {
        if dataset.feature_dim == 0 {
            return Err(Error::validation(
                "dataset carries no feature vectors".to_string(),
            ));
        }
        let n_states = dataset.provenance.n_states;
        let dim = dataset.feature_dim;
        let mut table = Array2::zeros((n_states, dim));
        let mut seen = vec![false; n_states];
        let mut record = |state: usize, feats: &Option<Vec<f64>>| -> Result<()> {
            let feats = feats
                .as_ref()
                .ok_or_else(|| Error::validation("missing feature vector".to_string()))?;
            if seen[state] {
                for (j, &v) in feats.iter().enumerate() {
                    if table[[state, j]] != v {
                        return Err(Error::validation(format!(
                            "state {state} appears with conflicting feature vectors"
                        )));
                    }
                }
            } else {
                for (j, &v) in feats.iter().enumerate() {
                    table[[state, j]] = v;
                }
                seen[state] = true;
            }
            Ok(())
        };
        for t in &dataset.transitions {
            record(t.state, &t.state_features)?;
            record(t.next_state, &t.next_state_features)?;
        }
        if !seen.iter().all(|&s| s) {
            return Err(Error::validation(
                "not every state appears in the dataset; feature table incomplete".to_string(),
            ));
        }
        Ok(FeatureMap::Provided {
            table,
            n_actions: dataset.provenance.n_actions,
        })
    }

    pub fn n_states(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_states, .. } => *n_states,
            FeatureMap::Redundant { n_states, .. } => *n_states,
            FeatureMap::Provided { table, .. } => table.nrows(),
        }
    }

    pub fn n_actions(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_actions, .. } => *n_actions,
            FeatureMap::Redundant { n_actions, .. } => *n_actions,
            FeatureMap::Provided { n_actions, .. } => *n_actions,
        }
    }

    pub fn state_dim(&self) -> usize {
        match self {
            FeatureMap::OneHot { n_states, .. } => *n_states,
            FeatureMap::Redundant {
                n_states, noise, ..
            } => n_states + noise.ncols(),
            FeatureMap::Provided { table, .. } => table.ncols(),
        }
    }

    /// Dimension of the full `(state, action)` input vector.
    pub fn dim(&self) -> usize {
        self.state_dim() + self.n_actions()
    }

    pub fn state_features(&self, state: usize) -> Vec<f64> {
        match self {
            FeatureMap::OneHot { n_states, .. } => one_hot(state, *n_states),
            FeatureMap::Redundant {
                n_states, noise, ..
            } => {
                let mut v = one_hot(state, *n_states);
                v.extend(noise.row(state).iter());
                v
            }
            FeatureMap::Provided { table, .. } => table.row(state).to_vec(),
        }
    }

    /// Full input vector for the pair `(state, action)`.
    pub fn features(&self, state: usize, action: usize) -> Vec<f64> {
        let mut v = self.state_features(state);
        v.extend(one_hot(action, self.n_actions()));
        v
    }

    /// Input matrix for every pair in flat `(state, action)` index order.
    pub fn pair_inputs(&self) -> Array2<f64> {
        let n_pairs = self.n_states() * self.n_actions();
        let mut out = Array2::zeros((n_pairs, self.dim()));
        for s in 0..self.n_states() {
            for a in 0..self.n_actions() {
                let x = s * self.n_actions() + a;
                for (j, v) in self.features(s, a).into_iter().enumerate() {
                    out[[x, j]] = v;
                }
            }
        }
        out
    }
}

fn one_hot(index: usize, len: usize) -> Vec<f64> {
    let mut v = vec![0.0; len];
    v[index] = 1.0;
    v
}
