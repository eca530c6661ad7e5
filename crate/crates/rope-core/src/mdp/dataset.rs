//! Fixed transition datasets and their JSON Lines file format.
//!
//! A dataset file starts with one header line carrying the schema version,
//! feature dimension, and provenance, followed by one JSON object per
//! transition.

use std::io::{BufRead, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::PolicyTable;
use crate::error::{Error, Result};

pub const DATASET_SCHEMA_VERSION: u32 = 1;

/// One `(s, a, r, s', done)` tuple, optionally with feature vectors for the
/// neural path.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Transition {
    pub state: usize,
    pub action: usize,
    pub reward: f64,
    pub next_state: usize,
    pub done: bool,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub state_features: Option<Vec<f64>>,
    #[serde(skip_serializing_if = "Option::is_none", default)]
    pub next_state_features: Option<Vec<f64>>,
}

/// How a dataset was produced.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetProvenance {
    pub env: String,
    pub behavior: String,
    pub seed: u64,
    pub n_states: usize,
    pub n_actions: usize,
    pub episode_cap: usize,
    pub coverage_checked: bool,
}

#[derive(Debug, Clone, PartialEq)]
pub struct TransitionDataset {
    pub transitions: Vec<Transition>,
    pub feature_dim: usize,
    pub provenance: DatasetProvenance,
}

#[derive(Serialize, Deserialize)]
struct DatasetHeader {
    schema_version: u32,
    feature_dim: usize,
    provenance: DatasetProvenance,
}

impl TransitionDataset {
    pub fn new(
        transitions: Vec<Transition>,
        feature_dim: usize,
        provenance: DatasetProvenance,
    ) -> Result<Self> {
        if transitions.is_empty() {
            return Err(Error::validation("dataset must be nonempty".to_string()));
        }
        for (i, t) in transitions.iter().enumerate() {
            if t.state >= provenance.n_states || t.next_state >= provenance.n_states {
                return Err(Error::validation(format!(
                    "transition {i} references a state out of range"
                )));
            }
            if t.action >= provenance.n_actions {
                return Err(Error::validation(format!(
                    "transition {i} references action {} out of range",
                    t.action
                )));
            }
            let want = if feature_dim == 0 {
                None
            } else {
                Some(feature_dim)
            };
            if t.state_features.as_ref().map(Vec::len) != want
                || t.next_state_features.as_ref().map(Vec::len) != want
            {
                return Err(Error::validation(format!(
                    "transition {i} feature vectors disagree with feature_dim {feature_dim}"
                )));
            }
        }
        Ok(TransitionDataset {
            transitions,
            feature_dim,
            provenance,
        })
    }

    pub fn len(&self) -> usize {
        self.transitions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.transitions.is_empty()
    }

    /// Range `(r_min, r_max)` of rewards present in the dataset.
    pub fn reward_range(&self) -> (f64, f64) {
        let mut lo = f64::INFINITY;
        let mut hi = f64::NEG_INFINITY;
        for t in &self.transitions {
            lo = lo.min(t.reward);
            hi = hi.max(t.reward);
        }
        (lo, hi)
    }

    /// Check that every non-terminal `(s, a)` with `pi_e(a|s) > 0` occurs in
    /// the dataset, and record the check in the provenance.
    pub fn ensure_coverage(&mut self, pi_e: &PolicyTable, terminal_mask: &[bool]) -> Result<()> {
        let mut seen = vec![false; pi_e.n_states() * pi_e.n_actions()];
        for t in &self.transitions {
            seen[t.state * pi_e.n_actions() + t.action] = true;
        }
        for s in 0..pi_e.n_states() {
            if terminal_mask[s] {
                continue;
            }
            for a in 0..pi_e.n_actions() {
                if pi_e.prob(s, a) > 0.0 && !seen[s * pi_e.n_actions() + a] {
                    return Err(Error::MissingCoverage {
                        state: s,
                        action: a,
                    });
                }
            }
        }
        self.provenance.coverage_checked = true;
        Ok(())
    }

    /// Attach per-state feature vectors produced by `state_features`.
    pub fn attach_features(&mut self, dim: usize, state_features: impl Fn(usize) -> Vec<f64>) {
        for t in &mut self.transitions {
            t.state_features = Some(state_features(t.state));
            t.next_state_features = Some(state_features(t.next_state));
        }
        self.feature_dim = dim;
    }

    pub fn write_jsonl(&self, mut w: impl Write) -> Result<()> {
        let header = DatasetHeader {
            schema_version: DATASET_SCHEMA_VERSION,
            feature_dim: self.feature_dim,
            provenance: self.provenance.clone(),
        };
        serde_json::to_writer(&mut w, &header)?;
        w.write_all(b"\n")?;
        for t in &self.transitions {
            serde_json::to_writer(&mut w, t)?;
            w.write_all(b"\n")?;
        }
        Ok(())
    }

    pub fn read_jsonl(r: impl BufRead) -> Result<Self> {
        let mut lines = r.lines();
        let header_line = lines
            .next()
            .ok_or_else(|| Error::format("empty dataset file"))??;
        let header: DatasetHeader = serde_json::from_str(&header_line)?;
        if header.schema_version != DATASET_SCHEMA_VERSION {
            return Err(Error::SchemaVersion {
                found: header.schema_version,
                expected: DATASET_SCHEMA_VERSION,
            });
        }
        let mut transitions = Vec::new();
        for line in lines {
            let line = line?;
            if line.trim().is_empty() {
                continue;
            }
            transitions.push(serde_json::from_str(&line)?);
        }
        TransitionDataset::new(transitions, header.feature_dim, header.provenance)
    }

    pub fn save(&self, path: impl AsRef<Path>) -> Result<()> {
        let file = std::fs::File::create(path)?;
        self.write_jsonl(std::io::BufWriter::new(file))
    }

    pub fn load(path: impl AsRef<Path>) -> Result<Self> {
        let file = std::fs::File::open(path)?;
        Self::read_jsonl(std::io::BufReader::new(file))
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn provenance() -> DatasetProvenance {
        DatasetProvenance {
            env: "test".into(),
            behavior: "uniform".into(),
            seed: 0,
            n_states: 3,
            n_actions: 2,
            episode_cap: 100,
            coverage_checked: false,
        }
    }

    fn transition(s: usize, a: usize, s2: usize) -> Transition {
        Transition {
            state: s,
            action: a,
            reward: 0.5,
            next_state: s2,
            done: false,
            state_features: None,
            next_state_features: None,
        }
    }

    #[test]
    fn rejects_empty_dataset() {
        assert!(TransitionDataset::new(vec![], 0, provenance()).is_err());
    }

    #[test]
    fn rejects_out_of_range_ids() {
        let err = TransitionDataset::new(vec![transition(7, 0, 0)], 0, provenance());
        assert!(err.is_err());
    }

    #[test]
    fn jsonl_round_trip() {
        let ds = TransitionDataset::new(
            vec![transition(0, 1, 2), transition(2, 0, 1)],
            0,
            provenance(),
        )
        .unwrap();
        let mut buf = Vec::new();
        ds.write_jsonl(&mut buf).unwrap();
        let back = TransitionDataset::read_jsonl(std::io::Cursor::new(buf)).unwrap();
        assert_eq!(ds, back);
    }

    #[test]
    fn coverage_failure_names_the_pair() {
        let mut ds = TransitionDataset::new(vec![transition(0, 0, 1)], 0, provenance()).unwrap();
        let pi = PolicyTable::uniform(3, 2);
        match ds.ensure_coverage(&pi, &[false, false, false]) {
            Err(Error::MissingCoverage { .. }) => {}
            other => panic!("expected MissingCoverage, got {other:?}"),
        }
        assert!(!ds.provenance.coverage_checked);
    }

    #[test]
    fn attach_features_sets_dim() {
        let mut ds = TransitionDataset::new(vec![transition(0, 0, 1)], 0, provenance()).unwrap();
        ds.attach_features(2, |s| vec![s as f64, 1.0]);
        assert_eq!(ds.feature_dim, 2);
        assert_eq!(ds.transitions[0].next_state_features, Some(vec![1.0, 1.0]));
    }
}
