//! Monte-Carlo rollouts and dataset generation.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{DatasetProvenance, PolicyTable, TabularMdp, Transition, TransitionDataset};
use crate::error::{Error, Result};

/// Default episode cap used when generating datasets from MDPs that are not
/// guaranteed to terminate.
pub const DEFAULT_EPISODE_CAP: usize = 100;

/// Smallest horizon `H` with `gamma^H * r_max / (1 - gamma) < truncation_error`.
pub fn default_horizon(mdp: &TabularMdp, truncation_error: f64) -> usize {
    let r_max = mdp.max_abs_reward();
    if r_max == 0.0 {
        return 1;
    }
    let mut h = 0;
    let mut tail = r_max / (1.0 - mdp.gamma);
    while tail >= truncation_error {
        tail *= mdp.gamma;
        h += 1;
    }
    h
}

fn sample_categorical(probs: impl Iterator<Item = f64>, u: f64) -> usize {
    let mut acc = 0.0;
    let mut last = 0;
    for (i, p) in probs.enumerate() {
        acc += p;
        last = i;
        if u < acc {
            return i;
        }
    }
    last
}

fn sample_initial(mdp: &TabularMdp, rng: &mut impl Rng) -> usize {
    sample_categorical(mdp.initial_dist.iter().copied(), rng.gen())
}

fn sample_next(mdp: &TabularMdp, s: usize, a: usize, rng: &mut impl Rng) -> usize {
    sample_categorical(
        mdp.transition.slice(ndarray::s![s, a, ..]).iter().copied(),
        rng.gen(),
    )
}

/// One discounted return sample of `policy` truncated at `horizon` steps.
pub fn rollout_return(mdp: &TabularMdp, policy: &PolicyTable, horizon: usize, seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut s = sample_initial(mdp, &mut rng);
    let mut ret = 0.0;
    let mut discount = 1.0;
    for _ in 0..horizon {
        if mdp.terminal_mask[s] {
            break;
        }
        let a = policy.sample(s, &mut rng);
        ret += discount * mdp.reward[[s, a]];
        discount *= mdp.gamma;
        s = sample_next(mdp, s, a, &mut rng);
    }
    ret
}

/// Collect `n_transitions` tuples by rolling out `behavior`, resetting from
/// the initial distribution at terminal states or after `episode_cap` steps.
/// A pure function of its arguments.
pub fn generate_dataset(
    mdp: &TabularMdp,
    behavior: &PolicyTable,
    n_transitions: usize,
    seed: u64,
    episode_cap: usize,
) -> Result<TransitionDataset> {
    behavior.check_matches(mdp)?;
    if n_transitions == 0 {
        return Err(Error::validation("n_transitions must be >= 1".to_string()));
    }
    if episode_cap == 0 {
        return Err(Error::validation("episode_cap must be >= 1".to_string()));
    }

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut transitions = Vec::with_capacity(n_transitions);
    let mut s = sample_initial(mdp, &mut rng);
    let mut steps_in_episode = 0;

    while transitions.len() < n_transitions {
        if mdp.terminal_mask[s] || steps_in_episode >= episode_cap {
            s = sample_initial(mdp, &mut rng);
            steps_in_episode = 0;
            continue;
        }
        let a = behavior.sample(s, &mut rng);
        let s2 = sample_next(mdp, s, a, &mut rng);
        transitions.push(Transition {
            state: s,
            action: a,
            reward: mdp.reward[[s, a]],
            next_state: s2,
            done: mdp.terminal_mask[s2],
            state_features: None,
            next_state_features: None,
        });
        s = s2;
        steps_in_episode += 1;
    }

    TransitionDataset::new(
        transitions,
        0,
        DatasetProvenance {
            env: "unspecified".into(),
            behavior: "policy-table".into(),
            seed,
            n_states: mdp.n_states,
            n_actions: mdp.n_actions,
            episode_cap,
            coverage_checked: false,
        },
    )
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{build_gridworld, policy_evaluation_q, policy_value};
    use ndarray::{arr1, Array2, Array3};

    fn chain(gamma: f64) -> TabularMdp {
        // Two states looping 0 -> 1 -> 0 with reward 1 each step.
        let mut t = Array3::zeros((2, 1, 2));
        t[[0, 0, 1]] = 1.0;
        t[[1, 0, 0]] = 1.0;
        TabularMdp::new(
            t,
            Array2::ones((2, 1)),
            gamma,
            arr1(&[1.0, 0.0]),
            vec![false, false],
        )
        .unwrap()
    }

    #[test]
    fn horizon_zero_returns_zero() {
        let mdp = chain(0.5);
        let pi = PolicyTable::uniform(2, 1);
        assert_eq!(rollout_return(&mdp, &pi, 0, 0), 0.0);
    }

    #[test]
    fn deterministic_chain_matches_geometric_series() {
        let mdp = chain(0.5);
        let pi = PolicyTable::uniform(2, 1);
        let horizon = default_horizon(&mdp, 1e-10);
        let ret = rollout_return(&mdp, &pi, horizon, 123);
        assert!((ret - 2.0).abs() < 1e-9);
    }

    #[test]
    fn monte_carlo_mean_matches_dp_value() {
        let gw = build_gridworld();
        let q = policy_evaluation_q(&gw.mdp, &gw.pi_e, 1e-12, 100_000).unwrap();
        let rho = policy_value(&gw.mdp, &gw.pi_e, &q);
        let horizon = default_horizon(&gw.mdp, 1e-4);
        let n = 10_000;
        let samples: Vec<f64> = (0..n)
            .map(|i| rollout_return(&gw.mdp, &gw.pi_e, horizon, i))
            .collect();
        let mean = samples.iter().sum::<f64>() / n as f64;
        let var = samples.iter().map(|s| (s - mean) * (s - mean)).sum::<f64>() / (n - 1) as f64;
        let se = (var / n as f64).sqrt();
        assert!(
            (mean - rho).abs() <= 3.0 * se + 1e-4,
            "MC mean {mean} vs DP value {rho} (3 SE = {})",
            3.0 * se
        );
    }

    #[test]
    fn single_transition_starts_at_initial_state() {
        let gw = build_gridworld();
        let ds = generate_dataset(&gw.mdp, &gw.pi_b, 1, 9, DEFAULT_EPISODE_CAP).unwrap();
        assert_eq!(ds.len(), 1);
        assert_eq!(ds.transitions[0].state, 0);
    }

    #[test]
    fn generation_is_deterministic_on_disk() {
        let gw = build_gridworld();
        let a = generate_dataset(&gw.mdp, &gw.pi_b, 200, 5, DEFAULT_EPISODE_CAP).unwrap();
        let b = generate_dataset(&gw.mdp, &gw.pi_b, 200, 5, DEFAULT_EPISODE_CAP).unwrap();
        let mut buf_a = Vec::new();
        let mut buf_b = Vec::new();
        a.write_jsonl(&mut buf_a).unwrap();
        b.write_jsonl(&mut buf_b).unwrap();
        assert_eq!(buf_a, buf_b);
    }

    #[test]
    fn uniform_behavior_covers_gridworld() {
        let gw = build_gridworld();
        let mut ds = generate_dataset(&gw.mdp, &gw.pi_b, 10_000, 1, DEFAULT_EPISODE_CAP).unwrap();
        // Uniform behavior reaches every non-terminal pair, which subsumes
        // the support of pi_e.
        let uniform = PolicyTable::uniform(gw.mdp.n_states, gw.mdp.n_actions);
        ds.ensure_coverage(&uniform, &gw.mdp.terminal_mask).unwrap();
        assert!(ds.provenance.coverage_checked);
    }

    #[test]
    fn done_marks_terminal_next_states() {
        let gw = build_gridworld();
        let ds = generate_dataset(&gw.mdp, &gw.pi_b, 5_000, 2, DEFAULT_EPISODE_CAP).unwrap();
        for t in &ds.transitions {
            assert_eq!(t.done, gw.mdp.terminal_mask[t.next_state]);
            assert!(!gw.mdp.terminal_mask[t.state]);
        }
    }
}
