//! The 3x3 didactic gridworld.
//!
//! States are indexed `s = row * 3 + col` with row 0 at the bottom and col 0
//! on the left, so the start state is index 0 (bottom-left) and the terminal
//! goal is index 8 (top-right). Moving off the grid leaves the agent in
//! place. The reward for taking an action is the negative Manhattan distance
//! of the *successor* cell to the goal, which makes the transition into the
//! goal worth 0.

use ndarray::{Array1, Array2, Array3};

use super::{PolicyTable, TabularMdp};

pub const GRID_SIDE: usize = 3;
const N_STATES: usize = GRID_SIDE * GRID_SIDE;
const N_ACTIONS: usize = 4;

pub const ACTION_UP: usize = 0;
pub const ACTION_DOWN: usize = 1;
pub const ACTION_LEFT: usize = 2;
pub const ACTION_RIGHT: usize = 3;

/// Direction names in action-index order.
pub const ACTION_NAMES: [&str; N_ACTIONS] = ["up", "down", "left", "right"];

/// Gridworld bundle: the MDP plus its evaluation and behavior policies.
#[derive(Debug, Clone)]
pub struct Gridworld {
    pub mdp: TabularMdp,
    pub pi_e: PolicyTable,
    pub pi_b: PolicyTable,
}

impl Gridworld {
    pub const START: usize = 0;
    pub const GOAL: usize = N_STATES - 1;

    pub fn state_of(row: usize, col: usize) -> usize {
        row * GRID_SIDE + col
    }

    /// `(row, col)` of a state index.
    pub fn coords(state: usize) -> (usize, usize) {
        (state / GRID_SIDE, state % GRID_SIDE)
    }
}

fn manhattan_to_goal(state: usize) -> usize {
    let (row, col) = Gridworld::coords(state);
    (GRID_SIDE - 1 - row) + (GRID_SIDE - 1 - col)
}

/// Successor of taking `action` in `state`; off-grid moves stay in place.
fn step(state: usize, action: usize) -> usize {
    let (row, col) = Gridworld::coords(state);
    let (row, col) = match action {
        ACTION_UP if row + 1 < GRID_SIDE => (row + 1, col),
        ACTION_DOWN if row > 0 => (row - 1, col),
        ACTION_LEFT if col > 0 => (row, col - 1),
        ACTION_RIGHT if col + 1 < GRID_SIDE => (row, col + 1),
        _ => (row, col),
    };
    Gridworld::state_of(row, col)
}

/// Build the gridworld MDP together with the evaluation policy `pi_e`
/// (50/50 up-or-right at the start, deterministically toward the goal
/// elsewhere, preferring right on ties) and the uniform-random behavior
/// policy `pi_b`. The discount is 0.99.
pub fn build_gridworld() -> Gridworld {
    let mut transition = Array3::zeros((N_STATES, N_ACTIONS, N_STATES));
    let mut reward = Array2::zeros((N_STATES, N_ACTIONS));

    for s in 0..N_STATES {
        for a in 0..N_ACTIONS {
            if s == Gridworld::GOAL {
                transition[[s, a, s]] = 1.0;
                // reward stays 0: terminal is absorbing and silent
            } else {
                let s2 = step(s, a);
                transition[[s, a, s2]] = 1.0;
                reward[[s, a]] = -(manhattan_to_goal(s2) as f64);
            }
        }
    }

    let mut initial_dist = Array1::zeros(N_STATES);
    initial_dist[Gridworld::START] = 1.0;
    let mut terminal_mask = vec![false; N_STATES];
    terminal_mask[Gridworld::GOAL] = true;

    let mdp = TabularMdp::new(transition, reward, 0.99, initial_dist, terminal_mask)
        .expect("gridworld construction is valid");

    let mut pi_e = Array2::zeros((N_STATES, N_ACTIONS));
    for s in 0..N_STATES {
        if s == Gridworld::START {
            pi_e[[s, ACTION_UP]] = 0.5;
            pi_e[[s, ACTION_RIGHT]] = 0.5;
        } else if s == Gridworld::GOAL {
            // Arbitrary at the terminal; it never acts.
            pi_e[[s, ACTION_RIGHT]] = 1.0;
        } else {
            let (row, col) = Gridworld::coords(s);
            // Move right whenever right makes progress, otherwise up.
            let a = if col + 1 < GRID_SIDE {
                ACTION_RIGHT
            } else {
                ACTION_UP
            };
            debug_assert!(
                manhattan_to_goal(step(s, a)) < manhattan_to_goal(s),
                "state ({row},{col})"
            );
            pi_e[[s, a]] = 1.0;
        }
    }
    let pi_e = PolicyTable::new(pi_e).expect("pi_e rows normalized");
    let pi_b = PolicyTable::uniform(N_STATES, N_ACTIONS);

    Gridworld { mdp, pi_e, pi_b }
}
