//! Core tabular MDP types: states, actions, Q-tables and the Q-learning update.

use rand::Rng;
use serde::{Deserialize, Serialize};

/// Index of a grid cell, row-major and 0-based. Rendered output uses 1-based
/// numbering; the conversion happens at the presentation layer only.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct StateId(pub usize);

impl StateId {
    pub fn index(self) -> usize {
        self.0
    }
}

impl std::fmt::Display for StateId {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{}", self.0)
    }
}

/// The five grid actions in their canonical order. The ordering is load-bearing:
/// argmax ties are broken by the lowest index, so every component that compares
/// actions relies on this exact sequence.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum Action {
    Up,
    Down,
    Left,
    Right,
    Stop,
}

pub const ACTIONS: [Action; 5] = [
    Action::Up,
    Action::Down,
    Action::Left,
    Action::Right,
    Action::Stop,
];

pub const NUM_ACTIONS: usize = 5;

impl Action {
    pub fn index(self) -> usize {
        match self {
            Action::Up => 0,
            Action::Down => 1,
            Action::Left => 2,
            Action::Right => 3,
            Action::Stop => 4,
        }
    }

    pub fn from_index(i: usize) -> Option<Action> {
        ACTIONS.get(i).copied()
    }

    /// Row/column displacement, with +row pointing down the grid.
    pub fn delta(self) -> (isize, isize) {
        match self {
            Action::Up => (-1, 0),
            Action::Down => (1, 0),
            Action::Left => (0, -1),
            Action::Right => (0, 1),
            Action::Stop => (0, 0),
        }
    }
}

impl std::fmt::Display for Action {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            Action::Up => "up",
            Action::Down => "down",
            Action::Left => "left",
            Action::Right => "right",
            Action::Stop => "stop",
        };
        f.write_str(s)
    }
}

impl std::str::FromStr for Action {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "up" => Ok(Action::Up),
            "down" => Ok(Action::Down),
            "left" => Ok(Action::Left),
            "right" => Ok(Action::Right),
            "stop" => Ok(Action::Stop),
            other => Err(format!("unknown action `{other}`")),
        }
    }
}

/// Next state of a transition, which may be the end of the episode. Terminal
/// transitions bootstrap with zero in every update rule.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub enum NextState {
    State(StateId),
    Terminal,
}

/// Dense |S| x |A| action-value table. Entries start at zero.
#[derive(Debug, Clone, PartialEq)]
pub struct QTable {
    num_states: usize,
    values: Vec<f64>,
}

impl QTable {
    pub fn zeros(num_states: usize) -> QTable {
        QTable {
            num_states,
            values: vec![0.0; num_states * NUM_ACTIONS],
        }
    }

    pub fn num_states(&self) -> usize {
        self.num_states
    }

    pub fn get(&self, s: StateId, a: Action) -> f64 {
        self.values[s.0 * NUM_ACTIONS + a.index()]
    }

    pub fn set(&mut self, s: StateId, a: Action, v: f64) {
        debug_assert!(v.is_finite());
        self.values[s.0 * NUM_ACTIONS + a.index()] = v;
    }

    pub fn max_value(&self, s: StateId) -> f64 {
        ACTIONS
            .iter()
            .map(|&a| self.get(s, a))
            .fold(f64::NEG_INFINITY, f64::max)
    }

    /// Iterates `(state, action, value)` in a fixed row-major order.
    pub fn entries(&self) -> impl Iterator<Item = (StateId, Action, f64)> + '_ {
        (0..self.num_states).flat_map(move |s| {
            ACTIONS
                .iter()
                .map(move |&a| (StateId(s), a, self.get(StateId(s), a)))
        })
    }
}

/// Hyperparameters of the tabular learner.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct Hyperparameters {
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub planning_steps: usize,
    pub max_episodes: usize,
    pub max_steps_per_episode: usize,
}

impl Default for Hyperparameters {
    /// Baseline training configuration: alpha 0.1, gamma 0.99, epsilon 0.5,
    /// 10 planning steps, 2000 episodes capped at 1000 steps each.
    fn default() -> Self {
        Hyperparameters {
            alpha: 0.1,
            gamma: 0.99,
            epsilon: 0.5,
            planning_steps: 10,
            max_episodes: 2000,
            max_steps_per_episode: 1000,
        }
    }
}

impl Hyperparameters {
    pub fn validate(&self) -> Result<(), String> {
        if !(self.alpha > 0.0 && self.alpha <= 1.0) {
            return Err(format!("alpha must be in (0,1], got {}", self.alpha));
        }
        if !(self.gamma >= 0.0 && self.gamma < 1.0) {
            return Err(format!("gamma must be in [0,1), got {}", self.gamma));
        }
        if !(0.0..=1.0).contains(&self.epsilon) {
            return Err(format!("epsilon must be in [0,1], got {}", self.epsilon));
        }
        if self.max_episodes == 0 {
            return Err("max_episodes must be positive".into());
        }
        if self.max_steps_per_episode == 0 {
            return Err("max_steps_per_episode must be positive".into());
        }
        Ok(())
    }
}

/// Greedy action for `s`: lowest canonical index among the argmax set.
pub fn greedy_policy(q: &QTable, s: StateId) -> Action {
    let mut best = Action::Up;
    let mut best_v = q.get(s, Action::Up);
    for &a in &ACTIONS[1..] {
        let v = q.get(s, a);
        if v > best_v {
            best = a;
            best_v = v;
        }
    }
    best
}

/// The full argmax set at `s`, in canonical order. This is the support of the
/// greedy policy that the N-step verifier propagates.
pub fn greedy_support(q: &QTable, s: StateId) -> Vec<Action> {
    let m = q.max_value(s);
    ACTIONS
        .iter()
        .copied()
        .filter(|&a| q.get(s, a) == m)
        .collect()
}

/// Epsilon-greedy: with probability `epsilon` a uniformly random action
/// (the greedy one included), otherwise the greedy action.
pub fn epsilon_greedy<R: Rng + ?Sized>(
    q: &QTable,
    s: StateId,
    epsilon: f64,
    rng: &mut R,
) -> Action {
    if epsilon > 0.0 && rng.gen::<f64>() < epsilon {
        ACTIONS[rng.gen_range(0..NUM_ACTIONS)]
    } else {
        greedy_policy(q, s)
    }
}

/// One application of the Q-learning rule:
/// `q(s,a) += alpha * (r + gamma * max_a' q(s',a') - q(s,a))`.
/// Terminal next states contribute a zero bootstrap term.
pub fn q_update(
    q: &mut QTable,
    s: StateId,
    a: Action,
    r: f64,
    s_next: NextState,
    alpha: f64,
    gamma: f64,
) {
    let bootstrap = match s_next {
        NextState::State(sn) => q.max_value(sn),
        NextState::Terminal => 0.0,
    };
    let old = q.get(s, a);
    q.set(s, a, old + alpha * (r + gamma * bootstrap - old));
}
