//! Gridworld environments with static walls and time-varying blocked cells.

use crate::mdp::{Action, StateId};
use serde::{Deserialize, Serialize};
use std::collections::{BTreeMap, BTreeSet, VecDeque};
use thiserror::Error;

/// Half-open time interval `[from_t, until_t)` during which a cell is blocked.
/// `until_t = None` means blocked forever.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct BlockedInterval {
    pub from_t: usize,
    pub until_t: Option<usize>,
}

impl BlockedInterval {
    pub fn contains(&self, t: usize) -> bool {
        t >= self.from_t && self.until_t.is_none_or(|u| t < u)
    }
}

/// Immutable description of a gridworld: geometry, start/goal, static walls and
/// the occupancy schedule of dynamic cells.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GridSpec {
    pub width: usize,
    pub height: usize,
    pub static_obstacles: BTreeSet<StateId>,
    pub initial: StateId,
    pub goal: StateId,
    pub dynamic_cells: BTreeMap<StateId, Vec<BlockedInterval>>,
}

/// Step rewards: goal bonus, collision penalty and the per-step time penalty.
#[derive(Debug, Clone, Copy, Serialize, Deserialize)]
pub struct RewardSpec {
    pub r_g: f64,
    pub r_c: f64,
    pub r_d: f64,
}

impl Default for RewardSpec {
    fn default() -> Self {
        RewardSpec {
            r_g: 50.0,
            r_c: -50.0,
            r_d: -1.0,
        }
    }
}

/// Result of one environment transition.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct StepOutcome {
    pub next_state: StateId,
    pub reward: f64,
    pub terminal: bool,
    pub collided: bool,
    pub reached_goal: bool,
}

/// Shortest collision-free path length, or no path within the horizon.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum PathLength {
    Steps(usize),
    Unreachable,
}

#[derive(Debug, Error, PartialEq, Eq)]
pub enum LayoutError {
    #[error("line {line}: expected `grid <width> <height>`, got `{text}`")]
    BadHeader { line: usize, text: String },
    #[error("line {line}, column {col}: unexpected character `{ch}`")]
    BadCell { line: usize, col: usize, ch: char },
    #[error("line {line}: grid row has {got} cells, expected {want}")]
    BadRowWidth {
        line: usize,
        got: usize,
        want: usize,
    },
    #[error("grid body ended early: got {got} rows, expected {want}")]
    MissingRows { got: usize, want: usize },
    #[error("duplicate `{mark}` mark at lines {first_line} and {second_line}")]
    DuplicateMark {
        mark: char,
        first_line: usize,
        second_line: usize,
    },
    #[error("missing `{mark}` mark")]
    MissingMark { mark: char },
    #[error("line {line}: schedule refers to unknown cell letter `{letter}`")]
    UnknownLetter { line: usize, letter: char },
    #[error("line {line}: malformed schedule entry `{text}`")]
    BadSchedule { line: usize, text: String },
    #[error("line {line}: empty interval {from}..{until}")]
    EmptyInterval {
        line: usize,
        from: usize,
        until: usize,
    },
    #[error("initial and goal must be distinct cells")]
    InitialIsGoal,
    #[error("`{0}` cell is a static obstacle")]
    MarkOnObstacle(char),
    #[error("initial cell is blocked at t=0")]
    InitialBlockedAtStart,
}

impl GridSpec {
    pub fn num_states(&self) -> usize {
        self.width * self.height
    }

    pub fn cell(&self, row: usize, col: usize) -> StateId {
        debug_assert!(row < self.height && col < self.width);
        StateId(row * self.width + col)
    }

    pub fn row_col(&self, s: StateId) -> (usize, usize) {
        (s.0 / self.width, s.0 % self.width)
    }

    /// 1-based row-major cell number used in rendered output.
    pub fn cell_number(&self, s: StateId) -> usize {
        s.0 + 1
    }

    pub fn in_bounds(&self, s: StateId) -> bool {
        s.0 < self.num_states()
    }

    /// Destination of `a` taken at `s`; off-grid moves stay in place.
    pub fn apply_move(&self, s: StateId, a: Action) -> StateId {
        let (row, col) = self.row_col(s);
        let (dr, dc) = a.delta();
        let nr = row as isize + dr;
        let nc = col as isize + dc;
        if nr < 0 || nc < 0 || nr >= self.height as isize || nc >= self.width as isize {
            s
        } else {
            self.cell(nr as usize, nc as usize)
        }
    }

    /// Whether `cell` is blocked at time `t` (static wall or scheduled block).
    pub fn occupied(&self, cell: StateId, t: usize) -> bool {
        assert!(self.in_bounds(cell), "cell {cell} out of bounds");
        if self.static_obstacles.contains(&cell) {
            return true;
        }
        self.dynamic_cells
            .get(&cell)
            .is_some_and(|ivs| ivs.iter().any(|iv| iv.contains(t)))
    }

    /// The safe set at time `t`: every in-bounds cell that is not occupied.
    pub fn safe_set(&self, t: usize) -> BTreeSet<StateId> {
        (0..self.num_states())
            .map(StateId)
            .filter(|&s| !self.occupied(s, t))
            .collect()
    }

    /// Time after which the occupancy schedule is constant: the maximum finite
    /// interval endpoint (cells blocked forever count via their start).
    pub fn stabilization_time(&self) -> usize {
        self.dynamic_cells
            .values()
            .flatten()
            .map(|iv| iv.until_t.unwrap_or(iv.from_t))
            .max()
            .unwrap_or(0)
    }

    /// One environment transition at wall time `t`.
    pub fn step(&self, rspec: &RewardSpec, s: StateId, a: Action, t: usize) -> StepOutcome {
        assert!(
            !self.occupied(s, t),
            "stepping from occupied state {s} at t={t}"
        );
        let candidate = self.apply_move(s, a);
        if self.occupied(candidate, t + 1) {
            StepOutcome {
                next_state: candidate,
                reward: rspec.r_c + rspec.r_d,
                terminal: true,
                collided: true,
                reached_goal: false,
            }
        } else if candidate == self.goal {
            StepOutcome {
                next_state: candidate,
                reward: rspec.r_g + rspec.r_d,
                terminal: true,
                collided: false,
                reached_goal: true,
            }
        } else {
            StepOutcome {
                next_state: candidate,
                reward: rspec.r_d,
                terminal: false,
                collided: false,
                reached_goal: false,
            }
        }
    }

    /// Shortest collision-free path to the goal in the time-expanded graph
    /// `(cell, t)`, honoring blocked intervals. BFS up to `horizon` steps.
    pub fn optimal_steps(&self, s0: StateId, t0: usize, horizon: usize) -> PathLength {
        assert!(!self.occupied(s0, t0), "start {s0} occupied at t={t0}");
        if s0 == self.goal {
            return PathLength::Steps(0);
        }
        // Time indices clamp to the stabilization point: beyond it the grid is
        // static, so (cell, T_stab) subsumes all later times.
        let t_stab = self.stabilization_time();
        let clamp = |t: usize| t.min(t_stab);
        let mut seen = vec![false; self.num_states() * (t_stab + 1)];
        let mut queue = VecDeque::new();
        seen[s0.0 * (t_stab + 1) + clamp(t0)] = true;
        queue.push_back((s0, t0, 0usize));
        while let Some((s, t, d)) = queue.pop_front() {
            if d >= horizon {
                continue;
            }
            for a in crate::mdp::ACTIONS {
                let n = self.apply_move(s, a);
                if self.occupied(n, t + 1) {
                    continue;
                }
                if n == self.goal {
                    return PathLength::Steps(d + 1);
                }
                let key = n.0 * (t_stab + 1) + clamp(t + 1);
                if !seen[key] {
                    seen[key] = true;
                    queue.push_back((n, t + 1, d + 1));
                }
            }
        }
        PathLength::Unreachable
    }

    fn validate(self) -> Result<GridSpec, LayoutError> {
        if self.initial == self.goal {
            return Err(LayoutError::InitialIsGoal);
        }
        if self.static_obstacles.contains(&self.initial) {
            return Err(LayoutError::MarkOnObstacle('I'));
        }
        if self.static_obstacles.contains(&self.goal) {
            return Err(LayoutError::MarkOnObstacle('G'));
        }
        if self.occupied(self.initial, 0) {
            return Err(LayoutError::InitialBlockedAtStart);
        }
        Ok(self)
    }
}

/// Parses the line-oriented layout format:
///
/// ```text
/// grid <width> <height>
/// <height> rows of cells from  . # I G a-z
/// <letter> blocked <from>..<until|inf>
/// ```
///
/// `#` starts a comment outside the grid body; blank lines are ignored there.
pub fn load_layout(text: &str) -> Result<GridSpec, LayoutError> {
    let mut lines = text.lines().enumerate().map(|(i, l)| (i + 1, l));

    let (header_line, header) = lines
        .by_ref()
        .find(|(_, l)| !l.trim().is_empty() && !l.trim_start().starts_with('#'))
        .ok_or(LayoutError::BadHeader {
            line: 1,
            text: String::new(),
        })?;
    let mut parts = header.split_whitespace();
    let bad_header = || LayoutError::BadHeader {
        line: header_line,
        text: header.to_string(),
    };
    if parts.next() != Some("grid") {
        return Err(bad_header());
    }
    let width: usize = parts
        .next()
        .and_then(|w| w.parse().ok())
        .filter(|&w| w > 0)
        .ok_or_else(bad_header)?;
    let height: usize = parts
        .next()
        .and_then(|h| h.parse().ok())
        .filter(|&h| h > 0)
        .ok_or_else(bad_header)?;
    if parts.next().is_some() {
        return Err(bad_header());
    }

    let mut static_obstacles = BTreeSet::new();
    let mut initial: Option<(StateId, usize)> = None;
    let mut goal: Option<(StateId, usize)> = None;
    let mut letters: BTreeMap<char, StateId> = BTreeMap::new();
    let mut rows_read = 0usize;

    while rows_read < height {
        let (line_no, line) = match lines.next() {
            Some(x) => x,
            None => {
                return Err(LayoutError::MissingRows {
                    got: rows_read,
                    want: height,
                })
            }
        };
        let row = line.trim_end();
        let got = row.chars().count();
        if got != width {
            return Err(LayoutError::BadRowWidth {
                line: line_no,
                got,
                want: width,
            });
        }
        for (col, ch) in row.chars().enumerate() {
            let s = StateId(rows_read * width + col);
            match ch {
                '.' => {}
                '#' => {
                    static_obstacles.insert(s);
                }
                'I' => {
                    if let Some((_, first)) = initial {
                        return Err(LayoutError::DuplicateMark {
                            mark: 'I',
                            first_line: first,
                            second_line: line_no,
                        });
                    }
                    initial = Some((s, line_no));
                }
                'G' => {
                    if let Some((_, first)) = goal {
                        return Err(LayoutError::DuplicateMark {
                            mark: 'G',
                            first_line: first,
                            second_line: line_no,
                        });
                    }
                    goal = Some((s, line_no));
                }
                c if c.is_ascii_lowercase() => {
                    letters.insert(c, s);
                }
                c => {
                    return Err(LayoutError::BadCell {
                        line: line_no,
                        col: col + 1,
                        ch: c,
                    });
                }
            }
        }
        rows_read += 1;
    }

    let mut dynamic_cells: BTreeMap<StateId, Vec<BlockedInterval>> = BTreeMap::new();
    for (line_no, raw) in lines {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let bad = || LayoutError::BadSchedule {
            line: line_no,
            text: line.to_string(),
        };
        let mut parts = line.split_whitespace();
        let letter_tok = parts.next().ok_or_else(bad)?;
        let mut letter_chars = letter_tok.chars();
        let letter = letter_chars.next().ok_or_else(bad)?;
        if letter_chars.next().is_some() || !letter.is_ascii_lowercase() {
            return Err(bad());
        }
        if parts.next() != Some("blocked") {
            return Err(bad());
        }
        let range = parts.next().ok_or_else(bad)?;
        if parts.next().is_some() {
            return Err(bad());
        }
        let (from_s, until_s) = range.split_once("..").ok_or_else(bad)?;
        let from_t: usize = from_s.parse().map_err(|_| bad())?;
        let until_t = if until_s == "inf" {
            None
        } else {
            Some(until_s.parse::<usize>().map_err(|_| bad())?)
        };
        if let Some(u) = until_t {
            if from_t >= u {
                return Err(LayoutError::EmptyInterval {
                    line: line_no,
                    from: from_t,
                    until: u,
                });
            }
        }
        let cell = *letters.get(&letter).ok_or(LayoutError::UnknownLetter {
            line: line_no,
            letter,
        })?;
        dynamic_cells
            .entry(cell)
            .or_default()
            .push(BlockedInterval { from_t, until_t });
    }

    let (initial, _) = initial.ok_or(LayoutError::MissingMark { mark: 'I' })?;
    let (goal, _) = goal.ok_or(LayoutError::MissingMark { mark: 'G' })?;

    GridSpec {
        width,
        height,
        static_obstacles,
        initial,
        goal,
        dynamic_cells,
    }
    .validate()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::ACTIONS;

    fn gating_3x3() -> GridSpec {
        load_layout(
            "grid 3 3\n\
             I..\n\
             .a.\n\
             ..G\n\
             a blocked 0..3\n",
        )
        .unwrap()
    }

    #[test]
    fn parse_minimal_grid() {
        let g = load_layout("grid 3 3\nI..\n...\n..G\n").unwrap();
        assert!(g.static_obstacles.is_empty());
        assert_eq!(g.initial, StateId(0));
        assert_eq!(g.goal, StateId(8));
    }

    #[test]
    fn parse_duplicate_initial_reports_both_lines() {
        let err = load_layout("grid 3 3\nI..\n.I.\n..G\n").unwrap_err();
        assert_eq!(
            err,
            LayoutError::DuplicateMark {
                mark: 'I',
                first_line: 2,
                second_line: 3
            }
        );
    }

    #[test]
    fn parse_reports_line_and_column() {
        let err = load_layout("grid 3 3\nI..\n.?.\n..G\n").unwrap_err();
        assert_eq!(
            err,
            LayoutError::BadCell {
                line: 3,
                col: 2,
                ch: '?'
            }
        );
    }

    #[test]
    fn parse_unknown_letter_in_schedule() {
        let err = load_layout("grid 3 3\nI..\n.a.\n..G\nb blocked 0..3\n").unwrap_err();
        assert_eq!(
            err,
            LayoutError::UnknownLetter {
                line: 5,
                letter: 'b'
            }
        );
    }

    #[test]
    fn parse_gating_interval() {
        let g = gating_3x3();
        assert_eq!(
            g.dynamic_cells[&StateId(4)],
            vec![BlockedInterval {
                from_t: 0,
                until_t: Some(3)
            }]
        );
    }

    #[test]
    fn occupied_static_and_gate() {
        let g = load_layout("grid 3 3\nI#.\n.a.\n..G\na blocked 0..3\n").unwrap();
        for t in [0, 1, 5, 100] {
            assert!(g.occupied(StateId(1), t));
        }
        assert!(g.occupied(StateId(4), 2));
        assert!(!g.occupied(StateId(4), 3));
        for t in [0, 7] {
            assert!(!g.occupied(StateId(3), t));
        }
    }

    #[test]
    fn safe_set_tracks_gate() {
        let g = gating_3x3();
        let all: BTreeSet<StateId> = (0..9).map(StateId).collect();
        let mut minus_gate = all.clone();
        minus_gate.remove(&StateId(4));
        assert_eq!(g.safe_set(0), minus_gate);
        assert_eq!(g.safe_set(3), all);
        let open = load_layout("grid 2 2\nI.\n.G\n").unwrap();
        assert_eq!(open.safe_set(0).len(), 4);
    }

    #[test]
    fn safe_set_eventually_constant() {
        let g = gating_3x3();
        let t_stab = g.stabilization_time();
        assert_eq!(t_stab, 3);
        let stable = g.safe_set(t_stab);
        for t in t_stab..t_stab + 20 {
            assert_eq!(g.safe_set(t), stable);
        }
    }

    #[test]
    fn step_stop_semantics() {
        let g = load_layout("grid 3 3\nI..\n...\n..G\n").unwrap();
        let out = g.step(&RewardSpec::default(), StateId(0), Action::Stop, 0);
        assert_eq!(out.next_state, StateId(0));
        assert_eq!(out.reward, -1.0);
        assert!(!out.terminal);
    }

    #[test]
    fn step_into_static_obstacle_collides() {
        let g = load_layout("grid 3 3\nI#.\n...\n..G\n").unwrap();
        let out = g.step(&RewardSpec::default(), StateId(0), Action::Right, 0);
        assert!(out.collided && out.terminal && !out.reached_goal);
        assert_eq!(out.reward, -51.0);
    }

    #[test]
    fn step_onto_goal() {
        let g = load_layout("grid 3 3\nI..\n...\n..G\n").unwrap();
        let out = g.step(&RewardSpec::default(), StateId(7), Action::Right, 12);
        assert!(out.reached_goal && out.terminal && !out.collided);
        assert_eq!(out.reward, 49.0);
    }

    #[test]
    fn step_off_grid_stays() {
        let g = load_layout("grid 3 3\nI..\n...\n..G\n").unwrap();
        let out = g.step(&RewardSpec::default(), StateId(0), Action::Up, 0);
        assert_eq!(out.next_state, StateId(0));
        assert!(!out.terminal);
    }

    #[test]
    fn step_never_leaves_grid() {
        let g = gating_3x3();
        for s in (0..9).map(StateId) {
            for t in 0..6 {
                if g.occupied(s, t) {
                    continue;
                }
                for a in ACTIONS {
                    let out = g.step(&RewardSpec::default(), s, a, t);
                    assert!(g.in_bounds(out.next_state));
                }
            }
        }
    }

    #[test]
    fn optimal_steps_adjacent() {
        let g = load_layout("grid 3 3\nI..\n...\n..G\n").unwrap();
        assert_eq!(g.optimal_steps(StateId(7), 0, 100), PathLength::Steps(1));
    }

    #[test]
    fn optimal_steps_walled_off_goal() {
        let g = load_layout("grid 3 3\nI..\n.##\n.#G\n").unwrap();
        assert_eq!(g.optimal_steps(StateId(0), 0, 100), PathLength::Unreachable);
    }

    #[test]
    fn optimal_steps_waits_for_gate() {
        // Straight-line distance 4 through the gate; the agent would enter the
        // gate cell at t=3 but it only opens at t=4, so optimal waits one step.
        let g = load_layout(
            "grid 5 3\n\
             I....\n\
             ##a##\n\
             ..G..\n\
             a blocked 0..4\n",
        )
        .unwrap();
        assert_eq!(g.optimal_steps(StateId(0), 0, 100), PathLength::Steps(5));
    }

    /// Exhaustive DFS over timed paths; the independent oracle for BFS.
    fn dfs_shortest(
        g: &GridSpec,
        s: StateId,
        t: usize,
        budget: usize,
        best: &mut Option<usize>,
        used: usize,
    ) {
        if let Some(b) = *best {
            if used >= b {
                return;
            }
        }
        if used == budget {
            return;
        }
        for a in ACTIONS {
            let n = g.apply_move(s, a);
            if g.occupied(n, t + 1) {
                continue;
            }
            if n == g.goal {
                let d = used + 1;
                if best.is_none_or(|b| d < b) {
                    *best = Some(d);
                }
            } else {
                dfs_shortest(g, n, t + 1, budget, best, used + 1);
            }
        }
    }

    #[test]
    fn optimal_steps_matches_dfs_enumeration() {
        let grids = [
            "grid 4 4\nI...\n.#..\n..a.\n...G\na blocked 0..4\n",
            "grid 4 4\nI#..\n.#.b\n.#..\n...G\nb blocked 2..6\n",
            "grid 3 4\nI..\n#a#\n...\n..G\na blocked 0..5\n",
            "grid 4 3\nI..#\n....\n.#.G\n",
        ];
        for text in grids {
            let g = load_layout(text).unwrap();
            let mut best = None;
            dfs_shortest(&g, g.initial, 0, 12, &mut best, 0);
            let expect = best.map_or(PathLength::Unreachable, PathLength::Steps);
            assert_eq!(g.optimal_steps(g.initial, 0, 12), expect, "{text}");
        }
    }
}
