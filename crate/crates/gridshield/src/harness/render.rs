//! Trajectory rendering: an annotated text grid and an SVG document.

use crate::grid::{BlockedInterval, GridSpec};
use crate::mdp::{Action, StateId};
use crate::shield::EpisodeTrace;
use std::collections::{BTreeMap, BTreeSet};
use std::fmt::Write as _;

#[derive(Debug, thiserror::Error, PartialEq)]
pub enum RenderError {
    #[error("trace state {state} out of bounds for a {width}x{height} layout")]
    DimensionMismatch {
        state: usize,
        width: usize,
        height: usize,
    },
}

fn check_trace(env: &GridSpec, trace: &EpisodeTrace) -> Result<(), RenderError> {
    for step in &trace.steps {
        if !env.in_bounds(step.state) {
            return Err(RenderError::DimensionMismatch {
                state: step.state.0,
                width: env.width,
                height: env.height,
            });
        }
    }
    Ok(())
}

fn interval_text(iv: &BlockedInterval) -> String {
    match (iv.from_t, iv.until_t) {
        (0, Some(u)) => format!("blocked t<{u}"),
        (f, None) => format!("blocked t>={f}"),
        (f, Some(u)) => format!("blocked {f}<=t<{u}"),
    }
}

/// Pairs `(state, executed direction)` that occur more than once; the loop
/// signature of a stuck agent.
pub fn looped_pairs(trace: &EpisodeTrace) -> BTreeSet<(StateId, Action)> {
    let mut seen: BTreeMap<(StateId, usize), usize> = BTreeMap::new();
    for step in &trace.steps {
        *seen
            .entry((step.state, step.executed_action.index()))
            .or_insert(0) += 1;
    }
    seen.into_iter()
        .filter(|&(_, count)| count > 1)
        .map(|((s, ai), _)| (s, Action::from_index(ai).unwrap()))
        .collect()
}

/// Renders the grid with 1-based cell indices and per-cell markers:
/// `#` wall, `~` scheduled cell, `I`/`G` endpoints, `*` visited,
/// `!` intervention, `x` loop. A trace appends the step-by-step path.
pub fn render_text(env: &GridSpec, trace: Option<&EpisodeTrace>) -> Result<String, RenderError> {
    if let Some(tr) = trace {
        check_trace(env, tr)?;
    }
    let mut visited = BTreeSet::new();
    let mut intervened = BTreeSet::new();
    let mut loop_cells = BTreeSet::new();
    if let Some(tr) = trace {
        for step in &tr.steps {
            visited.insert(step.state);
            if step.intervened {
                intervened.insert(step.state);
            }
        }
        for (s, _) in looped_pairs(tr) {
            loop_cells.insert(s);
        }
    }

    let mut out = String::new();
    for row in 0..env.height {
        for col in 0..env.width {
            let s = env.cell(row, col);
            let mut marks = String::new();
            if env.static_obstacles.contains(&s) {
                marks.push('#');
            }
            if env.dynamic_cells.contains_key(&s) {
                marks.push('~');
            }
            if s == env.initial {
                marks.push('I');
            }
            if s == env.goal {
                marks.push('G');
            }
            if visited.contains(&s) {
                marks.push('*');
            }
            if intervened.contains(&s) {
                marks.push('!');
            }
            if loop_cells.contains(&s) {
                marks.push('x');
            }
            let _ = write!(out, "[{:>3}{:<4}]", env.cell_number(s), marks);
        }
        out.push('\n');
    }

    for (&cell, intervals) in &env.dynamic_cells {
        for iv in intervals {
            let _ = writeln!(out, "cell {}: {}", env.cell_number(cell), interval_text(iv));
        }
    }

    if let Some(tr) = trace {
        let loops = looped_pairs(tr);
        out.push('\n');
        for step in &tr.steps {
            let mut note = String::new();
            if step.intervened {
                let _ = write!(note, " (shielded: proposed {})", step.proposed_action);
            }
            if loops.contains(&(step.state, step.executed_action)) {
                note.push_str(" (loop)");
            }
            let _ = writeln!(
                out,
                "t={} cell {} {}{}",
                step.t,
                env.cell_number(step.state),
                step.executed_action,
                note
            );
        }
        if !loops.is_empty() {
            let cells: Vec<String> = loop_cells
                .iter()
                .map(|&s| env.cell_number(s).to_string())
                .collect();
            let _ = writeln!(out, "loops detected at cells: {}", cells.join(", "));
        }
    }
    Ok(out)
}

const CELL_PX: usize = 40;

fn center(env: &GridSpec, s: StateId) -> (usize, usize) {
    let (row, col) = env.row_col(s);
    (col * CELL_PX + CELL_PX / 2, row * CELL_PX + CELL_PX / 2)
}

/// Renders the layout and path as a standalone SVG document.
pub fn render_svg(env: &GridSpec, trace: Option<&EpisodeTrace>) -> Result<String, RenderError> {
    if let Some(tr) = trace {
        check_trace(env, tr)?;
    }
    let (w, h) = (env.width * CELL_PX, env.height * CELL_PX);
    let mut out = format!(
        "<svg xmlns=\"http://www.w3.org/2000/svg\" width=\"{w}\" height=\"{h}\" \
         viewBox=\"0 0 {w} {h}\">\n"
    );
    for row in 0..env.height {
        for col in 0..env.width {
            let s = env.cell(row, col);
            let fill = if env.static_obstacles.contains(&s) {
                "#444444"
            } else if env.dynamic_cells.contains_key(&s) {
                "#e8a33d"
            } else if s == env.goal {
                "#7fc97f"
            } else if s == env.initial {
                "#80b1d3"
            } else {
                "#ffffff"
            };
            let _ = write!(
                out,
                "<rect x=\"{}\" y=\"{}\" width=\"{CELL_PX}\" height=\"{CELL_PX}\" \
                 fill=\"{fill}\" stroke=\"#999999\"/>",
                col * CELL_PX,
                row * CELL_PX
            );
            let _ = writeln!(
                out,
                "<text x=\"{}\" y=\"{}\" font-size=\"9\" fill=\"#333333\">{}</text>",
                col * CELL_PX + 3,
                row * CELL_PX + 11,
                env.cell_number(s)
            );
        }
    }
    if let Some(tr) = trace {
        if !tr.steps.is_empty() {
            let mut points: Vec<(usize, usize)> =
                tr.steps.iter().map(|st| center(env, st.state)).collect();
            // Close the path at the final arrival cell.
            let last = tr.steps.last().unwrap();
            points.push(center(
                env,
                env.apply_move(last.state, last.executed_action),
            ));
            let pts: Vec<String> = points.iter().map(|(x, y)| format!("{x},{y}")).collect();
            let _ = writeln!(
                out,
                "<polyline points=\"{}\" fill=\"none\" stroke=\"#1f6fb2\" stroke-width=\"2\"/>",
                pts.join(" ")
            );
            for step in tr.steps.iter().filter(|s| s.intervened) {
                let (x, y) = center(env, step.state);
                let _ = writeln!(
                    out,
                    "<circle cx=\"{x}\" cy=\"{y}\" r=\"5\" fill=\"none\" stroke=\"#d62728\" stroke-width=\"2\"/>"
                );
            }
            for (s, _) in looped_pairs(tr) {
                let (x, y) = center(env, s);
                let _ = writeln!(
                    out,
                    "<path d=\"M {} {} l 12 12 m 0 -12 l -12 12\" stroke=\"#d62728\" stroke-width=\"2\"/>",
                    x - 6,
                    y - 6
                );
            }
        }
    }
    out.push_str("</svg>\n");
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::grid::load_layout;
    use crate::shield::TraceStep;

    fn trace(steps: Vec<(usize, usize, Action, Action)>) -> EpisodeTrace {
        EpisodeTrace {
            steps: steps
                .into_iter()
                .map(|(t, s, p, e)| TraceStep {
                    t,
                    state: StateId(s),
                    proposed_action: p,
                    executed_action: e,
                    intervened: p != e,
                    reward: -1.0,
                })
                .collect(),
            discounted_return: 0.0,
            collisions: 0,
            reached_goal: false,
            stuck: true,
            runtime_per_step_ms: 0.0,
            interventions: 0,
        }
    }

    #[test]
    fn empty_trace_renders_grid_only() {
        let env = load_layout("grid 3 3\nI..\n.#.\n..G\n").unwrap();
        let text = render_text(&env, None).unwrap();
        assert!(text.contains("[  1I"));
        assert!(text.contains("[  5#"));
        assert!(text.contains("[  9G"));
        assert!(!text.contains("t="));
    }

    #[test]
    fn gate_annotation_from_schedule() {
        let env = load_layout("grid 3 3\nI..\n.a.\n..G\na blocked 0..3\n").unwrap();
        let text = render_text(&env, None).unwrap();
        assert!(text.contains("cell 5: blocked t<3"), "{text}");
        assert!(text.contains('~'));
    }

    #[test]
    fn stuck_trace_marks_loop() {
        let env = load_layout("grid 3 3\nI..\n...\n..G\n").unwrap();
        let tr = trace(vec![
            (0, 0, Action::Right, Action::Right),
            (1, 1, Action::Left, Action::Left),
            (2, 0, Action::Right, Action::Right),
            (3, 1, Action::Left, Action::Left),
        ]);
        let text = render_text(&env, Some(&tr)).unwrap();
        assert!(text.contains("loops detected at cells: 1, 2"), "{text}");
        assert!(text.contains("(loop)"));
    }

    #[test]
    fn intervention_annotated_with_proposed_action() {
        let env = load_layout("grid 3 3\nI..\n...\n..G\n").unwrap();
        let tr = trace(vec![(0, 0, Action::Down, Action::Stop)]);
        let text = render_text(&env, Some(&tr)).unwrap();
        assert!(text.contains("(shielded: proposed down)"), "{text}");
    }

    #[test]
    fn mismatched_trace_rejected() {
        let env = load_layout("grid 2 2\nI.\n.G\n").unwrap();
        let tr = trace(vec![(0, 11, Action::Up, Action::Up)]);
        assert_eq!(
            render_text(&env, Some(&tr)).unwrap_err(),
            RenderError::DimensionMismatch {
                state: 11,
                width: 2,
                height: 2
            }
        );
        assert!(render_svg(&env, Some(&tr)).is_err());
    }

    #[test]
    fn svg_contains_grid_and_path() {
        let env = load_layout("grid 3 3\nI..\n.#.\n..G\n").unwrap();
        let tr = trace(vec![(0, 0, Action::Right, Action::Right)]);
        let svg = render_svg(&env, Some(&tr)).unwrap();
        assert!(svg.starts_with("<svg"));
        assert_eq!(svg.matches("<rect").count(), 9);
        assert!(svg.contains("<polyline"));
    }
}
