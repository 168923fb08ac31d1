//! Bundled benchmark layouts and name-or-path resolution.
//!
//! Two 7x7 families are shipped, each as a train/test pair:
//!
//! * `shift7x7` — open middle during training; the test grid adds a four-cell
//!   wall (cells 23-26, 1-based row-major) across the trained path, with a
//!   passage left open around the wall's right end.
//! * `gate7x7` — a wall splits the grid, pierced by a single gate cell
//!   (cell 16). The gate is open during training and blocked for t in [0,3)
//!   at test time; a long detour stays open on the right edge.

use crate::grid::{load_layout, GridSpec, LayoutError};
use crate::mdp::StateId;
use std::path::Path;

pub const SHIFT7X7_TRAIN: &str = include_str!("../layouts/shift7x7_train.txt");
pub const SHIFT7X7_TEST: &str = include_str!("../layouts/shift7x7_test.txt");
pub const GATE7X7_TRAIN: &str = include_str!("../layouts/gate7x7_train.txt");
pub const GATE7X7_TEST: &str = include_str!("../layouts/gate7x7_test.txt");

/// Built-in layout names accepted wherever a layout path is expected.
pub const BUILTIN_NAMES: [&str; 4] = [
    "shift7x7-train",
    "shift7x7-test",
    "gate7x7-train",
    "gate7x7-test",
];

pub fn builtin(name: &str) -> Option<&'static str> {
    match name {
        "shift7x7-train" => Some(SHIFT7X7_TRAIN),
        "shift7x7-test" => Some(SHIFT7X7_TEST),
        "gate7x7-train" => Some(GATE7X7_TRAIN),
        "gate7x7-test" => Some(GATE7X7_TEST),
        _ => None,
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ResolveError {
    #[error("cannot read layout file `{path}`: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("layout `{path}`: {source}")]
    Parse { path: String, source: LayoutError },
}

/// Loads a layout by built-in name or filesystem path.
pub fn resolve(name_or_path: &str) -> Result<GridSpec, ResolveError> {
    let text = match builtin(name_or_path) {
        Some(t) => t.to_string(),
        None => std::fs::read_to_string(Path::new(name_or_path)).map_err(|e| ResolveError::Io {
            path: name_or_path.to_string(),
            source: e,
        })?,
    };
    load_layout(&text).map_err(|e| ResolveError::Parse {
        path: name_or_path.to_string(),
        source: e,
    })
}

/// Benchmark initial cells for a built-in family, as 1-based cell numbers.
/// `shift7x7` uses cells 1-3 and 8-10 (the top-left block above the wall);
/// `gate7x7` uses cells 3-5 and 9-11 (the band above the gate).
pub fn bench_cells(family: &str) -> Option<Vec<usize>> {
    match family {
        "shift7x7" => Some(vec![1, 2, 3, 8, 9, 10]),
        "gate7x7" => Some(vec![3, 4, 5, 9, 10, 11]),
        _ => None,
    }
}

/// The family prefix of a built-in layout name (`shift7x7-test` → `shift7x7`).
pub fn family_of(name: &str) -> Option<&str> {
    name.strip_suffix("-train")
        .or_else(|| name.strip_suffix("-test"))
}

/// A copy of `spec` with the initial state moved to `cell` (1-based).
pub fn with_initial(spec: &GridSpec, cell_number: usize) -> GridSpec {
    let mut out = spec.clone();
    assert!(cell_number >= 1 && cell_number <= spec.num_states());
    out.initial = StateId(cell_number - 1);
    out
}
