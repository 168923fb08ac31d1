//! Flat-text persistence for trained artifacts plus the JSON run manifest.
//!
//! Q-tables serialize one entry per line as `state action value`; sample
//! models as `state action reward next` with `T` for terminal. Values use
//! the shortest round-trip float formatting, so save → load is lossless.

use crate::dynaq::SampleModel;
use crate::mdp::{Action, Hyperparameters, NextState, QTable, StateId};
use serde::{Deserialize, Serialize};
use std::fs;
use std::path::Path;

#[derive(Debug, thiserror::Error)]
pub enum PersistError {
    #[error("{path}: {source}")]
    Io {
        path: String,
        source: std::io::Error,
    },
    #[error("{path}:{line}: malformed entry `{text}`")]
    Malformed {
        path: String,
        line: usize,
        text: String,
    },
    #[error("{path}: {message}")]
    Json { path: String, message: String },
}

fn io_err(path: &Path, source: std::io::Error) -> PersistError {
    PersistError::Io {
        path: path.display().to_string(),
        source,
    }
}

pub fn qtable_to_string(q: &QTable) -> String {
    let mut out = format!("states {}\n", q.num_states());
    for (s, a, v) in q.entries() {
        out.push_str(&format!("{s} {a} {v}\n"));
    }
    out
}

pub fn save_qtable(path: &Path, q: &QTable) -> Result<(), PersistError> {
    fs::write(path, qtable_to_string(q)).map_err(|e| io_err(path, e))
}

pub fn load_qtable(path: &Path) -> Result<QTable, PersistError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |line: usize, text: &str| PersistError::Malformed {
        path: path.display().to_string(),
        line,
        text: text.to_string(),
    };
    let mut lines = text.lines().enumerate();
    let (_, header) = lines.next().ok_or_else(|| bad(1, ""))?;
    let n: usize = header
        .strip_prefix("states ")
        .and_then(|v| v.parse().ok())
        .ok_or_else(|| bad(1, header))?;
    let mut q = QTable::zeros(n);
    for (i, line) in lines {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let entry = (|| {
            let s: usize = parts.next()?.parse().ok().filter(|&s| s < n)?;
            let a: Action = parts.next()?.parse().ok()?;
            let v: f64 = parts.next()?.parse().ok()?;
            if parts.next().is_some() {
                return None;
            }
            Some((StateId(s), a, v))
        })();
        let (s, a, v) = entry.ok_or_else(|| bad(i + 1, line))?;
        q.set(s, a, v);
    }
    Ok(q)
}

pub fn model_to_string(m: &SampleModel) -> String {
    let mut out = String::new();
    for &(s, a) in m.keys() {
        let (r, next) = m.query(s, a).expect("key recorded");
        match next {
            NextState::State(n) => out.push_str(&format!("{s} {a} {r} {n}\n")),
            NextState::Terminal => out.push_str(&format!("{s} {a} {r} T\n")),
        }
    }
    out
}

pub fn save_model(path: &Path, m: &SampleModel) -> Result<(), PersistError> {
    fs::write(path, model_to_string(m)).map_err(|e| io_err(path, e))
}

pub fn load_model(path: &Path) -> Result<SampleModel, PersistError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    let bad = |line: usize, text: &str| PersistError::Malformed {
        path: path.display().to_string(),
        line,
        text: text.to_string(),
    };
    let mut m = SampleModel::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let mut parts = line.split_whitespace();
        let entry = (|| {
            let s: usize = parts.next()?.parse().ok()?;
            let a: Action = parts.next()?.parse().ok()?;
            let r: f64 = parts.next()?.parse().ok()?;
            let next = match parts.next()? {
                "T" => NextState::Terminal,
                tok => NextState::State(StateId(tok.parse().ok()?)),
            };
            if parts.next().is_some() {
                return None;
            }
            Some((StateId(s), a, r, next))
        })();
        let (s, a, r, next) = entry.ok_or_else(|| bad(i + 1, line))?;
        m.record(s, a, r, next);
    }
    Ok(m)
}

/// Provenance record written next to every trained artifact.
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Manifest {
    pub layout_train: String,
    pub seed: u64,
    pub alpha: f64,
    pub gamma: f64,
    pub epsilon: f64,
    pub planning_steps: usize,
    pub episodes: usize,
    pub max_steps: usize,
}

impl Manifest {
    pub fn new(layout_train: &str, seed: u64, h: &Hyperparameters) -> Manifest {
        Manifest {
            layout_train: layout_train.to_string(),
            seed,
            alpha: h.alpha,
            gamma: h.gamma,
            epsilon: h.epsilon,
            planning_steps: h.planning_steps,
            episodes: h.max_episodes,
            max_steps: h.max_steps_per_episode,
        }
    }
}

pub fn save_json<T: Serialize>(path: &Path, value: &T) -> Result<(), PersistError> {
    let text = serde_json::to_string_pretty(value).map_err(|e| PersistError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })?;
    fs::write(path, text + "\n").map_err(|e| io_err(path, e))
}

pub fn load_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T, PersistError> {
    let text = fs::read_to_string(path).map_err(|e| io_err(path, e))?;
    serde_json::from_str(&text).map_err(|e| PersistError::Json {
        path: path.display().to_string(),
        message: e.to_string(),
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use tempfile::tempdir;

    #[test]
    fn qtable_round_trip() {
        let mut q = QTable::zeros(6);
        q.set(StateId(0), Action::Up, -1.25);
        q.set(StateId(5), Action::Stop, 49.000000000000014);
        let dir = tempdir().unwrap();
        let path = dir.path().join("q.txt");
        save_qtable(&path, &q).unwrap();
        assert_eq!(load_qtable(&path).unwrap(), q);
    }

    #[test]
    fn model_round_trip_preserves_key_order() {
        let mut m = SampleModel::new();
        m.record(StateId(3), Action::Left, -1.0, NextState::State(StateId(2)));
        m.record(StateId(2), Action::Down, 49.0, NextState::Terminal);
        let dir = tempdir().unwrap();
        let path = dir.path().join("m.txt");
        save_model(&path, &m).unwrap();
        let m2 = load_model(&path).unwrap();
        assert_eq!(m2.keys(), m.keys());
        assert_eq!(
            m2.query(StateId(2), Action::Down),
            Some((49.0, NextState::Terminal))
        );
    }

    #[test]
    fn malformed_line_is_reported_with_position() {
        let dir = tempdir().unwrap();
        let path = dir.path().join("q.txt");
        std::fs::write(&path, "states 4\n0 up 1.0\n1 sideways 2.0\n").unwrap();
        let err = load_qtable(&path).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains(":3:"), "{msg}");
        assert!(msg.contains("sideways"), "{msg}");
    }

    #[test]
    fn manifest_round_trip() {
        let m = Manifest::new("shift7x7-train", 7, &Hyperparameters::default());
        let dir = tempdir().unwrap();
        let path = dir.path().join("manifest.json");
        save_json(&path, &m).unwrap();
        let back: Manifest = load_json(&path).unwrap();
        assert_eq!(back, m);
        assert_eq!(back.alpha, 0.1);
        assert_eq!(back.episodes, 2000);
    }
}
