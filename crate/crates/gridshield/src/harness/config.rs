//! Experiment configuration: method selection, seeds, and the line-oriented
//! config-file format. Every file key has a same-named CLI flag; flags win.

use serde::{Deserialize, Serialize};
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::str::FromStr;

/// The benchmark method rows.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum Method {
    /// Unshielded greedy rollout of the trained table.
    Dynaq,
    /// Dyna-Q continued in the test environment, then rolled out unshielded.
    Retrained,
    /// Stop-fallback action replacement without prediction or replanning.
    BaselineShield,
    /// The predictive N-step filter.
    Predictive,
}

impl Method {
    pub const ALL: [Method; 4] = [
        Method::Dynaq,
        Method::Retrained,
        Method::BaselineShield,
        Method::Predictive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            Method::Dynaq => "dynaq",
            Method::Retrained => "retrained",
            Method::BaselineShield => "baseline_shield",
            Method::Predictive => "predictive",
        }
    }
}

impl FromStr for Method {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "dynaq" => Ok(Method::Dynaq),
            "retrained" => Ok(Method::Retrained),
            "baseline_shield" => Ok(Method::BaselineShield),
            "predictive" => Ok(Method::Predictive),
            other => Err(format!(
                "unknown method `{other}` (expected dynaq, retrained, baseline_shield or predictive)"
            )),
        }
    }
}

impl std::fmt::Display for Method {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.write_str(self.name())
    }
}

/// Fully resolved experiment setup.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ExperimentConfig {
    pub layout_train: String,
    pub layout_test: String,
    pub method: Method,
    pub n_horizon: usize,
    /// Deployment exploration rate; training uses `Hyperparameters`.
    pub epsilon: f64,
    pub planning_k: usize,
    pub seeds: Vec<u64>,
    /// 1-based initial cells for the benchmark matrix; empty = layout default.
    pub init_cells: Vec<usize>,
    pub episodes: usize,
    pub max_steps: usize,
    pub out: PathBuf,
    /// Zero out wall-clock columns for byte-identical reports.
    pub no_timing: bool,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            layout_train: "shift7x7-train".into(),
            layout_test: "shift7x7-test".into(),
            method: Method::Predictive,
            n_horizon: 1,
            epsilon: 0.1,
            planning_k: 100,
            seeds: vec![0],
            init_cells: Vec::new(),
            episodes: 2000,
            max_steps: 1000,
            out: PathBuf::from("out"),
            no_timing: false,
        }
    }
}

#[derive(Debug, thiserror::Error)]
pub enum ConfigError {
    #[error("line {line}: expected `key = value`, got `{text}`")]
    BadLine { line: usize, text: String },
    #[error("line {line}: unknown key `{key}`")]
    UnknownKey { line: usize, key: String },
    #[error("line {line}: bad value for `{key}`: {message}")]
    BadValue {
        line: usize,
        key: String,
        message: String,
    },
}

pub const CONFIG_KEYS: [&str; 11] = [
    "layout-train",
    "layout-test",
    "method",
    "n-horizon",
    "epsilon",
    "planning-k",
    "seed",
    "seeds",
    "episodes",
    "max-steps",
    "out",
];

/// Parses `key = value` lines; `#` comments and blank lines are skipped.
/// Returns the raw key/value map for the CLI layer to merge under its flags.
pub fn parse_config(text: &str) -> Result<BTreeMap<String, String>, ConfigError> {
    let mut map = BTreeMap::new();
    for (i, raw) in text.lines().enumerate() {
        let line = raw.trim();
        if line.is_empty() || line.starts_with('#') {
            continue;
        }
        let (key, value) = line.split_once('=').ok_or_else(|| ConfigError::BadLine {
            line: i + 1,
            text: line.to_string(),
        })?;
        let key = key.trim().to_string();
        if !CONFIG_KEYS.contains(&key.as_str()) {
            return Err(ConfigError::UnknownKey { line: i + 1, key });
        }
        map.insert(key, value.trim().to_string());
    }
    Ok(map)
}

/// Parses a seed list: either `a..b` (half-open range) or comma-separated.
pub fn parse_seeds(text: &str) -> Result<Vec<u64>, String> {
    if let Some((a, b)) = text.split_once("..") {
        let a: u64 = a
            .trim()
            .parse()
            .map_err(|_| format!("bad range `{text}`"))?;
        let b: u64 = b
            .trim()
            .parse()
            .map_err(|_| format!("bad range `{text}`"))?;
        if a >= b {
            return Err(format!("empty seed range `{text}`"));
        }
        Ok((a..b).collect())
    } else {
        text.split(',')
            .map(|s| {
                s.trim()
                    .parse::<u64>()
                    .map_err(|_| format!("bad seed `{}`", s.trim()))
            })
            .collect()
    }
}
