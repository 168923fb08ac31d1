//! The benchmark matrix: methods × initial cells × seeds, with CSV/JSON
//! reports mirroring the step-ratio tables.

use crate::dynaq::{retrain, train_dynaq, SampleModel};
use crate::grid::{GridSpec, PathLength, RewardSpec};
use crate::harness::config::{ExperimentConfig, Method};
use crate::layouts;
use crate::mdp::{Hyperparameters, QTable};
use crate::safety::{build_safety_model, stop_fallback, synthesize_controller, SynthesisError};
use crate::shield::{deploy, deploy_unshielded, EpisodeTrace, ShieldParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

/// One benchmark run. `ratio` is `None` for the infinity sentinel (the run
/// collided or got stuck).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchRow {
    pub method: String,
    pub layout: String,
    pub init_cell: usize,
    pub seed: u64,
    pub steps: usize,
    pub optimal: usize,
    pub ratio: Option<f64>,
    pub runtime_per_step_ms: f64,
    pub collided: bool,
    pub stuck: bool,
    pub interventions: usize,
}

/// Mean over the per-run rows of one (method, layout) group; a single
/// infinite row makes the mean ratio infinite (`None`).
#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct Aggregate {
    pub method: String,
    pub layout: String,
    pub runs: usize,
    pub mean_ratio: Option<f64>,
    pub mean_runtime_per_step_ms: f64,
}

#[derive(Debug, Clone, Serialize, Deserialize, PartialEq)]
pub struct BenchReport {
    pub rows: Vec<BenchRow>,
    pub aggregates: Vec<Aggregate>,
}

#[derive(Debug, thiserror::Error)]
pub enum HarnessError {
    #[error(transparent)]
    Layout(#[from] layouts::ResolveError),
    #[error("controller synthesis failed: {0}")]
    Synthesis(#[from] SynthesisError),
    #[error("{0}")]
    Config(String),
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

fn round6(x: f64) -> f64 {
    (x * 1e6).round() / 1e6
}

fn splitmix64(mut x: u64) -> u64 {
    x = x.wrapping_add(0x9E3779B97F4A7C15);
    let mut z = x;
    z = (z ^ (z >> 30)).wrapping_mul(0xBF58476D1CE4E5B9);
    z = (z ^ (z >> 27)).wrapping_mul(0x94D049BB133111EB);
    z ^ (z >> 31)
}

/// Independent per-run stream derived from the base seed, the initial cell
/// and a purpose salt, so runs never share randomness.
pub fn derive_rng(seed: u64, init_cell: usize, salt: u64) -> ChaCha8Rng {
    let mixed = splitmix64(seed ^ splitmix64(init_cell as u64) ^ splitmix64(salt));
    ChaCha8Rng::seed_from_u64(mixed)
}

/// Trains the deployed table and model for one seed on the training layout.
pub fn train_for_seed(
    env_train: &GridSpec,
    episodes: usize,
    max_steps: usize,
    seed: u64,
) -> (QTable, SampleModel) {
    let h = Hyperparameters {
        max_episodes: episodes,
        max_steps_per_episode: max_steps,
        ..Default::default()
    };
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    train_dynaq(env_train, &RewardSpec::default(), &h, &mut rng)
}

fn trace_row(
    method: Method,
    layout: &str,
    init_cell: usize,
    seed: u64,
    optimal: PathLength,
    trace: &EpisodeTrace,
    no_timing: bool,
) -> BenchRow {
    let steps = trace.num_steps();
    let failed = trace.collisions > 0 || !trace.reached_goal;
    let (optimal_steps, ratio) = match optimal {
        PathLength::Steps(o) if !failed => (o, Some(round6(steps as f64 / o as f64))),
        PathLength::Steps(o) => (o, None),
        PathLength::Unreachable => (0, None),
    };
    BenchRow {
        method: method.name().to_string(),
        layout: layout.to_string(),
        init_cell,
        seed,
        steps,
        optimal: optimal_steps,
        ratio,
        runtime_per_step_ms: if no_timing {
            0.0
        } else {
            round6(trace.runtime_per_step_ms)
        },
        collided: trace.collisions > 0,
        stuck: trace.stuck,
        interventions: trace.interventions,
    }
}

/// Runs one benchmark cell: the given method, deployed on the test layout
/// with its initial state moved to `init_cell`, using the `(q, m)` artifacts
/// trained for this seed.
#[allow(clippy::too_many_arguments)]
pub fn run_one(
    cfg: &ExperimentConfig,
    test_base: &GridSpec,
    init_cell: usize,
    seed: u64,
    q: &QTable,
    m: &SampleModel,
) -> Result<BenchRow, HarnessError> {
    let env = layouts::with_initial(test_base, init_cell);
    let optimal = env.optimal_steps(env.initial, 0, cfg.max_steps);
    let rspec = RewardSpec::default();
    let trace = match cfg.method {
        Method::Dynaq => deploy_unshielded(&env, &rspec, q, 0.99, cfg.max_steps),
        Method::Retrained => {
            let h = Hyperparameters {
                max_episodes: cfg.episodes,
                max_steps_per_episode: cfg.max_steps,
                ..Default::default()
            };
            let mut rng = derive_rng(seed, init_cell, 1);
            let (q2, _) = retrain(&env, &rspec, q, m, &h, &mut rng);
            deploy_unshielded(&env, &rspec, &q2, 0.99, cfg.max_steps)
        }
        Method::BaselineShield => {
            let ts = build_safety_model(&env);
            let c = stop_fallback(&ts, &env, env.stabilization_time())?;
            let p = ShieldParams {
                epsilon: 0.0,
                k_planning: 0,
                n_horizon: 0,
                ..Default::default()
            };
            let mut model = m.clone();
            let mut rng = derive_rng(seed, init_cell, 2);
            deploy(
                &env,
                &rspec,
                q,
                &mut model,
                &c,
                &ts,
                &p,
                &mut rng,
                cfg.max_steps,
            )
        }
        Method::Predictive => {
            let ts = build_safety_model(&env);
            let c = synthesize_controller(&ts, &env, env.stabilization_time())?;
            let p = ShieldParams {
                epsilon: cfg.epsilon,
                k_planning: cfg.planning_k,
                n_horizon: cfg.n_horizon,
                ..Default::default()
            };
            let mut model = m.clone();
            let mut rng = derive_rng(seed, init_cell, 3);
            deploy(
                &env,
                &rspec,
                q,
                &mut model,
                &c,
                &ts,
                &p,
                &mut rng,
                cfg.max_steps,
            )
        }
    };
    Ok(trace_row(
        cfg.method,
        &cfg.layout_test,
        init_cell,
        seed,
        optimal,
        &trace,
        cfg.no_timing,
    ))
}

/// Worker pool honoring the `SHIELD_THREADS` cap.
pub fn thread_pool() -> rayon::ThreadPool {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Some(n) = std::env::var("SHIELD_THREADS")
        .ok()
        .and_then(|v| v.parse::<usize>().ok())
    {
        builder = builder.num_threads(n.max(1));
    }
    builder.build().expect("thread pool")
}

/// The initial cells to benchmark: explicit config, the family's canonical
/// set for built-in layouts, else the layout's own initial mark.
pub fn resolve_init_cells(cfg: &ExperimentConfig, test_base: &GridSpec) -> Vec<usize> {
    if !cfg.init_cells.is_empty() {
        return cfg.init_cells.clone();
    }
    layouts::family_of(&cfg.layout_test)
        .and_then(layouts::bench_cells)
        .unwrap_or_else(|| vec![test_base.cell_number(test_base.initial)])
}

/// Runs the full matrix for the configured method: one training per seed,
/// one deployment per (initial cell, seed), fanned out across workers.
pub fn run_matrix(cfg: &ExperimentConfig) -> Result<BenchReport, HarnessError> {
    let env_train = layouts::resolve(&cfg.layout_train)?;
    let test_base = layouts::resolve(&cfg.layout_test)?;
    if env_train.num_states() != test_base.num_states() {
        return Err(HarnessError::Config(format!(
            "train layout has {} states but test layout has {}",
            env_train.num_states(),
            test_base.num_states()
        )));
    }
    let init_cells = resolve_init_cells(cfg, &test_base);
    let pool = thread_pool();
    let per_seed: Vec<Vec<BenchRow>> = pool.install(|| {
        cfg.seeds
            .par_iter()
            .map(|&seed| {
                let (q, m) = train_for_seed(&env_train, cfg.episodes, cfg.max_steps, seed);
                init_cells
                    .iter()
                    .map(|&cell| run_one(cfg, &test_base, cell, seed, &q, &m))
                    .collect::<Result<Vec<_>, _>>()
            })
            .collect::<Result<Vec<_>, _>>()
    })?;
    let rows: Vec<BenchRow> = per_seed.into_iter().flatten().collect();
    let aggregates = aggregate(&rows);
    Ok(BenchReport { rows, aggregates })
}

/// Groups rows by (method, layout) and takes means; any infinite ratio makes
/// the group mean infinite.
pub fn aggregate(rows: &[BenchRow]) -> Vec<Aggregate> {
    let mut groups: Vec<(String, String)> = Vec::new();
    for r in rows {
        let key = (r.method.clone(), r.layout.clone());
        if !groups.contains(&key) {
            groups.push(key);
        }
    }
    groups
        .into_iter()
        .map(|(method, layout)| {
            let members: Vec<&BenchRow> = rows
                .iter()
                .filter(|r| r.method == method && r.layout == layout)
                .collect();
            let n = members.len();
            let mean_ratio = if members.iter().any(|r| r.ratio.is_none()) {
                None
            } else {
                Some(round6(
                    members.iter().map(|r| r.ratio.unwrap()).sum::<f64>() / n as f64,
                ))
            };
            let mean_runtime =
                round6(members.iter().map(|r| r.runtime_per_step_ms).sum::<f64>() / n as f64);
            Aggregate {
                method,
                layout,
                runs: n,
                mean_ratio,
                mean_runtime_per_step_ms: mean_runtime,
            }
        })
        .collect()
}

fn fmt_ratio(r: Option<f64>) -> String {
    match r {
        Some(v) => format!("{v:.6}"),
        None => "inf".to_string(),
    }
}

/// Renders the per-run rows followed by aggregate lines, matching the JSON
/// report number-for-number.
pub fn to_csv(report: &BenchReport) -> String {
    let mut out = String::from(
        "method,layout,init_cell,seed,steps,optimal,ratio,runtime_per_step_ms,collided,stuck,interventions\n",
    );
    for r in &report.rows {
        out.push_str(&format!(
            "{},{},{},{},{},{},{},{:.6},{},{},{}\n",
            r.method,
            r.layout,
            r.init_cell,
            r.seed,
            r.steps,
            r.optimal,
            fmt_ratio(r.ratio),
            r.runtime_per_step_ms,
            r.collided,
            r.stuck,
            r.interventions
        ));
    }
    out.push('\n');
    out.push_str("# aggregates: method,layout,runs,mean_ratio,mean_runtime_per_step_ms\n");
    for a in &report.aggregates {
        out.push_str(&format!(
            "# {},{},{},{},{:.6}\n",
            a.method,
            a.layout,
            a.runs,
            fmt_ratio(a.mean_ratio),
            a.mean_runtime_per_step_ms
        ));
    }
    out
}
