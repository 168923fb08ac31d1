//! Command-line harness: `train`, `deploy`, `bench` and `render`.
//!
//! Exit status: 0 on success, 1 on usage errors, 2 on runtime failures.

use clap::error::ErrorKind;
use clap::{Args, Parser, Subcommand};
use gridshield::dynaq::train_dynaq;
use gridshield::grid::RewardSpec;
use gridshield::harness::bench::{derive_rng, run_matrix, to_csv, train_for_seed};
use gridshield::harness::config::{parse_config, parse_seeds, ExperimentConfig, Method};
use gridshield::harness::persist::{load_json, save_json, save_model, save_qtable, Manifest};
use gridshield::harness::render::{render_svg, render_text};
use gridshield::layouts;
use gridshield::mdp::Hyperparameters;
use gridshield::safety::{build_safety_model, stop_fallback, synthesize_controller};
use gridshield::shield::{deploy, deploy_unshielded, EpisodeTrace, ShieldParams};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;
use std::path::PathBuf;
use std::process::ExitCode;

#[derive(Parser)]
#[command(
    name = "gridshield",
    version,
    about = "Predictive safety shields for tabular RL on gridworlds"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train a Dyna-Q agent and persist the Q-table, model and manifest.
    Train(CommonArgs),
    /// Run one deployment on the test layout and write the trace.
    Deploy(CommonArgs),
    /// Run the benchmark matrix over initial cells and seeds.
    Bench(CommonArgs),
    /// Render a layout (and optionally a recorded trace) as text and SVG.
    Render(CommonArgs),
}

#[derive(Args, Clone, Default)]
struct CommonArgs {
    /// Layout name or path used for training.
    #[arg(long)]
    layout_train: Option<String>,
    /// Layout name or path used for deployment.
    #[arg(long)]
    layout_test: Option<String>,
    /// dynaq, retrained, baseline_shield or predictive.
    #[arg(long)]
    method: Option<Method>,
    /// Prediction horizon N.
    #[arg(long)]
    n_horizon: Option<usize>,
    /// Exploration rate (training for `train`, deployment otherwise).
    #[arg(long)]
    epsilon: Option<f64>,
    /// Planning iterations per shield intervention.
    #[arg(long)]
    planning_k: Option<usize>,
    /// Single seed (train, deploy).
    #[arg(long)]
    seed: Option<u64>,
    /// Seed list for bench: `a..b` or comma-separated.
    #[arg(long)]
    seeds: Option<String>,
    /// Training episodes.
    #[arg(long)]
    episodes: Option<usize>,
    /// Step cap per deployment or training episode.
    #[arg(long)]
    max_steps: Option<usize>,
    /// Output directory.
    #[arg(long)]
    out: Option<PathBuf>,
    /// `key = value` config file; explicit flags override its entries.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Zero out wall-clock columns so repeated runs are byte-identical.
    #[arg(long)]
    no_timing: bool,
    /// Trace file written by `deploy`, consumed by `render`.
    #[arg(long)]
    trace: Option<PathBuf>,
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Runtime(String),
}

impl CliError {
    fn code(&self) -> ExitCode {
        match self {
            CliError::Usage(_) => ExitCode::from(1),
            CliError::Runtime(_) => ExitCode::from(2),
        }
    }
}

impl std::fmt::Display for CliError {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            CliError::Usage(m) | CliError::Runtime(m) => f.write_str(m),
        }
    }
}

fn runtime<E: std::fmt::Display>(e: E) -> CliError {
    CliError::Runtime(e.to_string())
}

/// Merges config-file entries under the explicit flags and produces the
/// resolved experiment setup.
fn resolve_config(args: &CommonArgs) -> Result<ExperimentConfig, CliError> {
    let mut file: BTreeMap<String, String> = BTreeMap::new();
    if let Some(path) = &args.config {
        let text = std::fs::read_to_string(path)
            .map_err(|e| CliError::Runtime(format!("{}: {e}", path.display())))?;
        file = parse_config(&text).map_err(|e| CliError::Usage(e.to_string()))?;
    }
    let pick = |flag: Option<String>, key: &str| flag.or_else(|| file.get(key).cloned());
    let parse_num = |text: Option<String>, key: &str| -> Result<Option<f64>, CliError> {
        text.map(|v| {
            v.parse::<f64>()
                .map_err(|_| CliError::Usage(format!("bad value for {key}: `{v}`")))
        })
        .transpose()
    };
    let parse_int = |text: Option<String>, key: &str| -> Result<Option<u64>, CliError> {
        text.map(|v| {
            v.parse::<u64>()
                .map_err(|_| CliError::Usage(format!("bad value for {key}: `{v}`")))
        })
        .transpose()
    };

    let defaults = ExperimentConfig::default();
    let method = match pick(args.method.map(|m| m.name().to_string()), "method") {
        Some(text) => text.parse::<Method>().map_err(CliError::Usage)?,
        None => defaults.method,
    };
    let seeds = match (&args.seeds, args.seed) {
        (Some(spec), _) => parse_seeds(spec).map_err(CliError::Usage)?,
        (None, Some(seed)) => vec![seed],
        (None, None) => match file.get("seeds") {
            Some(spec) => parse_seeds(spec).map_err(CliError::Usage)?,
            None => match parse_int(file.get("seed").cloned(), "seed")? {
                Some(s) => vec![s],
                None => defaults.seeds,
            },
        },
    };
    Ok(ExperimentConfig {
        layout_train: pick(args.layout_train.clone(), "layout-train")
            .unwrap_or(defaults.layout_train),
        layout_test: pick(args.layout_test.clone(), "layout-test").unwrap_or(defaults.layout_test),
        method,
        n_horizon: parse_int(
            pick(args.n_horizon.map(|v| v.to_string()), "n-horizon"),
            "n-horizon",
        )?
        .map(|v| v as usize)
        .unwrap_or(defaults.n_horizon),
        epsilon: parse_num(
            pick(args.epsilon.map(|v| v.to_string()), "epsilon"),
            "epsilon",
        )?
        .unwrap_or(defaults.epsilon),
        planning_k: parse_int(
            pick(args.planning_k.map(|v| v.to_string()), "planning-k"),
            "planning-k",
        )?
        .map(|v| v as usize)
        .unwrap_or(defaults.planning_k),
        seeds,
        init_cells: Vec::new(),
        episodes: parse_int(
            pick(args.episodes.map(|v| v.to_string()), "episodes"),
            "episodes",
        )?
        .map(|v| v as usize)
        .unwrap_or(defaults.episodes),
        max_steps: parse_int(
            pick(args.max_steps.map(|v| v.to_string()), "max-steps"),
            "max-steps",
        )?
        .map(|v| v as usize)
        .unwrap_or(defaults.max_steps),
        out: args
            .out
            .clone()
            .or_else(|| file.get("out").map(PathBuf::from))
            .unwrap_or(defaults.out),
        no_timing: args.no_timing,
    })
}

fn ensure_out(cfg: &ExperimentConfig) -> Result<(), CliError> {
    std::fs::create_dir_all(&cfg.out)
        .map_err(|e| CliError::Runtime(format!("{}: {e}", cfg.out.display())))
}

fn cmd_train(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    ensure_out(&cfg)?;
    let env = layouts::resolve(&cfg.layout_train).map_err(runtime)?;
    let h = Hyperparameters {
        epsilon: args.epsilon.unwrap_or(0.5),
        max_episodes: cfg.episodes,
        max_steps_per_episode: cfg.max_steps,
        ..Default::default()
    };
    let seed = cfg.seeds[0];
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (q, m) = train_dynaq(&env, &RewardSpec::default(), &h, &mut rng);
    save_qtable(&cfg.out.join("q.txt"), &q).map_err(runtime)?;
    save_model(&cfg.out.join("model.txt"), &m).map_err(runtime)?;
    let manifest = Manifest::new(&cfg.layout_train, seed, &h);
    save_json(&cfg.out.join("manifest.json"), &manifest).map_err(runtime)?;
    println!(
        "trained {} episodes on {} (seed {seed}); artifacts in {}",
        cfg.episodes,
        cfg.layout_train,
        cfg.out.display()
    );
    Ok(())
}

fn cmd_deploy(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    ensure_out(&cfg)?;
    let env_train = layouts::resolve(&cfg.layout_train).map_err(runtime)?;
    let env_test = layouts::resolve(&cfg.layout_test).map_err(runtime)?;
    let seed = cfg.seeds[0];
    let (q, m) = train_for_seed(&env_train, cfg.episodes, cfg.max_steps, seed);
    let rspec = RewardSpec::default();
    let init_cell = env_test.cell_number(env_test.initial);
    let mut trace: EpisodeTrace = match cfg.method {
        Method::Dynaq => deploy_unshielded(&env_test, &rspec, &q, 0.99, cfg.max_steps),
        Method::Retrained => {
            let h = Hyperparameters {
                max_episodes: cfg.episodes,
                max_steps_per_episode: cfg.max_steps,
                ..Default::default()
            };
            let mut rng = derive_rng(seed, init_cell, 1);
            let (q2, _) = gridshield::dynaq::retrain(&env_test, &rspec, &q, &m, &h, &mut rng);
            deploy_unshielded(&env_test, &rspec, &q2, 0.99, cfg.max_steps)
        }
        Method::BaselineShield | Method::Predictive => {
            let ts = build_safety_model(&env_test);
            let horizon = env_test.stabilization_time();
            let (c, p) = if cfg.method == Method::BaselineShield {
                (
                    stop_fallback(&ts, &env_test, horizon).map_err(runtime)?,
                    ShieldParams {
                        epsilon: 0.0,
                        k_planning: 0,
                        n_horizon: 0,
                        ..Default::default()
                    },
                )
            } else {
                (
                    synthesize_controller(&ts, &env_test, horizon).map_err(runtime)?,
                    ShieldParams {
                        epsilon: cfg.epsilon,
                        k_planning: cfg.planning_k,
                        n_horizon: cfg.n_horizon,
                        ..Default::default()
                    },
                )
            };
            let mut model = m.clone();
            let mut rng = derive_rng(
                seed,
                init_cell,
                if cfg.method == Method::BaselineShield {
                    2
                } else {
                    3
                },
            );
            deploy(
                &env_test,
                &rspec,
                &q,
                &mut model,
                &c,
                &ts,
                &p,
                &mut rng,
                cfg.max_steps,
            )
        }
    };
    if cfg.no_timing {
        trace.runtime_per_step_ms = 0.0;
    }
    save_json(&cfg.out.join("trace.json"), &trace).map_err(runtime)?;
    println!(
        "{}: {} steps, {} interventions, collisions={}, reached_goal={}, stuck={}",
        cfg.method,
        trace.num_steps(),
        trace.interventions,
        trace.collisions,
        trace.reached_goal,
        trace.stuck
    );
    Ok(())
}

fn cmd_bench(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    ensure_out(&cfg)?;
    let report = run_matrix(&cfg).map_err(runtime)?;
    std::fs::write(cfg.out.join("bench.csv"), to_csv(&report)).map_err(runtime)?;
    save_json(&cfg.out.join("bench.json"), &report).map_err(runtime)?;
    for a in &report.aggregates {
        let ratio = a
            .mean_ratio
            .map(|r| format!("{r:.3}"))
            .unwrap_or_else(|| "inf".to_string());
        println!(
            "{} on {}: mean ratio {} over {} runs ({:.4} ms/step)",
            a.method, a.layout, ratio, a.runs, a.mean_runtime_per_step_ms
        );
    }
    Ok(())
}

fn cmd_render(args: &CommonArgs) -> Result<(), CliError> {
    let cfg = resolve_config(args)?;
    ensure_out(&cfg)?;
    let env = layouts::resolve(&cfg.layout_test).map_err(runtime)?;
    let trace: Option<EpisodeTrace> = match &args.trace {
        Some(path) => Some(load_json(path).map_err(runtime)?),
        None => None,
    };
    let text = render_text(&env, trace.as_ref()).map_err(runtime)?;
    let svg = render_svg(&env, trace.as_ref()).map_err(runtime)?;
    std::fs::write(cfg.out.join("render.txt"), &text).map_err(runtime)?;
    std::fs::write(cfg.out.join("render.svg"), &svg).map_err(runtime)?;
    print!("{text}");
    Ok(())
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) if matches!(e.kind(), ErrorKind::DisplayHelp | ErrorKind::DisplayVersion) => {
            print!("{e}");
            return ExitCode::SUCCESS;
        }
        Err(e) => {
            eprint!("{e}");
            return ExitCode::from(1);
        }
    };
    let result = match &cli.command {
        Command::Train(args) => cmd_train(args),
        Command::Deploy(args) => cmd_deploy(args),
        Command::Bench(args) => cmd_bench(args),
        Command::Render(args) => cmd_render(args),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            e.code()
        }
    }
}
