//! Command-line surface. Subcommands: `build-graph` for materializing a
//! design graph and its statistics, `search` for one run, `compare` for
//! multi-seed curve aggregation, and `eval-echo`, a reference subprocess
//! evaluator for wiring tests.

use std::fs;
use std::path::PathBuf;
use std::time::Instant;

use clap::{Args, Parser, Subcommand};
use falcon_core::graph::DesignGraph;
use falcon_core::{MetaModelConfig, SearchConfig};
use serde_json::json;

use crate::compare::{curves, run_matrix, write_curves};
use crate::rundir::{ModelSettings, RunConfig, SearchSettings};
use crate::runner::execute;
use crate::spacefile::SpaceFile;
use crate::AppError;

#[derive(Parser)]
#[command(
    name = "falcon",
    version,
    about = "Sample-efficient search over design graphs"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Subcommand)]
pub enum Command {
    /// Build the full design graph of a space and report statistics.
    BuildGraph {
        /// Design-space declaration (JSON).
        #[arg(long)]
        space: PathBuf,
        /// Also write the statistics JSON to this path.
        #[arg(long)]
        stats_out: Option<PathBuf>,
        /// Write the undirected edge list as CSV (u,v,label).
        #[arg(long)]
        edges_out: Option<PathBuf>,
    },
    /// Run one strategy and write a self-describing run directory.
    Search {
        /// Re-run an existing run's echoed config; flags still override.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        space: Option<PathBuf>,
        /// tabular:<csv> | synthetic:<seed>:<smoothness> | exec:<command>
        #[arg(long)]
        evaluator: Option<String>,
        /// falcon | falcon_g | falcon_lp | random | sa | bruteforce
        #[arg(long)]
        strategy: Option<String>,
        #[command(flatten)]
        knobs: Knobs,
        /// Run directory to create.
        #[arg(long)]
        out: PathBuf,
    },
    /// Aggregate runs into per-strategy best-so-far curves (CSV).
    Compare {
        /// Existing run directories to aggregate.
        #[arg(long, num_args = 1..)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        space: Option<PathBuf>,
        #[arg(long)]
        evaluator: Option<String>,
        /// Comma-separated strategies to run (matrix mode).
        #[arg(long, value_delimiter = ',')]
        strategies: Vec<String>,
        /// Seeds as `a..b` (half-open) or a comma-separated list.
        #[arg(long)]
        seeds: Option<String>,
        /// Where matrix mode writes its run directories.
        #[arg(long)]
        work_dir: Option<PathBuf>,
        #[command(flatten)]
        knobs: Knobs,
        /// Output CSV path.
        #[arg(long)]
        out: PathBuf,
    },
    /// Reference subprocess evaluator: reads the input file named by its
    /// argument and prints a deterministic record echoing the design.
    EvalEcho { input: PathBuf },
}

/// Search and model settings shared by `search` and `compare`; absent
/// flags keep the config-file value or the documented default.
#[derive(Args)]
pub struct Knobs {
    /// Warm-up evaluation budget K.
    #[arg(long)]
    budget: Option<usize>,
    #[arg(long)]
    seed: Option<u64>,
    /// Candidate frontier radius in hops.
    #[arg(long)]
    hops: Option<usize>,
    /// Start designs evaluated before the guided loop.
    #[arg(long)]
    starts: Option<usize>,
    #[arg(long)]
    warmup_units: Option<u32>,
    #[arg(long)]
    full_units: Option<u32>,
    /// Softmax temperature for candidate sampling.
    #[arg(long)]
    temperature: Option<f64>,
    #[arg(long)]
    sa_t0: Option<f64>,
    #[arg(long)]
    sa_cooling: Option<f64>,
    #[arg(long)]
    bruteforce_fraction: Option<f64>,
    #[arg(long)]
    hidden_dim: Option<usize>,
    #[arg(long)]
    mp_layers: Option<usize>,
    #[arg(long)]
    lp_layers: Option<usize>,
    /// Label propagation mixing coefficient.
    #[arg(long)]
    alpha: Option<f64>,
    /// Rank-loss weight.
    #[arg(long)]
    lambda: Option<f64>,
    /// Rank-loss temperature.
    #[arg(long)]
    tau: Option<f64>,
    /// Instance columns sampled for the task-specific channel.
    #[arg(long)]
    instances: Option<usize>,
    #[arg(long)]
    epochs: Option<usize>,
    #[arg(long)]
    patience: Option<usize>,
    #[arg(long)]
    learning_rate: Option<f64>,
}

impl Knobs {
    fn apply(&self, search: &mut SearchConfig, model: &mut MetaModelConfig) {
        if let Some(v) = self.budget {
            search.exploration_size = v;
        }
        if let Some(v) = self.seed {
            search.seed = v;
        }
        if let Some(v) = self.hops {
            search.hops = v;
        }
        if let Some(v) = self.starts {
            search.start_override = Some(v);
        }
        if let Some(v) = self.warmup_units {
            search.warmup_units = v;
        }
        if let Some(v) = self.full_units {
            search.full_units = v;
        }
        if let Some(v) = self.temperature {
            search.temperature = v;
        }
        if let Some(v) = self.sa_t0 {
            search.sa.initial_temperature = v;
        }
        if let Some(v) = self.sa_cooling {
            search.sa.cooling = v;
        }
        if let Some(v) = self.bruteforce_fraction {
            search.bruteforce_fraction = v;
        }
        if let Some(v) = self.hidden_dim {
            model.hidden_dim = v;
        }
        if let Some(v) = self.mp_layers {
            model.mp_layers = v;
        }
        if let Some(v) = self.lp_layers {
            model.lp_layers = v;
        }
        if let Some(v) = self.alpha {
            model.alpha = v;
        }
        if let Some(v) = self.lambda {
            model.lambda = v;
        }
        if let Some(v) = self.tau {
            model.tau = v;
        }
        if let Some(v) = self.instances {
            model.instance_sample_size = v;
        }
        if let Some(v) = self.epochs {
            model.max_train_epochs = v;
        }
        if let Some(v) = self.patience {
            model.patience = v;
        }
        if let Some(v) = self.learning_rate {
            model.learning_rate = v;
        }
    }
}

pub fn run(cli: Cli) -> Result<(), AppError> {
    match cli.command {
        Command::BuildGraph { space, stats_out, edges_out } => {
            cmd_build_graph(&space, stats_out.as_deref(), edges_out.as_deref())
        }
        Command::Search { config, space, evaluator, strategy, knobs, out } => {
            cmd_search(config, space, evaluator, strategy, &knobs, &out)
        }
        Command::Compare { runs, space, evaluator, strategies, seeds, work_dir, knobs, out } => {
            cmd_compare(runs, space, evaluator, strategies, seeds, work_dir, &knobs, &out)
        }
        Command::EvalEcho { input } => cmd_eval_echo(&input),
    }
}

fn cmd_build_graph(
    space: &std::path::Path,
    stats_out: Option<&std::path::Path>,
    edges_out: Option<&std::path::Path>,
) -> Result<(), AppError> {
    let file = SpaceFile::load(space)?;
    let index = file.index()?;
    let started = Instant::now();
    let graph = DesignGraph::build(&index);
    let stats = graph.stats();
    let construction_seconds = started.elapsed().as_secs_f64();

    // Mean degree in both conventions: plain undirected, and counting
    // each node's self-relation the way directed dumps often do.
    let stats_json = json!({
        "node_count": stats.node_count,
        "undirected_edge_count": stats.undirected_edge_count,
        "directed_edge_count": stats.directed_edge_count,
        "directed_edge_count_with_self_loops": stats.directed_edge_count + stats.node_count,
        "mean_degree": stats.mean_degree,
        "mean_degree_with_self_loops": stats.mean_degree + 1.0,
        "diameter": stats.diameter,
        "component_count": stats.component_count,
        "construction_seconds": construction_seconds,
    });
    let text = serde_json::to_string_pretty(&stats_json)
        .map_err(|e| AppError::runtime(e.to_string()))?;
    println!("{text}");
    if let Some(path) = stats_out {
        fs::write(path, text.clone() + "\n")?;
    }
    if let Some(path) = edges_out {
        let space_ref = index.space();
        let mut writer = csv::WriterBuilder::new().from_writer(Vec::new());
        let io_err = |e: csv::Error| AppError::runtime(e.to_string());
        writer.write_record(["u", "v", "label"]).map_err(io_err)?;
        for &(u, v, coord) in graph.edges() {
            writer
                .write_record([u.to_string(), v.to_string(), coord.name(space_ref).to_string()])
                .map_err(io_err)?;
        }
        let bytes = writer.into_inner().map_err(|e| AppError::runtime(e.to_string()))?;
        fs::write(path, bytes)?;
    }
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_search(
    config_path: Option<PathBuf>,
    space: Option<PathBuf>,
    evaluator: Option<String>,
    strategy: Option<String>,
    knobs: &Knobs,
    out: &std::path::Path,
) -> Result<(), AppError> {
    let from_config = config_path.is_some();
    let (mut space_file, mut evaluator_spec, mut strategy_name, mut search, mut model) =
        match config_path {
            Some(path) => {
                let loaded = RunConfig::load(&path)?;
                (
                    loaded.space,
                    Some(loaded.evaluator),
                    Some(loaded.strategy),
                    loaded.search.to_core(),
                    loaded.model.to_core(),
                )
            }
            None => {
                let path = space.as_ref().ok_or_else(|| {
                    AppError::config("--space is required unless --config is given")
                })?;
                (
                    SpaceFile::load(path)?,
                    None,
                    None,
                    SearchConfig::default(),
                    MetaModelConfig::default(),
                )
            }
        };
    if from_config {
        // An explicit space file wins over the echoed one.
        if let Some(path) = &space {
            space_file = SpaceFile::load(path)?;
        }
    }
    if evaluator.is_some() {
        evaluator_spec = evaluator;
    }
    if strategy.is_some() {
        strategy_name = strategy;
    }
    knobs.apply(&mut search, &mut model);

    let config = RunConfig {
        space: space_file,
        evaluator: evaluator_spec
            .ok_or_else(|| AppError::config("--evaluator is required"))?,
        strategy: strategy_name
            .ok_or_else(|| AppError::config("--strategy is required"))?,
        search: SearchSettings::resolved(&search),
        model: ModelSettings::resolved(&model),
    };
    let summary = execute(&config, out)?;
    let line = json!({
        "out": out.display().to_string(),
        "strategy": config.strategy,
        "best_design_id": summary.outcome.best.design_id,
        "best_full_score": summary.outcome.best.full_score,
        "explored": summary.outcome.trajectory.len(),
        "failed_evaluations": summary.outcome.failed_evaluations,
        "wall_time_seconds": summary.wall_time_seconds,
    });
    println!("{line}");
    Ok(())
}

#[allow(clippy::too_many_arguments)]
fn cmd_compare(
    runs: Vec<PathBuf>,
    space: Option<PathBuf>,
    evaluator: Option<String>,
    strategies: Vec<String>,
    seeds: Option<String>,
    work_dir: Option<PathBuf>,
    knobs: &Knobs,
    out: &std::path::Path,
) -> Result<(), AppError> {
    let matrix_requested =
        space.is_some() || evaluator.is_some() || !strategies.is_empty() || seeds.is_some();
    let dirs = if !runs.is_empty() {
        if matrix_requested {
            return Err(AppError::config(
                "pass either --runs or a matrix spec (--space/--evaluator/--strategies/--seeds), not both",
            ));
        }
        runs
    } else {
        let space = space
            .ok_or_else(|| AppError::config("matrix mode needs --space"))?;
        let evaluator =
            evaluator.ok_or_else(|| AppError::config("matrix mode needs --evaluator"))?;
        if strategies.is_empty() {
            return Err(AppError::config("matrix mode needs --strategies"));
        }
        let seeds = parse_seeds(
            &seeds.ok_or_else(|| AppError::config("matrix mode needs --seeds"))?,
        )?;
        let work_dir =
            work_dir.ok_or_else(|| AppError::config("matrix mode needs --work-dir"))?;
        let mut search = SearchConfig::default();
        let mut model = MetaModelConfig::default();
        knobs.apply(&mut search, &mut model);
        let base = RunConfig {
            space: SpaceFile::load(&space)?,
            evaluator,
            strategy: strategies[0].clone(),
            search: SearchSettings::resolved(&search),
            model: ModelSettings::resolved(&model),
        };
        run_matrix(&base, &strategies, &seeds, &work_dir)?
    };
    let points = curves(&dirs)?;
    write_curves(out, &points)?;
    println!(
        "{}",
        json!({ "out": out.display().to_string(), "points": points.len(), "runs": dirs.len() })
    );
    Ok(())
}

/// `a..b` (half-open range) or a comma-separated list.
fn parse_seeds(text: &str) -> Result<Vec<u64>, AppError> {
    let bad =
        || AppError::config(format!("seeds {text:?}: expected a..b or n[,n...]"));
    if let Some((lo, hi)) = text.split_once("..") {
        let lo: u64 = lo.parse().map_err(|_| bad())?;
        let hi: u64 = hi.parse().map_err(|_| bad())?;
        if lo >= hi {
            return Err(bad());
        }
        return Ok((lo..hi).collect());
    }
    text.split(',').map(|part| part.trim().parse().map_err(|_| bad())).collect()
}

/// Deterministic stand-in for a real training child process: scores are
/// a hash of the design, instance bits follow from the same hash.
fn cmd_eval_echo(input: &std::path::Path) -> Result<(), AppError> {
    let text = fs::read_to_string(input)
        .map_err(|e| AppError::config(format!("{}: {e}", input.display())))?;
    let value: serde_json::Value = serde_json::from_str(&text)
        .map_err(|e| AppError::config(format!("{}: {e}", input.display())))?;
    let design = value
        .get("design")
        .and_then(|d| d.as_object())
        .ok_or_else(|| AppError::config("input lacks a design object"))?;
    value
        .get("budget")
        .and_then(|b| b.get("kind"))
        .and_then(|k| k.as_str())
        .filter(|k| matches!(*k, "warmup" | "full"))
        .ok_or_else(|| AppError::config("input lacks a budget kind"))?;

    let mut hash: u64 = 0xcbf29ce484222325;
    for byte in serde_json::Value::Object(design.clone()).to_string().bytes() {
        hash ^= u64::from(byte);
        hash = hash.wrapping_mul(0x100000001b3);
    }
    let score = (hash % 1_000_000_007) as f64 / 1_000_000_007.0;
    let bits: Vec<u64> = (0..16).map(|i| (hash >> (i * 3)) & 1).collect();
    println!(
        "{}",
        json!({ "design": design, "score": score, "instance_correct": bits })
    );
    Ok(())
}
