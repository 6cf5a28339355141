//! Aggregates run directories into per-strategy best-so-far curves:
//! mean and standard error of the running-best warm-up score at every
//! evaluation count, ready for plotting.

use std::collections::BTreeMap;
use std::fs;
use std::path::{Path, PathBuf};

use csv::WriterBuilder;

use crate::rundir::{read_trajectory, RunConfig, RunPaths, TrajectoryRow};
use crate::runner::execute;
use crate::AppError;

#[derive(Debug, Clone, PartialEq)]
pub struct CurvePoint {
    pub strategy: String,
    pub step: usize,
    pub mean_best: f64,
    pub stderr_best: f64,
    pub runs: usize,
}

struct LoadedRun {
    strategy: String,
    exploration_size: usize,
    best_so_far: Vec<f64>,
}

fn load_run(dir: &Path) -> Result<LoadedRun, AppError> {
    let paths = RunPaths::new(dir);
    let config = RunConfig::load(&paths.config())?;
    let rows: Vec<TrajectoryRow> = read_trajectory(&paths.trajectory())?;
    let mut best_so_far = Vec::with_capacity(rows.len());
    let mut best = f64::NEG_INFINITY;
    for row in &rows {
        best = best.max(row.warmup_score);
        best_so_far.push(best);
    }
    Ok(LoadedRun {
        strategy: config.strategy,
        exploration_size: config.search.exploration_size,
        best_so_far,
    })
}

/// Loads every directory and aggregates. Runs must agree on the
/// evaluation budget and contain complete trajectories; offenders are
/// listed in one error.
pub fn curves(dirs: &[PathBuf]) -> Result<Vec<CurvePoint>, AppError> {
    if dirs.is_empty() {
        return Err(AppError::config("compare needs at least one run directory"));
    }
    let mut runs = Vec::with_capacity(dirs.len());
    for dir in dirs {
        runs.push((dir, load_run(dir)?));
    }
    let budget = runs[0].1.exploration_size;
    let offenders: Vec<String> = runs
        .iter()
        .filter(|(_, r)| r.exploration_size != budget || r.best_so_far.len() != r.exploration_size)
        .map(|(dir, _)| dir.display().to_string())
        .collect();
    if !offenders.is_empty() {
        return Err(AppError::config(format!(
            "runs disagree on the evaluation budget or have truncated trajectories: {}",
            offenders.join(", ")
        )));
    }

    let mut by_strategy: BTreeMap<String, Vec<&LoadedRun>> = BTreeMap::new();
    for (_, run) in &runs {
        by_strategy.entry(run.strategy.clone()).or_default().push(run);
    }

    let mut points = Vec::new();
    for (strategy, group) in by_strategy {
        for step in 0..budget {
            let values: Vec<f64> = group.iter().map(|r| r.best_so_far[step]).collect();
            let n = values.len() as f64;
            let mean = values.iter().sum::<f64>() / n;
            let stderr = if values.len() < 2 {
                0.0
            } else {
                let var =
                    values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1.0);
                (var / n).sqrt()
            };
            points.push(CurvePoint {
                strategy: strategy.clone(),
                step: step + 1,
                mean_best: mean,
                stderr_best: stderr,
                runs: values.len(),
            });
        }
    }
    Ok(points)
}

pub fn write_curves(path: &Path, points: &[CurvePoint]) -> Result<(), AppError> {
    let mut writer = WriterBuilder::new().from_writer(Vec::new());
    let io_err = |e: csv::Error| AppError::runtime(e.to_string());
    writer
        .write_record(["strategy", "step", "mean_best", "stderr_best", "runs"])
        .map_err(io_err)?;
    for p in points {
        writer
            .write_record([
                p.strategy.clone(),
                p.step.to_string(),
                format!("{}", p.mean_best),
                format!("{}", p.stderr_best),
                p.runs.to_string(),
            ])
            .map_err(io_err)?;
    }
    let bytes = writer.into_inner().map_err(|e| AppError::runtime(e.to_string()))?;
    fs::write(path, bytes)?;
    Ok(())
}

/// Runs every strategy under every seed into `work_dir/<strategy>-seed<n>`
/// and returns the run directories, ready for `curves`.
pub fn run_matrix(
    base: &RunConfig,
    strategies: &[String],
    seeds: &[u64],
    work_dir: &Path,
) -> Result<Vec<PathBuf>, AppError> {
    if strategies.is_empty() || seeds.is_empty() {
        return Err(AppError::config("compare needs at least one strategy and one seed"));
    }
    let mut dirs = Vec::with_capacity(strategies.len() * seeds.len());
    for strategy in strategies {
        for &seed in seeds {
            let mut config = base.clone();
            config.strategy = strategy.clone();
            config.search.seed = seed;
            let dir = work_dir.join(format!("{strategy}-seed{seed}"));
            execute(&config, &dir)?;
            dirs.push(dir);
        }
    }
    Ok(dirs)
}
