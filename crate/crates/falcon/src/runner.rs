//! Executes one configured run end to end: build the space, wire up the
//! evaluator, run the strategy, and write the run directory.

use std::path::Path;
use std::time::Instant;

use falcon_core::eval::SyntheticLandscape;
use falcon_core::model::ModelError;
use falcon_core::search::{self, SearchError};
use falcon_core::{Evaluator, SearchOutcome, SpaceIndex, Strategy};

use crate::rundir::{write_run, RunConfig, RunPaths};
use crate::subprocess::SubprocessEvaluator;
use crate::{tabular, AppError};

#[derive(Debug, Clone, PartialEq)]
pub enum EvaluatorSpec {
    Tabular(String),
    Synthetic { seed: u64, smoothness: f64 },
    Exec(String),
}

impl EvaluatorSpec {
    /// `tabular:<csv path>` | `synthetic:<seed>:<smoothness>` | `exec:<command>`
    pub fn parse(text: &str) -> Result<EvaluatorSpec, AppError> {
        let bad = || {
            AppError::config(format!(
                "evaluator {text:?}: expected tabular:<path>, synthetic:<seed>:<smoothness>, or exec:<command>"
            ))
        };
        let (kind, rest) = text.split_once(':').ok_or_else(bad)?;
        match kind {
            "tabular" if !rest.is_empty() => Ok(EvaluatorSpec::Tabular(rest.to_string())),
            "exec" if !rest.trim().is_empty() => Ok(EvaluatorSpec::Exec(rest.to_string())),
            "synthetic" => {
                let (seed, smoothness) = rest.split_once(':').ok_or_else(bad)?;
                let seed = seed.parse().map_err(|_| bad())?;
                let smoothness: f64 = smoothness.parse().map_err(|_| bad())?;
                if !(smoothness >= 0.0 && smoothness.is_finite()) {
                    return Err(AppError::config(format!(
                        "evaluator {text:?}: smoothness must be finite and nonnegative"
                    )));
                }
                Ok(EvaluatorSpec::Synthetic { seed, smoothness })
            }
            _ => Err(bad()),
        }
    }
}

pub fn build_evaluator<'a>(
    spec: &EvaluatorSpec,
    index: &'a SpaceIndex,
) -> Result<Box<dyn Evaluator + 'a>, AppError> {
    match spec {
        EvaluatorSpec::Tabular(path) => {
            Ok(Box::new(tabular::load(Path::new(path), index)?))
        }
        EvaluatorSpec::Synthetic { seed, smoothness } => {
            Ok(Box::new(SyntheticLandscape::generate(index, *seed, *smoothness)))
        }
        EvaluatorSpec::Exec(command) => {
            Ok(Box::new(SubprocessEvaluator::new(index, command)?))
        }
    }
}

fn search_error(e: SearchError) -> AppError {
    match e {
        SearchError::Config(_) | SearchError::Model(ModelError::Config(_)) => {
            AppError::Config(e.to_string())
        }
        other => AppError::Runtime(other.to_string()),
    }
}

#[derive(Debug)]
pub struct RunSummary {
    pub outcome: SearchOutcome,
    pub wall_time_seconds: f64,
}

/// Runs the configured strategy and writes `out_dir`; the directory is
/// self-describing and re-runnable via its `config.json`.
pub fn execute(config: &RunConfig, out_dir: &Path) -> Result<RunSummary, AppError> {
    let index = config.space.index()?;
    let strategy = Strategy::parse(&config.strategy).ok_or_else(|| {
        AppError::config(format!(
            "unknown strategy {:?}; expected one of {}",
            config.strategy,
            Strategy::ALL.map(|s| s.as_str()).join(", ")
        ))
    })?;
    let spec = EvaluatorSpec::parse(&config.evaluator)?;
    let evaluator = build_evaluator(&spec, &index)?;
    let search_config = config.search.to_core();
    let model_config = config.model.to_core();

    let started = Instant::now();
    let outcome = search::run(&index, evaluator.as_ref(), strategy, &search_config, &model_config)
        .map_err(search_error)?;
    let wall_time_seconds = started.elapsed().as_secs_f64();

    write_run(&RunPaths::new(out_dir), config, &index, &outcome, wall_time_seconds)?;
    Ok(RunSummary { outcome, wall_time_seconds })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rundir::{ModelSettings, SearchSettings};
    use crate::spacefile::SpaceFile;
    use falcon_core::{MetaModelConfig, SearchConfig};

    #[test]
    fn evaluator_specs_parse() {
        assert_eq!(
            EvaluatorSpec::parse("tabular:bench.csv").unwrap(),
            EvaluatorSpec::Tabular("bench.csv".into())
        );
        assert_eq!(
            EvaluatorSpec::parse("synthetic:7:0.05").unwrap(),
            EvaluatorSpec::Synthetic { seed: 7, smoothness: 0.05 }
        );
        assert_eq!(
            EvaluatorSpec::parse("exec:python eval.py --fast").unwrap(),
            EvaluatorSpec::Exec("python eval.py --fast".into())
        );
        for bad in ["", "tabular:", "synthetic:7", "synthetic:x:0.1", "magic:1", "synthetic:1:-0.5"] {
            assert!(EvaluatorSpec::parse(bad).is_err(), "{bad:?} parsed");
        }
    }

    fn toy_config(strategy: &str, seed: u64) -> RunConfig {
        let space = SpaceFile::parse(
            r#"{ "dimensions": [
                { "name": "x", "kind": "numerical", "choices": [0.0, 1.0, 2.0, 3.0] },
                { "name": "c", "kind": "categorical", "choices": ["a", "b", "c"] }
            ] }"#,
        )
        .unwrap();
        RunConfig {
            space,
            evaluator: "synthetic:5:0.1".into(),
            strategy: strategy.into(),
            search: SearchSettings::resolved(&SearchConfig {
                exploration_size: 8,
                hops: 2,
                seed,
                ..Default::default()
            }),
            model: ModelSettings::resolved(&MetaModelConfig {
                hidden_dim: 4,
                mp_layers: 1,
                lp_layers: 2,
                instance_sample_size: 4,
                max_train_epochs: 30,
                patience: 5,
                ..Default::default()
            }),
        }
    }

    #[test]
    fn execute_writes_a_rerunnable_directory() {
        let dir = tempfile::tempdir().unwrap();
        let run_dir = dir.path().join("run");
        let config = toy_config("falcon", 3);
        let summary = execute(&config, &run_dir).unwrap();
        assert_eq!(summary.outcome.trajectory.len(), 8);

        let echoed = RunConfig::load(&run_dir.join("config.json")).unwrap();
        assert_eq!(echoed, config);
        let first = std::fs::read(run_dir.join("trajectory.csv")).unwrap();

        let rerun_dir = dir.path().join("rerun");
        execute(&echoed, &rerun_dir).unwrap();
        let second = std::fs::read(rerun_dir.join("trajectory.csv")).unwrap();
        assert_eq!(first, second);
        assert!(run_dir.join("model.json").exists());
    }

    #[test]
    fn unknown_strategy_is_a_config_error() {
        let dir = tempfile::tempdir().unwrap();
        let config = toy_config("gradient_descent", 0);
        let err = execute(&config, dir.path()).unwrap_err();
        assert_eq!(err.exit_code(), 2);
    }
}
