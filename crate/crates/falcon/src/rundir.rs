//! A run directory is self-describing: `config.json` echoes every
//! effective setting (defaults resolved), `trajectory.csv` logs each
//! warm-up evaluation in order, `result.json` holds the finale, and
//! guided runs add a `model.json` parameter dump. Re-running from the
//! echoed config reproduces the trajectory byte for byte.

use std::fs;
use std::path::{Path, PathBuf};

use csv::{ReaderBuilder, Trim, WriterBuilder};
use falcon_core::autodiff::Mat;
use falcon_core::model::{Head, MetaModelParams, MpLayer};
use falcon_core::search::{SaParams, TrajectoryStep};
use falcon_core::{MetaModelConfig, SearchConfig, SearchOutcome, SpaceIndex};
use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::spacefile::SpaceFile;
use crate::subprocess::design_to_json;
use crate::AppError;

pub const CONFIG_FILE: &str = "config.json";
pub const TRAJECTORY_FILE: &str = "trajectory.csv";
pub const RESULT_FILE: &str = "result.json";
pub const MODEL_FILE: &str = "model.json";

const TRAJECTORY_HEADER: [&str; 6] =
    ["step", "design_id", "design_json", "warmup_score", "predicted_score", "candidate_count"];

/// The full echo written to `config.json`; every field is concrete.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub space: SpaceFile,
    pub evaluator: String,
    pub strategy: String,
    pub search: SearchSettings,
    pub model: ModelSettings,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SearchSettings {
    pub exploration_size: usize,
    pub start_count: usize,
    pub hops: usize,
    pub warmup_units: u32,
    pub full_units: u32,
    pub seed: u64,
    pub temperature: f64,
    pub sa_initial_temperature: f64,
    pub sa_cooling: f64,
    pub bruteforce_fraction: f64,
}

impl SearchSettings {
    pub fn resolved(config: &SearchConfig) -> SearchSettings {
        SearchSettings {
            exploration_size: config.exploration_size,
            start_count: config.starts(),
            hops: config.hops,
            warmup_units: config.warmup_units,
            full_units: config.full_units,
            seed: config.seed,
            temperature: config.temperature,
            sa_initial_temperature: config.sa.initial_temperature,
            sa_cooling: config.sa.cooling,
            bruteforce_fraction: config.bruteforce_fraction,
        }
    }

    pub fn to_core(&self) -> SearchConfig {
        SearchConfig {
            exploration_size: self.exploration_size,
            start_override: Some(self.start_count),
            hops: self.hops,
            warmup_units: self.warmup_units,
            full_units: self.full_units,
            seed: self.seed,
            temperature: self.temperature,
            sa: SaParams {
                initial_temperature: self.sa_initial_temperature,
                cooling: self.sa_cooling,
            },
            bruteforce_fraction: self.bruteforce_fraction,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSettings {
    pub hidden_dim: usize,
    pub mp_layers: usize,
    pub lp_layers: usize,
    pub alpha: f64,
    pub lambda: f64,
    pub tau: f64,
    pub instance_sample_size: usize,
    pub max_train_epochs: usize,
    pub patience: usize,
    pub learning_rate: f64,
}

impl ModelSettings {
    pub fn resolved(config: &MetaModelConfig) -> ModelSettings {
        ModelSettings {
            hidden_dim: config.hidden_dim,
            mp_layers: config.mp_layers,
            lp_layers: config.lp_layers,
            alpha: config.alpha,
            lambda: config.lambda,
            tau: config.tau,
            instance_sample_size: config.instance_sample_size,
            max_train_epochs: config.max_train_epochs,
            patience: config.patience,
            learning_rate: config.learning_rate,
        }
    }

    pub fn to_core(&self) -> MetaModelConfig {
        MetaModelConfig {
            hidden_dim: self.hidden_dim,
            mp_layers: self.mp_layers,
            lp_layers: self.lp_layers,
            alpha: self.alpha,
            lambda: self.lambda,
            tau: self.tau,
            instance_sample_size: self.instance_sample_size,
            max_train_epochs: self.max_train_epochs,
            patience: self.patience,
            learning_rate: self.learning_rate,
        }
    }
}

impl RunConfig {
    pub fn load(path: &Path) -> Result<RunConfig, AppError> {
        let text = fs::read_to_string(path)
            .map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
        serde_json::from_str(&text)
            .map_err(|e| AppError::config(format!("{}: {e}", path.display())))
    }
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct FinalistFile {
    pub design_id: usize,
    pub design: Value,
    pub warmup_score: f64,
    /// Absent when the full evaluation failed.
    pub full_score: Option<f64>,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct ResultFile {
    pub strategy: String,
    pub best: FinalistFile,
    pub finalists: Vec<FinalistFile>,
    pub explored: usize,
    pub failed_evaluations: usize,
    pub notices: Vec<String>,
    pub wall_time_seconds: f64,
    pub config: RunConfig,
}

fn score_field(score: f64) -> String {
    format!("{score}")
}

pub fn trajectory_csv(index: &SpaceIndex, steps: &[TrajectoryStep]) -> Result<Vec<u8>, AppError> {
    let mut writer = WriterBuilder::new().from_writer(Vec::new());
    let io_err = |e: csv::Error| AppError::runtime(e.to_string());
    writer.write_record(TRAJECTORY_HEADER).map_err(io_err)?;
    for step in steps {
        let design = index
            .design(step.design_id)
            .map_err(|e| AppError::runtime(e.to_string()))?;
        writer
            .write_record([
                step.step.to_string(),
                step.design_id.to_string(),
                design_to_json(index, &design).to_string(),
                score_field(step.warmup_score),
                step.predicted_score.map(score_field).unwrap_or_default(),
                step.candidate_count.to_string(),
            ])
            .map_err(io_err)?;
    }
    writer.into_inner().map_err(|e| AppError::runtime(e.to_string()))
}

/// The columns compare needs back from a trajectory file.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryRow {
    pub step: usize,
    pub design_id: usize,
    pub warmup_score: f64,
}

pub fn read_trajectory(path: &Path) -> Result<Vec<TrajectoryRow>, AppError> {
    let cite = |msg: String| AppError::config(format!("{}: {msg}", path.display()));
    let text =
        fs::read_to_string(path).map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
    let mut reader = ReaderBuilder::new().trim(Trim::All).from_reader(text.as_bytes());
    let headers = reader.headers().map_err(|e| cite(e.to_string()))?.clone();
    if headers.iter().ne(TRAJECTORY_HEADER) {
        return Err(cite("unexpected trajectory header".into()));
    }
    let mut rows = Vec::new();
    for record in reader.records() {
        let record = record.map_err(|e| cite(e.to_string()))?;
        let step: usize =
            record[0].parse().map_err(|_| cite(format!("bad step {:?}", &record[0])))?;
        let design_id: usize =
            record[1].parse().map_err(|_| cite(format!("bad design_id {:?}", &record[1])))?;
        let warmup_score = match &record[3] {
            "-inf" => f64::NEG_INFINITY,
            text => {
                text.parse().map_err(|_| cite(format!("bad warmup_score {text:?}")))?
            }
        };
        rows.push(TrajectoryRow { step, design_id, warmup_score });
    }
    Ok(rows)
}

#[derive(Serialize, Deserialize)]
struct TensorFile {
    name: String,
    rows: usize,
    cols: usize,
    data: Vec<f64>,
}

#[derive(Serialize, Deserialize)]
struct ModelFile {
    variant: String,
    config: ModelSettings,
    tensors: Vec<TensorFile>,
}

pub fn model_json(params: &MetaModelParams, config: &MetaModelConfig) -> String {
    let tensors = params
        .named_tensors()
        .into_iter()
        .map(|(name, mat)| TensorFile {
            name,
            rows: mat.rows,
            cols: mat.cols,
            data: mat.data.clone(),
        })
        .collect();
    let file = ModelFile {
        variant: params.variant_name().to_string(),
        config: ModelSettings::resolved(config),
        tensors,
    };
    serde_json::to_string(&file).expect("checkpoint serializes")
}

/// Debug checkpoint loader; shape errors are configuration errors.
pub fn load_model(path: &Path) -> Result<(MetaModelParams, MetaModelConfig), AppError> {
    let cite = |msg: String| AppError::config(format!("{}: {msg}", path.display()));
    let text =
        fs::read_to_string(path).map_err(|e| AppError::config(format!("{}: {e}", path.display())))?;
    let file: ModelFile = serde_json::from_str(&text).map_err(|e| cite(e.to_string()))?;

    let mut mats = std::collections::BTreeMap::new();
    for t in file.tensors {
        if t.data.len() != t.rows * t.cols {
            return Err(cite(format!("tensor {} data length mismatch", t.name)));
        }
        let mat = Mat::from_vec(t.rows, t.cols, t.data);
        if mats.insert(t.name.clone(), mat).is_some() {
            return Err(cite(format!("duplicate tensor {}", t.name)));
        }
    }
    let mut take = |name: &str| {
        mats.remove(name).ok_or_else(|| cite(format!("missing tensor {name}")))
    };
    let head = Head {
        w1: take("head.w1")?,
        b1: take("head.b1")?,
        w2: take("head.w2")?,
        b2: take("head.b2")?,
    };
    let params = match file.variant.as_str() {
        "features_only" => MetaModelParams::FeaturesOnly { head },
        "graph" => {
            let mut mp = Vec::with_capacity(file.config.mp_layers);
            for i in 0..file.config.mp_layers {
                mp.push(MpLayer {
                    w_self: take(&format!("mp.{i}.w_self"))?,
                    w_msg: take(&format!("mp.{i}.w_msg"))?,
                    bias: take(&format!("mp.{i}.bias"))?,
                });
            }
            MetaModelParams::Graph {
                mp,
                proj_w: take("proj.w")?,
                proj_b: take("proj.b")?,
                head,
            }
        }
        other => return Err(cite(format!("unknown variant {other:?}"))),
    };
    if let Some(name) = mats.keys().next() {
        return Err(cite(format!("unexpected tensor {name}")));
    }
    Ok((params, file.config.to_core()))
}

pub struct RunPaths {
    pub dir: PathBuf,
}

impl RunPaths {
    pub fn new(dir: impl Into<PathBuf>) -> RunPaths {
        RunPaths { dir: dir.into() }
    }

    pub fn config(&self) -> PathBuf {
        self.dir.join(CONFIG_FILE)
    }

    pub fn trajectory(&self) -> PathBuf {
        self.dir.join(TRAJECTORY_FILE)
    }

    pub fn result(&self) -> PathBuf {
        self.dir.join(RESULT_FILE)
    }

    pub fn model(&self) -> PathBuf {
        self.dir.join(MODEL_FILE)
    }
}

pub fn write_run(
    paths: &RunPaths,
    config: &RunConfig,
    index: &SpaceIndex,
    outcome: &SearchOutcome,
    wall_time_seconds: f64,
) -> Result<(), AppError> {
    fs::create_dir_all(&paths.dir)?;
    let config_text =
        serde_json::to_string_pretty(config).map_err(|e| AppError::runtime(e.to_string()))?;
    fs::write(paths.config(), config_text + "\n")?;

    fs::write(paths.trajectory(), trajectory_csv(index, &outcome.trajectory)?)?;

    let finalist_file = |f: &falcon_core::search::Finalist| -> Result<FinalistFile, AppError> {
        let design =
            index.design(f.design_id).map_err(|e| AppError::runtime(e.to_string()))?;
        Ok(FinalistFile {
            design_id: f.design_id,
            design: design_to_json(index, &design),
            warmup_score: f.warmup_score,
            full_score: f.full_score.is_finite().then_some(f.full_score),
        })
    };
    let result = ResultFile {
        strategy: outcome.strategy.as_str().to_string(),
        best: finalist_file(&outcome.best)?,
        finalists: outcome
            .finalists
            .iter()
            .map(finalist_file)
            .collect::<Result<Vec<_>, _>>()?,
        explored: outcome.trajectory.len(),
        failed_evaluations: outcome.failed_evaluations,
        notices: outcome.notices.clone(),
        wall_time_seconds,
        config: config.clone(),
    };
    let result_text =
        serde_json::to_string_pretty(&result).map_err(|e| AppError::runtime(e.to_string()))?;
    fs::write(paths.result(), result_text + "\n")?;

    if let Some(params) = &outcome.model {
        fs::write(paths.model(), model_json(params, &config.model.to_core()))?;
    }
    Ok(())
}
