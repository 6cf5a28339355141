//! Performance oracles: the evaluator contract plus the tabular and
//! synthetic implementations used for desk-scale experiments.

use alloc::format;
use alloc::string::String;
use alloc::vec::Vec;
use core::cell::Cell;
use core::fmt;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::space::{Design, SpaceIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum BudgetKind {
    Warmup,
    Full,
}

/// Evaluation budget. `units` are evaluator-defined (epochs for real
/// trainers); the tabular and synthetic evaluators key off `kind` alone.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct Budget {
    pub kind: BudgetKind,
    pub units: u32,
}

impl Budget {
    pub fn warmup(units: u32) -> Budget {
        Budget { kind: BudgetKind::Warmup, units }
    }

    pub fn full(units: u32) -> Budget {
        Budget { kind: BudgetKind::Full, units }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct EvaluationRecord {
    pub design_id: usize,
    /// Validation metric, higher is better.
    pub score: f64,
    /// Per-instance correctness, when the evaluator can provide it.
    pub instance_correct: Option<Vec<bool>>,
    pub budget: Budget,
    /// Seconds spent producing the record; table lookups report 0.
    pub wall_time: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub enum EvalError {
    MissingEntry { design_id: usize },
    ScoreOutOfRange { design_id: usize, score: f64 },
    InconsistentInstanceBits { design_id: usize },
    WrongRowCount { expected: usize, got: usize },
    Failed { reason: String },
}

impl fmt::Display for EvalError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            EvalError::MissingEntry { design_id } => {
                write!(f, "no benchmark entry for design {design_id}")
            }
            EvalError::ScoreOutOfRange { design_id, score } => {
                write!(f, "design {design_id} has score {score} outside [0, 1]")
            }
            EvalError::InconsistentInstanceBits { design_id } => {
                write!(f, "design {design_id} breaks the constant instance-vector length")
            }
            EvalError::WrongRowCount { expected, got } => {
                write!(f, "benchmark has {got} rows, space has {expected} designs")
            }
            EvalError::Failed { reason } => write!(f, "evaluation failed: {reason}"),
        }
    }
}

pub trait Evaluator {
    fn evaluate(&self, design: &Design, budget: Budget) -> Result<EvaluationRecord, EvalError>;
}

/// One benchmark row per design id.
#[derive(Debug, Clone, PartialEq)]
pub struct TabularRow {
    pub warmup: f64,
    pub full: f64,
    pub instance_bits: Option<Vec<bool>>,
}

/// Precomputed scores for every design in a space, indexed by id.
///
/// Scores live in [0, 1]; instance vectors are either absent everywhere
/// or present everywhere with one shared length.
#[derive(Debug, Clone)]
pub struct TabularBenchmark {
    rows: Vec<TabularRow>,
}

impl TabularBenchmark {
    pub fn new(design_count: usize, rows: Vec<TabularRow>) -> Result<TabularBenchmark, EvalError> {
        if rows.len() != design_count {
            return Err(EvalError::WrongRowCount { expected: design_count, got: rows.len() });
        }
        let bit_len = rows.iter().find_map(|r| r.instance_bits.as_ref().map(Vec::len));
        for (id, row) in rows.iter().enumerate() {
            for &score in &[row.warmup, row.full] {
                if !(0.0..=1.0).contains(&score) {
                    return Err(EvalError::ScoreOutOfRange { design_id: id, score });
                }
            }
            if row.instance_bits.as_ref().map(Vec::len) != bit_len {
                return Err(EvalError::InconsistentInstanceBits { design_id: id });
            }
        }
        Ok(TabularBenchmark { rows })
    }

    pub fn from_fn(
        index: &SpaceIndex,
        mut f: impl FnMut(&Design) -> TabularRow,
    ) -> Result<TabularBenchmark, EvalError> {
        let rows =
            (0..index.len()).map(|id| f(&index.design(id).expect("id in range"))).collect();
        TabularBenchmark::new(index.len(), rows)
    }

    pub fn len(&self) -> usize {
        self.rows.len()
    }

    pub fn is_empty(&self) -> bool {
        self.rows.is_empty()
    }

    pub fn row(&self, design_id: usize) -> Option<&TabularRow> {
        self.rows.get(design_id)
    }
}

impl Evaluator for TabularBenchmark {
    fn evaluate(&self, design: &Design, budget: Budget) -> Result<EvaluationRecord, EvalError> {
        let row = self
            .rows
            .get(design.id)
            .ok_or(EvalError::MissingEntry { design_id: design.id })?;
        let score = match budget.kind {
            BudgetKind::Warmup => row.warmup,
            BudgetKind::Full => row.full,
        };
        Ok(EvaluationRecord {
            design_id: design.id,
            score,
            instance_correct: row.instance_bits.clone(),
            budget,
            wall_time: 0.0,
        })
    }
}

/// Number of synthetic task instances per design.
pub const SYNTHETIC_INSTANCES: usize = 64;

/// A seeded landscape over an enumerated space: a random quadratic form on
/// the encoded features plus per-group activity terms, rescaled so scores
/// sit in [0, 1] and neighboring designs score close together.
///
/// Warm-up scores are contracted around the mean until the average score
/// gap across distance-1 pairs is at most `smoothness`; full scores add
/// bounded seeded noise of amplitude `smoothness / 2`. Instance bits come
/// from thresholded random linear models of the features, which keeps
/// neighbors' bit vectors mostly agreeing without further tuning.
#[derive(Debug, Clone)]
pub struct SyntheticLandscape {
    seed: u64,
    smoothness: f64,
    warmup: Vec<f64>,
    full: Vec<f64>,
    bits: Vec<u64>,
    optimum: usize,
    mean_edge_delta: f64,
    mean_edge_hamming: f64,
}

impl SyntheticLandscape {
    pub fn generate(index: &SpaceIndex, seed: u64, smoothness: f64) -> SyntheticLandscape {
        assert!(smoothness >= 0.0 && smoothness.is_finite());
        let n = index.len();
        let width = index.space().encoding_width();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);

        let linear: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
        let quad: Vec<f64> = (0..width * width).map(|_| rng.gen_range(-0.5..0.5)).collect();
        let group_terms: Vec<f64> =
            (0..index.space().group_count()).map(|_| rng.gen_range(-0.5..0.5)).collect();

        let designs: Vec<Design> =
            (0..n).map(|id| index.design(id).expect("id in range")).collect();
        let encoded: Vec<Vec<f64>> = designs.iter().map(|d| index.space().encode(d)).collect();
        let mut warmup: Vec<f64> = encoded
            .iter()
            .enumerate()
            .map(|(id, x)| {
                let mut s = 0.0;
                for (xi, wi) in x.iter().zip(&linear) {
                    s += xi * wi;
                }
                for (i, xi) in x.iter().enumerate() {
                    if *xi == 0.0 {
                        continue;
                    }
                    for (j, xj) in x.iter().enumerate() {
                        s += xi * xj * quad[i * width + j];
                    }
                }
                for (g, term) in group_terms.iter().enumerate() {
                    if index.space().group_is_active(&designs[id], g) {
                        s += term;
                    }
                }
                s
            })
            .collect();

        min_max_rescale(&mut warmup);

        // Contract around the mean so the average |Δscore| over edges lands
        // at `smoothness` (never expand: raw landscapes smoother than the
        // target are left alone).
        let mean_delta_raw = mean_edge_delta(index, &warmup);
        let mean: f64 = warmup.iter().sum::<f64>() / n as f64;
        if mean_delta_raw > smoothness {
            let factor = if mean_delta_raw == 0.0 { 0.0 } else { smoothness / mean_delta_raw };
            for s in &mut warmup {
                *s = mean + (*s - mean) * factor;
            }
        }
        let mean_edge_delta = mean_edge_delta(index, &warmup);

        let amplitude = smoothness / 2.0;
        let full: Vec<f64> = warmup
            .iter()
            .map(|&w| (w + rng.gen_range(-1.0..1.0) * amplitude).clamp(0.0, 1.0))
            .collect();

        let mut bits = alloc::vec![0u64; n];
        for j in 0..SYNTHETIC_INSTANCES {
            let v: Vec<f64> = (0..width).map(|_| rng.gen_range(-1.0..1.0)).collect();
            let level: f64 = rng.gen_range(0.2..0.8);
            let mut z: Vec<f64> = encoded
                .iter()
                .map(|x| x.iter().zip(&v).map(|(a, b)| a * b).sum())
                .collect();
            let mut sorted = z.clone();
            sorted.sort_unstable_by(f64::total_cmp);
            let threshold = sorted[((n - 1) as f64 * level) as usize];
            for (id, zi) in z.drain(..).enumerate() {
                if zi > threshold {
                    bits[id] |= 1 << j;
                }
            }
        }
        let mean_edge_hamming = mean_edge_hamming(index, &bits);

        let optimum = (0..n)
            .max_by(|&a, &b| warmup[a].total_cmp(&warmup[b]))
            .expect("space is non-empty");

        SyntheticLandscape {
            seed,
            smoothness,
            warmup,
            full,
            bits,
            optimum,
            mean_edge_delta,
            mean_edge_hamming,
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn smoothness(&self) -> f64 {
        self.smoothness
    }

    /// Design id with the highest warm-up score.
    pub fn optimum(&self) -> usize {
        self.optimum
    }

    /// Achieved mean |Δ warm-up score| over all distance-1 pairs.
    pub fn mean_edge_delta(&self) -> f64 {
        self.mean_edge_delta
    }

    /// Achieved mean Hamming distance between instance vectors over edges.
    pub fn mean_edge_hamming(&self) -> f64 {
        self.mean_edge_hamming
    }

    fn instance_vec(&self, id: usize) -> Vec<bool> {
        (0..SYNTHETIC_INSTANCES).map(|j| self.bits[id] >> j & 1 == 1).collect()
    }
}

impl Evaluator for SyntheticLandscape {
    fn evaluate(&self, design: &Design, budget: Budget) -> Result<EvaluationRecord, EvalError> {
        if design.id >= self.warmup.len() {
            return Err(EvalError::MissingEntry { design_id: design.id });
        }
        let score = match budget.kind {
            BudgetKind::Warmup => self.warmup[design.id],
            BudgetKind::Full => self.full[design.id],
        };
        Ok(EvaluationRecord {
            design_id: design.id,
            score,
            instance_correct: Some(self.instance_vec(design.id)),
            budget,
            wall_time: 0.0,
        })
    }
}

fn min_max_rescale(values: &mut [f64]) {
    let lo = values.iter().copied().fold(f64::INFINITY, f64::min);
    let hi = values.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    if hi > lo {
        for v in values.iter_mut() {
            *v = (*v - lo) / (hi - lo);
        }
    } else {
        values.iter_mut().for_each(|v| *v = 0.0);
    }
}

fn for_each_edge(index: &SpaceIndex, mut f: impl FnMut(usize, usize)) {
    for u in 0..index.len() {
        for (v, _) in index.neighbors(u).expect("id in range") {
            if v > u {
                f(u, v);
            }
        }
    }
}

fn mean_edge_delta(index: &SpaceIndex, scores: &[f64]) -> f64 {
    let mut sum = 0.0;
    let mut count = 0u64;
    for_each_edge(index, |u, v| {
        sum += (scores[u] - scores[v]).abs();
        count += 1;
    });
    if count == 0 {
        0.0
    } else {
        sum / count as f64
    }
}

fn mean_edge_hamming(index: &SpaceIndex, bits: &[u64]) -> f64 {
    let mut sum = 0u64;
    let mut count = 0u64;
    for_each_edge(index, |u, v| {
        sum += (bits[u] ^ bits[v]).count_ones() as u64;
        count += 1;
    });
    if count == 0 {
        0.0
    } else {
        sum as f64 / count as f64
    }
}

/// Wraps an evaluator and counts calls per budget kind; a test hook for
/// verifying budget laws.
pub struct CountingEvaluator<'a> {
    inner: &'a dyn Evaluator,
    warmup_calls: Cell<u64>,
    full_calls: Cell<u64>,
}

impl<'a> CountingEvaluator<'a> {
    pub fn new(inner: &'a dyn Evaluator) -> CountingEvaluator<'a> {
        CountingEvaluator { inner, warmup_calls: Cell::new(0), full_calls: Cell::new(0) }
    }

    pub fn warmup_calls(&self) -> u64 {
        self.warmup_calls.get()
    }

    pub fn full_calls(&self) -> u64 {
        self.full_calls.get()
    }
}

impl Evaluator for CountingEvaluator<'_> {
    fn evaluate(&self, design: &Design, budget: Budget) -> Result<EvaluationRecord, EvalError> {
        let counter = match budget.kind {
            BudgetKind::Warmup => &self.warmup_calls,
            BudgetKind::Full => &self.full_calls,
        };
        counter.set(counter.get() + 1);
        self.inner.evaluate(design, budget)
    }
}

/// Formats an evaluation failure for trajectory notices.
pub fn failure_notice(design_id: usize, err: &EvalError) -> String {
    format!("design {design_id} failed: {err}")
}
