//! The guided search loop: evaluate a few uniform start designs at the
//! warm-up budget, then repeatedly train the meta-model on everything
//! explored so far, score the candidate frontier, and sample the next
//! design from a softmax over the predictions. The run ends by fully
//! evaluating the best warm-up designs and returning the winner.

use alloc::collections::{BTreeMap, BTreeSet};
use alloc::string::String;
use alloc::vec;
use alloc::vec::Vec;
use core::fmt;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::autodiff::Mat;
use crate::eval::{failure_notice, Budget, Evaluator};
use crate::graph::{build_subgraph, multi_hop_neighbors, GraphError, Subgraph};
use crate::model::{
    self, InstanceMatrix, MetaModelConfig, MetaModelParams, ModelError, ModelInputs,
};
use crate::sampling::{sample_distinct, sample_weighted, softmax};
use crate::space::{SpaceError, SpaceIndex};

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Strategy {
    Falcon,
    FalconG,
    FalconLp,
    Random,
    Sa,
    Bruteforce,
}

impl Strategy {
    pub const ALL: [Strategy; 6] = [
        Strategy::Falcon,
        Strategy::FalconG,
        Strategy::FalconLp,
        Strategy::Random,
        Strategy::Sa,
        Strategy::Bruteforce,
    ];

    pub fn as_str(&self) -> &'static str {
        match self {
            Strategy::Falcon => "falcon",
            Strategy::FalconG => "falcon_g",
            Strategy::FalconLp => "falcon_lp",
            Strategy::Random => "random",
            Strategy::Sa => "sa",
            Strategy::Bruteforce => "bruteforce",
        }
    }

    pub fn parse(name: &str) -> Option<Strategy> {
        Strategy::ALL
            .into_iter()
            .find(|s| name.replace('-', "_").eq_ignore_ascii_case(s.as_str()))
    }

    /// Whether the strategy trains a meta-model.
    pub fn is_guided(&self) -> bool {
        matches!(self, Strategy::Falcon | Strategy::FalconG | Strategy::FalconLp)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SaParams {
    pub initial_temperature: f64,
    /// Multiplies the temperature after every step, in (0, 1).
    pub cooling: f64,
}

impl Default for SaParams {
    fn default() -> Self {
        SaParams { initial_temperature: 1.0, cooling: 0.95 }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchConfig {
    /// Number of warm-up evaluations the run may spend.
    pub exploration_size: usize,
    /// Start-design count; default min(ceil(0.10 * exploration_size), 10).
    pub start_override: Option<usize>,
    /// Candidate frontier radius around explored designs.
    pub hops: usize,
    pub warmup_units: u32,
    pub full_units: u32,
    pub seed: u64,
    /// Softmax temperature for candidate sampling.
    pub temperature: f64,
    pub sa: SaParams,
    /// Share of the space the bruteforce strategy evaluates.
    pub bruteforce_fraction: f64,
}

impl Default for SearchConfig {
    fn default() -> Self {
        SearchConfig {
            exploration_size: 30,
            start_override: None,
            hops: 3,
            warmup_units: 1,
            full_units: 10,
            seed: 0,
            temperature: 1.0,
            sa: SaParams::default(),
            bruteforce_fraction: 0.05,
        }
    }
}

impl SearchConfig {
    /// Start designs evaluated before the guided loop.
    pub fn starts(&self) -> usize {
        self.start_override
            .unwrap_or_else(|| self.exploration_size.div_ceil(10).min(10))
    }

    /// Designs re-evaluated at the full budget at the end of a run.
    pub fn top_k(&self) -> usize {
        self.exploration_size.div_ceil(10).min(5)
    }

    fn validate_common(&self) -> Result<(), SearchError> {
        if self.exploration_size == 0 {
            return Err(SearchError::Config("exploration size must be positive"));
        }
        if !(self.temperature > 0.0 && self.temperature.is_finite()) {
            return Err(SearchError::Config("temperature must be a finite positive number"));
        }
        Ok(())
    }

    fn validate_guided(&self, space_len: usize) -> Result<(), SearchError> {
        self.validate_common()?;
        if self.exploration_size > space_len {
            return Err(SearchError::Config("exploration size exceeds the design count"));
        }
        if self.hops == 0 {
            return Err(SearchError::Config("hop count must be positive"));
        }
        let starts = self.starts();
        if starts == 0 || starts > self.exploration_size {
            return Err(SearchError::Config("start count must lie in 1..=exploration size"));
        }
        Ok(())
    }

    pub(crate) fn validate_random(&self, space_len: usize) -> Result<(), SearchError> {
        self.validate_common()?;
        if self.exploration_size > space_len {
            return Err(SearchError::Config("exploration size exceeds the design count"));
        }
        Ok(())
    }

    pub(crate) fn validate_sa(&self) -> Result<(), SearchError> {
        self.validate_common()?;
        let sa = &self.sa;
        if !(sa.initial_temperature > 0.0 && sa.initial_temperature.is_finite()) {
            return Err(SearchError::Config("initial temperature must be positive"));
        }
        if !(sa.cooling > 0.0 && sa.cooling < 1.0) {
            return Err(SearchError::Config("cooling factor must lie strictly inside (0, 1)"));
        }
        Ok(())
    }

    pub(crate) fn validate_bruteforce(&self) -> Result<(), SearchError> {
        if !(self.bruteforce_fraction > 0.0 && self.bruteforce_fraction <= 1.0) {
            return Err(SearchError::Config("bruteforce fraction must lie in (0, 1]"));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq)]
pub enum SearchError {
    Config(&'static str),
    Space(SpaceError),
    Graph(GraphError),
    Model(ModelError),
    /// More than half of the planned evaluations failed.
    TooManyFailures { failed: usize, planned: usize },
    /// No design survived to be returned (all finalists failed).
    NoUsableResult,
}

impl fmt::Display for SearchError {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SearchError::Config(msg) => write!(f, "bad search config: {msg}"),
            SearchError::Space(e) => write!(f, "{e}"),
            SearchError::Graph(e) => write!(f, "{e}"),
            SearchError::Model(e) => write!(f, "{e}"),
            SearchError::TooManyFailures { failed, planned } => {
                write!(f, "{failed} of {planned} evaluations failed; aborting the run")
            }
            SearchError::NoUsableResult => {
                write!(f, "every finalist failed its full evaluation")
            }
        }
    }
}

impl From<SpaceError> for SearchError {
    fn from(e: SpaceError) -> Self {
        SearchError::Space(e)
    }
}

impl From<GraphError> for SearchError {
    fn from(e: GraphError) -> Self {
        SearchError::Graph(e)
    }
}

impl From<ModelError> for SearchError {
    fn from(e: ModelError) -> Self {
        SearchError::Model(e)
    }
}

/// One warm-up evaluation, in order.
#[derive(Debug, Clone, PartialEq)]
pub struct TrajectoryStep {
    pub step: usize,
    pub design_id: usize,
    /// Negative infinity marks a failed evaluation.
    pub warmup_score: f64,
    /// The meta-model's score for the design, when one was used to pick it.
    pub predicted_score: Option<f64>,
    /// Candidate frontier size at selection time; zero for start designs
    /// and for strategies without a frontier.
    pub candidate_count: usize,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Finalist {
    pub design_id: usize,
    pub warmup_score: f64,
    /// Negative infinity marks a failed full evaluation.
    pub full_score: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct SearchOutcome {
    pub strategy: Strategy,
    pub best: Finalist,
    /// Every design evaluated at the full budget, in rank order.
    pub finalists: Vec<Finalist>,
    pub trajectory: Vec<TrajectoryStep>,
    pub failed_evaluations: usize,
    pub notices: Vec<String>,
    /// Final meta-model parameters, for guided strategies.
    pub model: Option<MetaModelParams>,
}

pub fn run(
    index: &SpaceIndex,
    evaluator: &dyn Evaluator,
    strategy: Strategy,
    config: &SearchConfig,
    model_config: &MetaModelConfig,
) -> Result<SearchOutcome, SearchError> {
    match strategy {
        Strategy::Falcon | Strategy::FalconG | Strategy::FalconLp => {
            run_guided(index, evaluator, strategy, config, model_config)
        }
        Strategy::Random => crate::baselines::run_random(index, evaluator, config),
        Strategy::Sa => crate::baselines::run_sa(index, evaluator, config),
        Strategy::Bruteforce => crate::baselines::run_bruteforce(index, evaluator, config),
    }
}

/// Bookkeeping shared by every strategy: trajectory rows, first-seen
/// records per design, the failure-abort law, and the full-budget finale.
pub(crate) struct Recorder<'a> {
    index: &'a SpaceIndex,
    evaluator: &'a dyn Evaluator,
    warm: Budget,
    planned: usize,
    pub trajectory: Vec<TrajectoryStep>,
    pub records: BTreeMap<usize, (f64, Option<Vec<bool>>)>,
    pub failed: usize,
    pub notices: Vec<String>,
}

impl<'a> Recorder<'a> {
    pub fn new(
        index: &'a SpaceIndex,
        evaluator: &'a dyn Evaluator,
        warm: Budget,
        planned: usize,
    ) -> Recorder<'a> {
        Recorder {
            index,
            evaluator,
            warm,
            planned,
            trajectory: Vec::new(),
            records: BTreeMap::new(),
            failed: 0,
            notices: Vec::new(),
        }
    }

    /// Evaluates at the warm-up budget and logs the step. Failures score
    /// negative infinity; once they pass half the planned budget the run
    /// aborts.
    pub fn warm_eval(
        &mut self,
        design_id: usize,
        predicted_score: Option<f64>,
        candidate_count: usize,
    ) -> Result<f64, SearchError> {
        let design = self.index.design(design_id)?;
        let (score, bits) = match self.evaluator.evaluate(&design, self.warm) {
            Ok(record) if record.score.is_finite() => (record.score, record.instance_correct),
            Ok(record) => {
                self.failed += 1;
                self.notices.push(alloc::format!(
                    "design {design_id} returned non-finite score {}; treated as failed",
                    record.score
                ));
                (f64::NEG_INFINITY, None)
            }
            Err(err) => {
                self.failed += 1;
                self.notices.push(failure_notice(design_id, &err));
                (f64::NEG_INFINITY, None)
            }
        };
        self.trajectory.push(TrajectoryStep {
            step: self.trajectory.len() + 1,
            design_id,
            warmup_score: score,
            predicted_score,
            candidate_count,
        });
        self.records.entry(design_id).or_insert((score, bits));
        if self.failed * 2 > self.planned {
            return Err(SearchError::TooManyFailures {
                failed: self.failed,
                planned: self.planned,
            });
        }
        Ok(score)
    }

    /// Distinct designs that evaluated successfully, ascending by id.
    pub fn successes(&self) -> impl Iterator<Item = (usize, f64)> + '_ {
        self.records
            .iter()
            .filter(|(_, (score, _))| score.is_finite())
            .map(|(&id, &(score, _))| (id, score))
    }

    /// Re-evaluates the `size` best designs by warm-up score (ties to the
    /// smaller id) at the full budget and picks the winner the same way.
    pub fn finale(
        &mut self,
        size: usize,
        full: Budget,
    ) -> Result<(Finalist, Vec<Finalist>), SearchError> {
        let mut ranked: Vec<(usize, f64)> = self.successes().collect();
        ranked.sort_unstable_by(|a, b| b.1.total_cmp(&a.1).then(a.0.cmp(&b.0)));
        ranked.truncate(size);
        if ranked.is_empty() {
            return Err(SearchError::NoUsableResult);
        }
        let mut finalists = Vec::with_capacity(ranked.len());
        for (id, warmup_score) in ranked {
            let design = self.index.design(id)?;
            let full_score = match self.evaluator.evaluate(&design, full) {
                Ok(record) if record.score.is_finite() => record.score,
                Ok(record) => {
                    self.failed += 1;
                    self.notices.push(alloc::format!(
                        "design {id} returned non-finite full score {}; treated as failed",
                        record.score
                    ));
                    f64::NEG_INFINITY
                }
                Err(err) => {
                    self.failed += 1;
                    self.notices.push(failure_notice(id, &err));
                    f64::NEG_INFINITY
                }
            };
            finalists.push(Finalist { design_id: id, warmup_score, full_score });
        }
        let best = finalists
            .iter()
            .max_by(|a, b| {
                a.full_score.total_cmp(&b.full_score).then(b.design_id.cmp(&a.design_id))
            })
            .cloned()
            .expect("at least one finalist");
        if best.full_score == f64::NEG_INFINITY {
            return Err(SearchError::NoUsableResult);
        }
        Ok((best, finalists))
    }
}

pub(crate) fn softmax_with_temperature(scores: &[f64], temperature: f64) -> Vec<f64> {
    let scaled: Vec<f64> = scores.iter().map(|s| s / temperature).collect();
    softmax(&scaled)
}

fn run_guided(
    index: &SpaceIndex,
    evaluator: &dyn Evaluator,
    variant: Strategy,
    config: &SearchConfig,
    model_config: &MetaModelConfig,
) -> Result<SearchOutcome, SearchError> {
    config.validate_guided(index.len())?;
    model_config.validate()?;
    let space = index.space();
    let k = config.exploration_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(index, evaluator, Budget::warmup(config.warmup_units), k);

    // Start designs commit in ascending id order so that concurrent
    // warm-up evaluation could never change the record.
    let mut start_ids = sample_distinct(&mut rng, index.len(), config.starts());
    start_ids.sort_unstable();
    for &id in &start_ids {
        rec.warm_eval(id, None, 0)?;
    }

    let mut explored: BTreeSet<usize> = start_ids.iter().copied().collect();
    let mut explored_count = start_ids.len();
    let mut candidates = multi_hop_neighbors(index, &explored, config.hops)?;

    // The task-specific channel samples its instance columns once, right
    // after the start designs report. Strategies or evaluators without
    // instance data run with a zero-width channel.
    let mut channel_columns: Vec<usize> = Vec::new();
    let mut instance_len = 0usize;
    if variant == Strategy::Falcon {
        let mut anchor_ids = Vec::new();
        let mut anchor_bits = Vec::new();
        for (&id, (score, bits)) in rec.records.iter() {
            if let Some(b) = bits {
                if score.is_finite() && !b.is_empty() {
                    anchor_ids.push(id);
                    anchor_bits.push(b.clone());
                }
            }
        }
        let lengths_agree = anchor_bits.windows(2).all(|w| w[0].len() == w[1].len());
        if anchor_ids.is_empty() || !lengths_agree {
            rec.notices.push(String::from(
                "no usable per-instance results; task-specific channel disabled",
            ));
        } else {
            instance_len = anchor_bits[0].len();
            let matrix = InstanceMatrix::new(anchor_ids, anchor_bits)?;
            channel_columns =
                model::select_instances(&matrix, model_config.instance_sample_size, &mut rng);
        }
    }

    let feature_width = space.encoding_width();
    let mut params = match variant {
        Strategy::FalconG => {
            MetaModelParams::init_features_only(model_config, feature_width, &mut rng)
        }
        _ => MetaModelParams::init_graph(
            model_config,
            feature_width,
            space.relation_width(),
            channel_columns.len(),
            &mut rng,
        ),
    };

    let mut warned_untrained = false;
    while explored_count < k {
        if candidates.is_empty() {
            return Err(SearchError::Config(
                "candidate frontier emptied before the budget was spent",
            ));
        }
        let cands: Vec<usize> = candidates.iter().copied().collect();
        let anchors: Vec<(usize, f64)> = rec.successes().collect();

        let predictions = if anchors.len() >= 2 {
            let sub = build_subgraph(index, &explored, &candidates)?;
            let (features, edge_features, channel) = assemble_inputs(
                index,
                &sub,
                variant,
                &rec.records,
                &channel_columns,
                instance_len,
                model_config,
            )?;
            let inputs = ModelInputs {
                subgraph: &sub,
                features: &features,
                edge_features: &edge_features,
                channel: &channel,
            };
            let mut anchor_rows = Vec::with_capacity(anchors.len());
            let mut anchor_scores = Vec::with_capacity(anchors.len());
            for &(id, score) in &anchors {
                anchor_rows.push(sub.local(id).expect("explored designs are subgraph nodes"));
                anchor_scores.push(score);
            }
            model::train(&mut params, model_config, &inputs, &anchor_rows, &anchor_scores, &mut rng)?;
            let all = model::forward(&params, model_config, &inputs)?;
            Some(
                cands
                    .iter()
                    .map(|&id| all[sub.local(id).expect("candidates are subgraph nodes")])
                    .collect::<Vec<f64>>(),
            )
        } else {
            if !warned_untrained {
                rec.notices.push(String::from(
                    "fewer than two scored designs; sampling candidates uniformly",
                ));
                warned_untrained = true;
            }
            None
        };

        let weights = match &predictions {
            Some(p) => softmax_with_temperature(p, config.temperature),
            None => vec![1.0; cands.len()],
        };
        let pick = sample_weighted(&mut rng, &weights);
        let picked = cands[pick];
        rec.warm_eval(picked, predictions.as_ref().map(|p| p[pick]), cands.len())?;
        explored.insert(picked);
        explored_count += 1;
        candidates.remove(&picked);
        let frontier = multi_hop_neighbors(index, &BTreeSet::from([picked]), config.hops)?;
        for id in frontier {
            if !explored.contains(&id) {
                candidates.insert(id);
            }
        }
    }

    let (best, finalists) = rec.finale(config.top_k(), Budget::full(config.full_units))?;
    Ok(SearchOutcome {
        strategy: variant,
        best,
        finalists,
        trajectory: rec.trajectory,
        failed_evaluations: rec.failed,
        notices: rec.notices,
        model: Some(params),
    })
}

/// Node features, per-edge relation one-hots, and the propagated instance
/// channel for one subgraph. The graph-blind variant gets empty edge and
/// channel matrices.
fn assemble_inputs(
    index: &SpaceIndex,
    sub: &Subgraph,
    variant: Strategy,
    records: &BTreeMap<usize, (f64, Option<Vec<bool>>)>,
    channel_columns: &[usize],
    instance_len: usize,
    model_config: &MetaModelConfig,
) -> Result<(Mat, Mat, Mat), SearchError> {
    let space = index.space();
    let n = sub.node_count();
    let mut features = Mat::zeros(n, space.encoding_width());
    for (row, &id) in sub.nodes.iter().enumerate() {
        let design = index.design(id)?;
        let encoded = space.encode(&design);
        features.data[row * features.cols..(row + 1) * features.cols]
            .copy_from_slice(&encoded);
    }

    if variant == Strategy::FalconG {
        return Ok((features, Mat::zeros(0, 0), Mat::zeros(n, 0)));
    }

    let relation_width = space.relation_width();
    let mut edge_features = Mat::zeros(sub.edges.len(), relation_width);
    for (row, &(_, _, coord)) in sub.edges.iter().enumerate() {
        edge_features.set(row, coord.onehot_index(space), 1.0);
    }

    let width = channel_columns.len();
    let mut channel = Mat::zeros(n, width);
    if width > 0 {
        for (row, &id) in sub.nodes.iter().enumerate() {
            let Some((score, Some(bits))) = records.get(&id) else { continue };
            if !score.is_finite() || bits.len() != instance_len {
                continue;
            }
            for (c, &col) in channel_columns.iter().enumerate() {
                channel.set(row, c, f64::from(u8::from(bits[col])));
            }
        }
        channel = model::label_propagate(sub, &channel, model_config.alpha, model_config.lp_layers)?;
    }
    Ok((features, edge_features, channel))
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{CountingEvaluator, EvalError, EvaluationRecord, TabularBenchmark, TabularRow};
    use crate::space::{Design, DesignSpace, Dimension};

    fn grid_index() -> SpaceIndex {
        let space = DesignSpace::new(
            vec![
                Dimension::numerical("a", &[0.0, 1.0, 2.0, 3.0]),
                Dimension::numerical("b", &[0.0, 1.0, 2.0]),
                Dimension::categorical("c", &["x", "y"]),
            ],
            vec![],
        )
        .unwrap();
        SpaceIndex::new(space).unwrap()
    }

    fn smooth_tabular(index: &SpaceIndex) -> TabularBenchmark {
        // Peak at one corner, decaying with distance; instance bits track
        // score thresholds so the task channel has signal.
        let peak = index.len() - 1;
        TabularBenchmark::from_fn(index, |d| {
            let dist = index.distance_ids(d.id, peak).unwrap() as f64;
            let warmup = 1.0 / (1.0 + dist);
            TabularRow {
                warmup,
                full: warmup,
                instance_bits: Some((0..8).map(|t| warmup > t as f64 / 8.0).collect()),
            }
        })
        .unwrap()
    }

    #[test]
    fn derived_counts_follow_the_budget() {
        let mk = |k| SearchConfig { exploration_size: k, ..Default::default() };
        assert_eq!(mk(30).starts(), 3);
        assert_eq!(mk(30).top_k(), 3);
        assert_eq!(mk(100).starts(), 10);
        assert_eq!(mk(100).top_k(), 5);
        assert_eq!(mk(200).starts(), 10);
        assert_eq!(mk(1).starts(), 1);
        assert_eq!(mk(1).top_k(), 1);
    }

    #[test]
    fn strategy_names_round_trip() {
        for s in Strategy::ALL {
            assert_eq!(Strategy::parse(s.as_str()), Some(s));
        }
        assert_eq!(Strategy::parse("falcon-lp"), Some(Strategy::FalconLp));
        assert_eq!(Strategy::parse("nope"), None);
    }

    #[test]
    fn temperature_scales_the_sampling_gap() {
        let w = softmax_with_temperature(&[0.0, 0.5], 0.25);
        let ratio = w[1] / w[0];
        assert!((ratio - libm::exp(2.0)).abs() < 1e-9);
    }

    fn quick_config(seed: u64) -> (SearchConfig, MetaModelConfig) {
        (
            SearchConfig { exploration_size: 8, hops: 2, seed, ..Default::default() },
            MetaModelConfig {
                hidden_dim: 4,
                mp_layers: 1,
                lp_layers: 2,
                instance_sample_size: 4,
                max_train_epochs: 30,
                patience: 5,
                learning_rate: 0.05,
                ..Default::default()
            },
        )
    }

    #[test]
    fn guided_run_is_deterministic_and_spends_the_budget() {
        let index = grid_index();
        let bench = smooth_tabular(&index);
        let (config, model_config) = quick_config(5);
        let counter = CountingEvaluator::new(&bench);
        let a = run(&index, &counter, Strategy::Falcon, &config, &model_config).unwrap();
        assert_eq!(counter.warmup_calls(), 8);
        assert_eq!(counter.full_calls(), 1);
        assert_eq!(a.trajectory.len(), 8);
        assert_eq!(a.finalists.len(), 1);
        assert!(a.model.is_some());

        let b = run(&index, &bench, Strategy::Falcon, &config, &model_config).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn explored_designs_stay_within_the_hop_radius() {
        let index = grid_index();
        let bench = smooth_tabular(&index);
        let (config, model_config) = quick_config(9);
        let out = run(&index, &bench, Strategy::Falcon, &config, &model_config).unwrap();
        let starts = config.starts();
        let mut seen: BTreeSet<usize> =
            out.trajectory[..starts].iter().map(|s| s.design_id).collect();
        for step in &out.trajectory[starts..] {
            let reachable = multi_hop_neighbors(&index, &seen, config.hops).unwrap();
            assert!(
                reachable.contains(&step.design_id),
                "step {} outside the frontier",
                step.step
            );
            assert!(step.candidate_count > 0);
            seen.insert(step.design_id);
        }
    }

    #[test]
    fn variants_share_start_evaluations_and_lp_matches_without_instances() {
        let index = grid_index();
        // No instance bits: the task channel must shut off, making the lp
        // ablation coincide with the full strategy.
        let bench = TabularBenchmark::from_fn(&index, |d| {
            let warmup = 1.0 / (1.0 + d.id as f64);
            TabularRow { warmup, full: warmup, instance_bits: None }
        })
        .unwrap();
        let (config, model_config) = quick_config(11);
        let falcon = run(&index, &bench, Strategy::Falcon, &config, &model_config).unwrap();
        let lp = run(&index, &bench, Strategy::FalconLp, &config, &model_config).unwrap();
        let g = run(&index, &bench, Strategy::FalconG, &config, &model_config).unwrap();

        let starts = config.starts();
        assert_eq!(falcon.trajectory[..starts], lp.trajectory[..starts]);
        assert_eq!(falcon.trajectory[..starts], g.trajectory[..starts]);
        assert_eq!(falcon.trajectory, lp.trajectory);
        assert_eq!(falcon.best, lp.best);
    }

    struct FailingEvaluator {
        fail_ids: BTreeSet<usize>,
        inner: TabularBenchmark,
    }

    impl Evaluator for FailingEvaluator {
        fn evaluate(
            &self,
            design: &Design,
            budget: Budget,
        ) -> Result<EvaluationRecord, EvalError> {
            if self.fail_ids.contains(&design.id) {
                return Err(EvalError::Failed { reason: String::from("injected") });
            }
            self.inner.evaluate(design, budget)
        }
    }

    #[test]
    fn total_failure_aborts_past_half_the_budget() {
        let index = grid_index();
        let bench = smooth_tabular(&index);
        let all = FailingEvaluator { fail_ids: (0..index.len()).collect(), inner: bench };
        let (config, model_config) = quick_config(13);
        let err = run(&index, &all, Strategy::Falcon, &config, &model_config).unwrap_err();
        // Aborts at the first failure count exceeding half of 8.
        assert_eq!(err, SearchError::TooManyFailures { failed: 5, planned: 8 });
    }

    #[test]
    fn failed_designs_never_reach_the_finale() {
        let index = grid_index();
        let bench = smooth_tabular(&index);
        // Fail the global optimum and its surroundings.
        let peak = index.len() - 1;
        let fail_ids: BTreeSet<usize> =
            (0..index.len()).filter(|&id| index.distance_ids(id, peak).unwrap() <= 1).collect();
        let evaluator = FailingEvaluator { fail_ids: fail_ids.clone(), inner: bench };
        let (mut config, model_config) = quick_config(17);
        config.exploration_size = 20;
        match run(&index, &evaluator, Strategy::Falcon, &config, &model_config) {
            Ok(out) => {
                assert!(out.failed_evaluations <= 10);
                for f in &out.finalists {
                    assert!(!fail_ids.contains(&f.design_id));
                    assert!(f.warmup_score.is_finite());
                }
            }
            // Allowed: the walk may hit enough failures to abort.
            Err(SearchError::TooManyFailures { .. }) => {}
            Err(other) => panic!("unexpected error {other}"),
        }
    }

    #[test]
    fn degenerate_budget_returns_best_start() {
        let index = grid_index();
        let bench = smooth_tabular(&index);
        let (mut config, model_config) = quick_config(19);
        config.exploration_size = 2;
        config.start_override = Some(2);
        let out = run(&index, &bench, Strategy::Falcon, &config, &model_config).unwrap();
        assert_eq!(out.trajectory.len(), 2);
        // Ties go to the smaller design id.
        let best_start = out
            .trajectory
            .iter()
            .max_by(|a, b| {
                a.warmup_score.total_cmp(&b.warmup_score).then(b.design_id.cmp(&a.design_id))
            })
            .unwrap();
        assert_eq!(out.best.design_id, best_start.design_id);
    }

    #[test]
    fn config_validation_rejects_nonsense() {
        let index = grid_index();
        let bench = smooth_tabular(&index);
        let model_config = MetaModelConfig::default();
        let too_big =
            SearchConfig { exploration_size: index.len() + 1, ..Default::default() };
        assert!(matches!(
            run(&index, &bench, Strategy::Falcon, &too_big, &model_config),
            Err(SearchError::Config(_))
        ));
        let zero_hop = SearchConfig { hops: 0, exploration_size: 5, ..Default::default() };
        assert!(matches!(
            run(&index, &bench, Strategy::Falcon, &zero_hop, &model_config),
            Err(SearchError::Config(_))
        ));
        let bad_start = SearchConfig {
            exploration_size: 5,
            start_override: Some(9),
            ..Default::default()
        };
        assert!(matches!(
            run(&index, &bench, Strategy::Falcon, &bad_start, &model_config),
            Err(SearchError::Config(_))
        ));
    }
}
