//! Unguided reference strategies run against the same budget accounting
//! and finale as the guided search, so their results compare one to one.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use crate::eval::{Budget, Evaluator};
use crate::sampling::sample_distinct;
use crate::search::{Recorder, SearchConfig, SearchError, SearchOutcome, Strategy};
use crate::space::SpaceIndex;

/// Evaluates `exploration_size` distinct uniform designs.
pub fn run_random(
    index: &SpaceIndex,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    config.validate_random(index.len())?;
    let k = config.exploration_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(index, evaluator, Budget::warmup(config.warmup_units), k);
    for id in sample_distinct(&mut rng, index.len(), k) {
        rec.warm_eval(id, None, 0)?;
    }
    let (best, finalists) = rec.finale(config.top_k(), Budget::full(config.full_units))?;
    Ok(SearchOutcome {
        strategy: Strategy::Random,
        best,
        finalists,
        trajectory: rec.trajectory,
        failed_evaluations: rec.failed,
        notices: rec.notices,
        model: None,
    })
}

/// Annealed walk over the design graph: each step proposes one uniform
/// neighbor, accepts improvements outright and regressions with
/// probability exp(delta / temperature), then cools. Revisited designs
/// are evaluated again, so the walk spends exactly `exploration_size`
/// evaluations.
pub fn run_sa(
    index: &SpaceIndex,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    config.validate_sa()?;
    let k = config.exploration_size;
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(index, evaluator, Budget::warmup(config.warmup_units), k);

    let mut current = rng.gen_range(0..index.len());
    let mut current_score = rec.warm_eval(current, None, 0)?;
    let mut temperature = config.sa.initial_temperature;
    for _ in 1..k {
        let neighbors = index.neighbors(current)?;
        let (proposal, _) = neighbors[rng.gen_range(0..neighbors.len())];
        let score = rec.warm_eval(proposal, None, 0)?;
        let delta = score - current_score;
        // A zero delta accepts with probability one; a failed proposal
        // (delta of negative infinity) never does.
        let accept = delta > 0.0 || rng.gen::<f64>() < libm::exp(delta / temperature);
        if accept {
            current = proposal;
            current_score = score;
        }
        temperature *= config.sa.cooling;
    }
    let (best, finalists) = rec.finale(config.top_k(), Budget::full(config.full_units))?;
    Ok(SearchOutcome {
        strategy: Strategy::Sa,
        best,
        finalists,
        trajectory: rec.trajectory,
        failed_evaluations: rec.failed,
        notices: rec.notices,
        model: None,
    })
}

/// Warm-up evaluates a uniform `bruteforce_fraction` share of the whole
/// space, then fully evaluates only the single best design.
pub fn run_bruteforce(
    index: &SpaceIndex,
    evaluator: &dyn Evaluator,
    config: &SearchConfig,
) -> Result<SearchOutcome, SearchError> {
    config.validate_bruteforce()?;
    let n = index.len();
    if n == 0 {
        return Err(SearchError::Config("the design space is empty"));
    }
    let count = libm::ceil(config.bruteforce_fraction * n as f64) as usize;
    let count = count.clamp(1, n);
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    let mut rec = Recorder::new(index, evaluator, Budget::warmup(config.warmup_units), count);
    for id in sample_distinct(&mut rng, n, count) {
        rec.warm_eval(id, None, 0)?;
    }
    let (best, finalists) = rec.finale(1, Budget::full(config.full_units))?;
    Ok(SearchOutcome {
        strategy: Strategy::Bruteforce,
        best,
        finalists,
        trajectory: rec.trajectory,
        failed_evaluations: rec.failed,
        notices: rec.notices,
        model: None,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::eval::{CountingEvaluator, TabularBenchmark, TabularRow};
    use crate::search::SaParams;
    use crate::space::{DesignSpace, Dimension};
    use alloc::collections::BTreeSet;
    use alloc::vec;
    use alloc::vec::Vec;

    fn path_index(len: usize) -> SpaceIndex {
        let values: Vec<f64> = (0..len).map(|i| i as f64).collect();
        let space =
            DesignSpace::new(vec![Dimension::numerical("x", &values)], vec![]).unwrap();
        SpaceIndex::new(space).unwrap()
    }

    fn rising_tabular(index: &SpaceIndex) -> TabularBenchmark {
        let n = index.len() as f64;
        TabularBenchmark::from_fn(index, |d| {
            let warmup = (d.id as f64 + 1.0) / n;
            TabularRow { warmup, full: warmup, instance_bits: None }
        })
        .unwrap()
    }

    #[test]
    fn random_exhausts_small_spaces() {
        let index = path_index(12);
        let bench = rising_tabular(&index);
        let counter = CountingEvaluator::new(&bench);
        let config = SearchConfig { exploration_size: 12, seed: 3, ..Default::default() };
        let out = run_random(&index, &counter, &config).unwrap();
        assert_eq!(out.best.design_id, 11);
        assert_eq!(counter.warmup_calls(), 12);
        assert_eq!(counter.full_calls(), 2);
        let distinct: BTreeSet<usize> =
            out.trajectory.iter().map(|s| s.design_id).collect();
        assert_eq!(distinct.len(), 12);
    }

    #[test]
    fn random_is_deterministic_per_seed() {
        let index = path_index(40);
        let bench = rising_tabular(&index);
        let config = SearchConfig { exploration_size: 10, seed: 8, ..Default::default() };
        let a = run_random(&index, &bench, &config).unwrap();
        let b = run_random(&index, &bench, &config).unwrap();
        assert_eq!(a, b);
        let other = SearchConfig { seed: 9, ..config };
        let c = run_random(&index, &bench, &other).unwrap();
        assert_ne!(
            a.trajectory.iter().map(|s| s.design_id).collect::<Vec<_>>(),
            c.trajectory.iter().map(|s| s.design_id).collect::<Vec<_>>()
        );
    }

    #[test]
    fn cold_annealing_climbs_to_the_peak() {
        let index = path_index(6);
        let bench = rising_tabular(&index);
        // Near-zero temperature makes the walk greedy; a long budget lets
        // it reach the top of the monotone slope from anywhere.
        let config = SearchConfig {
            exploration_size: 24,
            seed: 1,
            sa: SaParams { initial_temperature: 1e-9, cooling: 0.5 },
            ..Default::default()
        };
        let out = run_sa(&index, &bench, &config).unwrap();
        assert_eq!(out.best.design_id, 5);
        assert_eq!(out.trajectory.len(), 24);
    }

    #[test]
    fn annealing_proposes_neighbors_of_the_accepted_walk() {
        let index = path_index(9);
        // Constant scores: every proposal has delta zero and is accepted,
        // so consecutive trajectory entries sit one step apart.
        let bench = TabularBenchmark::from_fn(&index, |_| TabularRow {
            warmup: 0.5,
            full: 0.5,
            instance_bits: None,
        })
        .unwrap();
        let config = SearchConfig { exploration_size: 15, seed: 4, ..Default::default() };
        let out = run_sa(&index, &bench, &config).unwrap();
        for pair in out.trajectory.windows(2) {
            let d = index.distance_ids(pair[0].design_id, pair[1].design_id).unwrap();
            assert_eq!(d, 1);
        }
    }

    #[test]
    fn annealing_reevaluates_revisits() {
        let index = path_index(3);
        let bench = rising_tabular(&index);
        let counter = CountingEvaluator::new(&bench);
        // Only three designs but ten evaluations: the walk must revisit.
        let config = SearchConfig { exploration_size: 10, seed: 2, ..Default::default() };
        let out = run_sa(&index, &counter, &config).unwrap();
        assert_eq!(counter.warmup_calls(), 10);
        assert_eq!(out.trajectory.len(), 10);
    }

    #[test]
    fn bruteforce_covers_the_requested_share() {
        let index = path_index(22);
        let bench = rising_tabular(&index);
        let counter = CountingEvaluator::new(&bench);
        let config = SearchConfig {
            bruteforce_fraction: 0.5,
            seed: 6,
            ..Default::default()
        };
        let out = run_bruteforce(&index, &counter, &config).unwrap();
        assert_eq!(counter.warmup_calls(), 11);
        assert_eq!(counter.full_calls(), 1);
        assert_eq!(out.finalists.len(), 1);
    }

    #[test]
    fn full_fraction_bruteforce_finds_the_optimum() {
        let index = path_index(17);
        let bench = rising_tabular(&index);
        let config =
            SearchConfig { bruteforce_fraction: 1.0, seed: 0, ..Default::default() };
        let out = run_bruteforce(&index, &bench, &config).unwrap();
        assert_eq!(out.best.design_id, 16);
        assert_eq!(out.trajectory.len(), 17);
    }

    #[test]
    fn bruteforce_rejects_bad_fractions() {
        let index = path_index(5);
        let bench = rising_tabular(&index);
        for fraction in [0.0, -0.2, 1.5] {
            let config =
                SearchConfig { bruteforce_fraction: fraction, ..Default::default() };
            assert!(matches!(
                run_bruteforce(&index, &bench, &config),
                Err(SearchError::Config(_))
            ));
        }
    }
}
