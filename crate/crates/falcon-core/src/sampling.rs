//! Seeded sampling helpers shared by the search strategies.

use alloc::vec::Vec;
use rand::Rng;

/// `k` distinct values from `0..n`, uniform, by partial Fisher-Yates.
/// Panics if `k > n`.
pub fn sample_distinct<R: Rng>(rng: &mut R, n: usize, k: usize) -> Vec<usize> {
    assert!(k <= n, "cannot draw {k} distinct values from 0..{n}");
    let mut pool: Vec<usize> = (0..n).collect();
    for i in 0..k {
        let j = rng.gen_range(i..n);
        pool.swap(i, j);
    }
    pool.truncate(k);
    pool
}

/// Max-subtracted softmax; uniform when all scores are equal.
pub fn softmax(scores: &[f64]) -> Vec<f64> {
    if scores.is_empty() {
        return Vec::new();
    }
    let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let mut out: Vec<f64> = scores.iter().map(|s| libm::exp(s - max)).collect();
    let total: f64 = out.iter().sum();
    for v in &mut out {
        *v /= total;
    }
    out
}

/// Index drawn proportionally to `weights`. Weights must be non-negative
/// with a positive sum.
pub fn sample_weighted<R: Rng>(rng: &mut R, weights: &[f64]) -> usize {
    let total: f64 = weights.iter().sum();
    assert!(total > 0.0, "weights must have a positive sum");
    let u = rng.gen::<f64>() * total;
    let mut acc = 0.0;
    for (i, w) in weights.iter().enumerate() {
        acc += w;
        if u < acc {
            return i;
        }
    }
    weights.len() - 1
}

/// `k` distinct indices drawn without replacement, each round proportional
/// to the remaining weights.
pub fn sample_weighted_without_replacement<R: Rng>(
    rng: &mut R,
    weights: &[f64],
    k: usize,
) -> Vec<usize> {
    assert!(k <= weights.len());
    let mut remaining = weights.to_vec();
    let mut out = Vec::with_capacity(k);
    for _ in 0..k {
        let pick = sample_weighted(rng, &remaining);
        remaining[pick] = 0.0;
        out.push(pick);
    }
    out
}

/// Entropy in nats of a Bernoulli with success probability `p`.
pub fn binary_entropy(p: f64) -> f64 {
    if p <= 0.0 || p >= 1.0 {
        return 0.0;
    }
    -p * libm::log(p) - (1.0 - p) * libm::log(1.0 - p)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sample_distinct_is_distinct_and_in_range() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        for _ in 0..50 {
            let got = sample_distinct(&mut rng, 20, 8);
            let mut sorted = got.clone();
            sorted.sort_unstable();
            sorted.dedup();
            assert_eq!(sorted.len(), 8);
            assert!(got.iter().all(|&v| v < 20));
        }
    }

    #[test]
    fn sample_distinct_full_range_is_permutation() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut got = sample_distinct(&mut rng, 6, 6);
        got.sort_unstable();
        assert_eq!(got, (0..6).collect::<Vec<_>>());
    }

    #[test]
    fn softmax_ratio_is_exp_of_gap() {
        let p = softmax(&[0.2, 0.9]);
        let ratio = p[1] / p[0];
        assert!((ratio - libm::exp(0.7)).abs() < 1e-12);
        assert!((p[0] + p[1] - 1.0).abs() < 1e-15);
    }

    #[test]
    fn softmax_is_uniform_on_equal_scores() {
        let p = softmax(&[3.3, 3.3, 3.3, 3.3]);
        for v in p {
            assert!((v - 0.25).abs() < 1e-15);
        }
    }

    #[test]
    fn weighted_sampling_tracks_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        let weights = [1.0, 3.0];
        let mut counts = [0usize; 2];
        for _ in 0..40_000 {
            counts[sample_weighted(&mut rng, &weights)] += 1;
        }
        let ratio = counts[1] as f64 / counts[0] as f64;
        assert!((ratio - 3.0).abs() < 0.2, "ratio {ratio}");
    }

    #[test]
    fn weighted_without_replacement_is_distinct() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let picks = sample_weighted_without_replacement(&mut rng, &[1.0, 2.0, 3.0, 4.0], 4);
        let mut sorted = picks.clone();
        sorted.sort_unstable();
        assert_eq!(sorted, alloc::vec![0, 1, 2, 3]);
    }

    #[test]
    fn binary_entropy_edges() {
        assert_eq!(binary_entropy(0.0), 0.0);
        assert_eq!(binary_entropy(1.0), 0.0);
        assert!((binary_entropy(0.5) - libm::log(2.0)).abs() < 1e-15);
    }
}
