//! Self-contained ROUGE-1 / ROUGE-2 / ROUGE-L scoring.
//!
//! Used three ways: evaluation of generated summaries, greedy oracle
//! sentence selection during label construction, and as the target metric
//! in the acceptance suite. Matching is raw-token (no stemming, no stopword
//! removal); ROUGE-L is sentence-level LCS over the full token sequences.

use std::collections::HashMap;
use std::hash::Hash;

/// Precision / recall / F1 triple for one metric on one pair.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RougeScore {
    pub precision: f64,
    pub recall: f64,
    pub f1: f64,
}

impl RougeScore {
    fn zero() -> Self {
        RougeScore {
            precision: 0.0,
            recall: 0.0,
            f1: 0.0,
        }
    }

    fn from_counts(overlap: f64, n_cand: f64, n_ref: f64) -> Self {
        if n_cand == 0.0 || n_ref == 0.0 {
            return RougeScore::zero();
        }
        let precision = overlap / n_cand;
        let recall = overlap / n_ref;
        let f1 = if precision + recall > 0.0 {
            2.0 * precision * recall / (precision + recall)
        } else {
            0.0
        };
        RougeScore {
            precision,
            recall,
            f1,
        }
    }
}

/// Clipped n-gram overlap ROUGE. `n` must be 1 or 2.
pub fn rouge_n<T: Eq + Hash>(candidate: &[T], reference: &[T], n: usize) -> RougeScore {
    assert!(n == 1 || n == 2, "rouge_n supports n=1 and n=2, got {n}");
    if candidate.len() < n || reference.len() < n {
        return RougeScore::zero();
    }
    let mut ref_counts: HashMap<&[T], usize> = HashMap::new();
    for gram in reference.windows(n) {
        *ref_counts.entry(gram).or_insert(0) += 1;
    }
    let mut overlap = 0usize;
    for gram in candidate.windows(n) {
        if let Some(c) = ref_counts.get_mut(gram) {
            if *c > 0 {
                *c -= 1;
                overlap += 1;
            }
        }
    }
    RougeScore::from_counts(
        overlap as f64,
        (candidate.len() + 1 - n) as f64,
        (reference.len() + 1 - n) as f64,
    )
}

/// Full dynamic-programming LCS table; `table[i][j]` is the LCS length of
/// `a[..i]` and `b[..j]`. Shared with the word aligner, which walks the
/// table to recover one canonical alignment.
pub fn lcs_table<T: PartialEq>(a: &[T], b: &[T]) -> Vec<Vec<usize>> {
    let mut table = vec![vec![0usize; b.len() + 1]; a.len() + 1];
    for i in 1..=a.len() {
        for j in 1..=b.len() {
            table[i][j] = if a[i - 1] == b[j - 1] {
                table[i - 1][j - 1] + 1
            } else {
                table[i - 1][j].max(table[i][j - 1])
            };
        }
    }
    table
}

pub fn lcs_length<T: PartialEq>(a: &[T], b: &[T]) -> usize {
    lcs_table(a, b)[a.len()][b.len()]
}

/// Sentence-level ROUGE-L: LCS over the whole sequences.
pub fn rouge_l<T: PartialEq>(candidate: &[T], reference: &[T]) -> RougeScore {
    if candidate.is_empty() || reference.is_empty() {
        return RougeScore::zero();
    }
    let lcs = lcs_length(candidate, reference) as f64;
    RougeScore::from_counts(lcs, candidate.len() as f64, reference.len() as f64)
}

/// Mean of ROUGE-1 recall and ROUGE-2 recall; the gain function the greedy
/// oracle sentence selector maximizes.
pub fn mean_recall_12<T: Eq + Hash>(candidate: &[T], reference: &[T]) -> f64 {
    0.5 * (rouge_n(candidate, reference, 1).recall + rouge_n(candidate, reference, 2).recall)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::prelude::*;
    use rand_chacha::ChaCha8Rng;

    /// Brute-force n-gram overlap: materialize both multisets, count the
    /// intersection by repeated removal.
    fn oracle_rouge_n(candidate: &[u32], reference: &[u32], n: usize) -> RougeScore {
        if candidate.len() < n || reference.len() < n {
            return RougeScore::zero();
        }
        let cand_grams: Vec<&[u32]> = candidate.windows(n).collect();
        let mut ref_grams: Vec<&[u32]> = reference.windows(n).collect();
        let n_cand = cand_grams.len() as f64;
        let n_ref = ref_grams.len() as f64;
        let mut overlap = 0.0;
        for gram in cand_grams {
            if let Some(pos) = ref_grams.iter().position(|g| *g == gram) {
                ref_grams.remove(pos);
                overlap += 1.0;
            }
        }
        RougeScore::from_counts(overlap, n_cand, n_ref)
    }

    fn oracle_rouge_l(candidate: &[u32], reference: &[u32]) -> RougeScore {
        if candidate.is_empty() || reference.is_empty() {
            return RougeScore::zero();
        }
        let m = candidate.len();
        let k = reference.len();
        let mut dp = vec![vec![0usize; k + 1]; m + 1];
        for i in 1..=m {
            for j in 1..=k {
                dp[i][j] = if candidate[i - 1] == reference[j - 1] {
                    dp[i - 1][j - 1] + 1
                } else {
                    dp[i - 1][j].max(dp[i][j - 1])
                };
            }
        }
        RougeScore::from_counts(dp[m][k] as f64, m as f64, k as f64)
    }

    fn assert_close(a: RougeScore, b: RougeScore, tol: f64) {
        assert!((a.precision - b.precision).abs() <= tol, "{a:?} vs {b:?}");
        assert!((a.recall - b.recall).abs() <= tol, "{a:?} vs {b:?}");
        assert!((a.f1 - b.f1).abs() <= tol, "{a:?} vs {b:?}");
    }

    #[test]
    fn identical_sequences_score_one() {
        let s = vec![5u32, 7, 9, 11];
        for n in [1, 2] {
            let r = rouge_n(&s, &s, n);
            assert_eq!(r.precision, 1.0);
            assert_eq!(r.recall, 1.0);
            assert_eq!(r.f1, 1.0);
        }
        let r = rouge_l(&s, &s);
        assert_eq!(r.f1, 1.0);
    }

    #[test]
    fn unigram_worked_example() {
        // cand = [the, cat, sat], ref = [the, cat]
        let cand = vec![0u32, 1, 2];
        let reference = vec![0u32, 1];
        let r = rouge_n(&cand, &reference, 1);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 0.8).abs() < 1e-15);
    }

    #[test]
    fn bigram_worked_example() {
        let cand = vec![0u32, 1, 2];
        let reference = vec![0u32, 1];
        let r = rouge_n(&cand, &reference, 2);
        assert!((r.precision - 0.5).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        assert!((r.f1 - 2.0 / 3.0).abs() < 1e-15);
    }

    #[test]
    fn clipping_counts_repeats_only_as_often_as_reference() {
        // cand repeats "a" three times, ref has it once: overlap is 1.
        let cand = vec![4u32, 4, 4];
        let reference = vec![4u32, 8];
        let r = rouge_n(&cand, &reference, 1);
        assert!((r.precision - 1.0 / 3.0).abs() < 1e-15);
        assert!((r.recall - 0.5).abs() < 1e-15);
    }

    #[test]
    fn disjoint_vocabularies_score_zero() {
        let cand = vec![1u32, 2, 3];
        let reference = vec![7u32, 8, 9];
        for n in [1, 2] {
            let r = rouge_n(&cand, &reference, n);
            assert_eq!(r.precision, 0.0);
            assert_eq!(r.recall, 0.0);
            assert_eq!(r.f1, 0.0);
        }
        let r = rouge_l(&cand, &reference);
        assert_eq!(r.f1, 0.0);
    }

    #[test]
    fn lcs_worked_examples() {
        // cand = [a, b, c], ref = [a, c] -> LCS 2
        let r = rouge_l(&[0, 1, 2], &[0, 2]);
        assert!((r.precision - 2.0 / 3.0).abs() < 1e-15);
        assert_eq!(r.recall, 1.0);
        // reversal -> LCS 1
        assert_eq!(lcs_length(&[2, 1, 0], &[0, 1, 2]), 1);
    }

    #[test]
    fn empty_inputs_score_zero() {
        let s = vec![1u32, 2];
        let e: Vec<u32> = vec![];
        for n in [1, 2] {
            assert_eq!(rouge_n(&s, &e, n), RougeScore::zero());
            assert_eq!(rouge_n(&e, &s, n), RougeScore::zero());
        }
        assert_eq!(rouge_l(&s, &e), RougeScore::zero());
        assert_eq!(rouge_l(&e, &s), RougeScore::zero());
        // Single tokens have no bigrams.
        assert_eq!(rouge_n(&[1], &[1], 2), RougeScore::zero());
    }

    #[test]
    fn symmetry_swaps_precision_and_recall() {
        let mut rng = ChaCha8Rng::seed_from_u64(11);
        for _ in 0..50 {
            let la = rng.random_range(1..30);
            let lb = rng.random_range(1..30);
            let a: Vec<u32> = (0..la).map(|_| rng.random_range(0..12)).collect();
            let b: Vec<u32> = (0..lb).map(|_| rng.random_range(0..12)).collect();
            for n in [1, 2] {
                let ab = rouge_n(&a, &b, n);
                let ba = rouge_n(&b, &a, n);
                assert_eq!(ab.precision, ba.recall);
                assert_eq!(ab.recall, ba.precision);
            }
            let ab = rouge_l(&a, &b);
            let ba = rouge_l(&b, &a);
            assert_eq!(ab.precision, ba.recall);
        }
    }

    #[test]
    fn lcs_bounded_by_shorter_sequence() {
        let mut rng = ChaCha8Rng::seed_from_u64(12);
        for _ in 0..100 {
            let la = rng.random_range(1..25);
            let lb = rng.random_range(1..25);
            let a: Vec<u32> = (0..la).map(|_| rng.random_range(0..6)).collect();
            let b: Vec<u32> = (0..lb).map(|_| rng.random_range(0..6)).collect();
            assert!(lcs_length(&a, &b) <= la.min(lb));
        }
    }

    #[test]
    fn matches_brute_force_oracle_on_200_seeded_pairs() {
        let start = std::time::Instant::now();
        let mut rng = ChaCha8Rng::seed_from_u64(2024);
        for _ in 0..200 {
            let la = rng.random_range(1..=40);
            let lb = rng.random_range(1..=40);
            let a: Vec<u32> = (0..la).map(|_| rng.random_range(0..20)).collect();
            let b: Vec<u32> = (0..lb).map(|_| rng.random_range(0..20)).collect();
            for n in [1, 2] {
                assert_close(rouge_n(&a, &b, n), oracle_rouge_n(&a, &b, n), 1e-12);
            }
            assert_close(rouge_l(&a, &b), oracle_rouge_l(&a, &b), 1e-12);
        }
        assert!(
            start.elapsed().as_secs_f64() < 5.0,
            "oracle comparison took {:?}",
            start.elapsed()
        );
    }

    #[test]
    fn mean_recall_12_averages_both_orders() {
        let cand = vec![0u32, 1, 2];
        let reference = vec![0u32, 1];
        // R1 recall = 1.0, R2 recall = 1.0 -> mean 1.0
        assert!((mean_recall_12(&cand, &reference) - 1.0).abs() < 1e-15);
        let reference2 = vec![0u32, 2];
        // R1 recall = 1.0, R2 recall = 0.0 -> mean 0.5
        assert!((mean_recall_12(&cand, &reference2) - 0.5).abs() < 1e-15);
    }
}
