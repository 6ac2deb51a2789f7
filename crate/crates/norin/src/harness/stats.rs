//! Paired Wilcoxon signed-rank testing.
//!
//! Zero differences are dropped before ranking; absolute differences get
//! average ranks under ties. For `n <= 25` effective pairs the two-sided
//! p-value is exact, computed from the full distribution of the positive
//! rank sum over all `2^n` sign assignments (organized as a subset-sum
//! count over doubled ranks, which enumerates the same distribution).
//! Larger samples use the normal approximation with tie-corrected variance
//! and a continuity correction.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::{Error, Result};

/// Largest effective sample size for which the exact distribution is used.
pub const EXACT_LIMIT: usize = 25;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum WilcoxonMethod {
    Exact,
    NormalApproximation,
}

/// Result of one paired test between a baseline and a treatment.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SignedRankTest {
    /// Pairs where the treatment value is strictly lower than the baseline.
    pub wins: usize,
    pub n_pairs: usize,
    /// Non-zero differences actually ranked.
    pub n_effective: usize,
    /// Mean of (baseline - treatment); positive favors the treatment.
    pub mean_delta: f64,
    /// `min(sum of positive ranks, sum of negative ranks)`.
    pub w_statistic: f64,
    /// Two-sided p-value.
    pub p_value: f64,
    pub method: WilcoxonMethod,
}

/// Average ranks of `|values|`, ascending, with tie groups sharing the mean
/// rank. Returns `(ranks, tie_group_sizes)`.
fn average_ranks(abs_values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let n = abs_values.len();
    let mut order: Vec<usize> = (0..n).collect();
    order.sort_by(|&a, &b| abs_values[a].total_cmp(&abs_values[b]));
    let mut ranks = vec![0.0; n];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < n {
        let mut j = i;
        while j + 1 < n && abs_values[order[j + 1]] == abs_values[order[i]] {
            j += 1;
        }
        // positions i..=j (0-based) share rank mean of (i+1)..=(j+1)
        let avg = (i + j + 2) as f64 / 2.0;
        for k in i..=j {
            ranks[order[k]] = avg;
        }
        ties.push(j - i + 1);
        i = j + 1;
    }
    (ranks, ties)
}

/// Exact `P(W+ <= w)` over all sign assignments, by counting subsets of the
/// doubled ranks (average ranks are half-integers, so doubling gives exact
/// integers).
fn exact_lower_tail(ranks: &[f64], w: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0u64; total + 1];
    counts[0] = 1;
    for &r in &doubled {
        for s in (r..=total).rev() {
            counts[s] += counts[s - r];
        }
    }
    let threshold = (2.0 * w).round() as usize;
    let below: u64 = counts.iter().take(threshold.min(total) + 1).sum();
    below as f64 / (1u64 << ranks.len()) as f64
}

/// Paired two-sided Wilcoxon signed-rank test of `baseline` against
/// `treatment` (differences are `baseline - treatment`).
pub fn wilcoxon_signed_rank(baseline: &[f64], treatment: &[f64]) -> Result<SignedRankTest> {
    if baseline.len() != treatment.len() {
        return Err(Error::ShapeMismatch(format!(
            "wilcoxon pairs: {} vs {}",
            baseline.len(),
            treatment.len()
        )));
    }
    if baseline.is_empty() {
        return Err(Error::Data("wilcoxon needs at least one pair".into()));
    }
    let n_pairs = baseline.len();
    let wins = baseline
        .iter()
        .zip(treatment)
        .filter(|(a, b)| b < a)
        .count();
    let diffs: Vec<f64> = baseline.iter().zip(treatment).map(|(a, b)| a - b).collect();
    let mean_delta = diffs.iter().sum::<f64>() / n_pairs as f64;

    let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
    if nonzero.is_empty() {
        return Ok(SignedRankTest {
            wins,
            n_pairs,
            n_effective: 0,
            mean_delta,
            w_statistic: 0.0,
            p_value: 1.0,
            method: WilcoxonMethod::Exact,
        });
    }
    let abs: Vec<f64> = nonzero.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = average_ranks(&abs);
    let n = nonzero.len();
    let w_plus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let w_minus: f64 = nonzero
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d < 0.0)
        .map(|(_, r)| *r)
        .sum();
    let w = w_plus.min(w_minus);

    if n <= EXACT_LIMIT {
        let p = (2.0 * exact_lower_tail(&ranks, w)).min(1.0);
        return Ok(SignedRankTest {
            wins,
            n_pairs,
            n_effective: n,
            mean_delta,
            w_statistic: w,
            p_value: p,
            method: WilcoxonMethod::Exact,
        });
    }

    let nf = n as f64;
    let mu = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = ties
        .iter()
        .map(|t| {
            let t = *t as f64;
            t * t * t - t
        })
        .sum::<f64>()
        / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    if var <= 0.0 {
        return Ok(SignedRankTest {
            wins,
            n_pairs,
            n_effective: n,
            mean_delta,
            w_statistic: w,
            p_value: 1.0,
            method: WilcoxonMethod::NormalApproximation,
        });
    }
    // W is the min-sum so it sits at or below the mean; continuity
    // correction moves it half a step toward the mean
    let z = (w - mu + 0.5) / var.sqrt();
    let normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = (2.0 * normal.cdf(z)).min(1.0);
    Ok(SignedRankTest {
        wins,
        n_pairs,
        n_effective: n,
        mean_delta,
        w_statistic: w,
        p_value: p,
        method: WilcoxonMethod::NormalApproximation,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    /// Independent brute-force oracle: rank with its own average-rank pass,
    /// enumerate all 2^n sign assignments, and count rank sums at or below
    /// the observed minimum.
    fn brute_force_p(diffs: &[f64]) -> f64 {
        let nonzero: Vec<f64> = diffs.iter().copied().filter(|d| *d != 0.0).collect();
        if nonzero.is_empty() {
            return 1.0;
        }
        let n = nonzero.len();
        assert!(n <= 20, "oracle is exponential");
        // independent average ranking: sort indices by |d|
        let mut idx: Vec<usize> = (0..n).collect();
        idx.sort_by(|&a, &b| nonzero[a].abs().total_cmp(&nonzero[b].abs()));
        let mut ranks = vec![0.0; n];
        let mut i = 0;
        while i < n {
            let mut j = i;
            while j + 1 < n && nonzero[idx[j + 1]].abs() == nonzero[idx[i]].abs() {
                j += 1;
            }
            let avg: f64 = ((i + 1)..=(j + 1)).map(|r| r as f64).sum::<f64>() / (j - i + 1) as f64;
            for k in i..=j {
                ranks[idx[k]] = avg;
            }
            i = j + 1;
        }
        let w_plus: f64 = (0..n).filter(|k| nonzero[*k] > 0.0).map(|k| ranks[k]).sum();
        let w_minus: f64 = (0..n).filter(|k| nonzero[*k] < 0.0).map(|k| ranks[k]).sum();
        let w_obs = w_plus.min(w_minus);
        let mut count = 0u64;
        for mask in 0u64..(1 << n) {
            let s: f64 = (0..n).filter(|k| mask & (1 << k) != 0).map(|k| ranks[k]).sum();
            if s <= w_obs {
                count += 1;
            }
        }
        (2.0 * count as f64 / (1u64 << n) as f64).min(1.0)
    }

    #[test]
    fn all_positive_hand_case() {
        let a = [1.0, 2.0, 3.0, 4.0, 5.0];
        let b = [0.0; 5];
        let t = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(t.w_statistic, 0.0);
        assert_eq!(t.p_value, 0.0625); // 2/32 exactly
        assert_eq!(t.method, WilcoxonMethod::Exact);
        assert_eq!(t.wins, 5);
    }

    #[test]
    fn mixed_signs_match_brute_force() {
        let d = [1.0, -2.0, 3.0, -4.0, 5.0];
        let b = [0.0; 5];
        let t = wilcoxon_signed_rank(&d, &b).unwrap();
        assert_eq!(t.p_value, brute_force_p(&d));
        // hand enumeration: w_minus = 6, 13 of 32 subsets sum <= 6
        assert_eq!(t.w_statistic, 6.0);
        assert_eq!(t.p_value, 26.0 / 32.0);
    }

    #[test]
    fn identical_vectors_give_p_one() {
        let a = [0.3, 0.4, 0.5];
        let t = wilcoxon_signed_rank(&a, &a).unwrap();
        assert_eq!(t.p_value, 1.0);
        assert_eq!(t.w_statistic, 0.0);
        assert_eq!(t.n_effective, 0);
    }

    #[test]
    fn zero_differences_are_dropped() {
        let a = [1.0, 2.0, 3.0, 4.0];
        let b = [1.0, 0.0, 3.0, 0.0]; // two zero diffs
        let t = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(t.n_effective, 2);
    }

    #[test]
    fn exact_p_matches_brute_force_on_random_suite() {
        let mut rng = ChaCha8Rng::seed_from_u64(77);
        for case in 0..60 {
            let n = 2 + (case % 11); // up to 12 pairs
            let mut d: Vec<f64> = (0..n).map(|_| rng.random_range(-5.0..5.0)).collect();
            // occasional ties in |d|
            if n > 3 && case % 3 == 0 {
                d[1] = -d[0];
                d[2] = d[0];
            }
            for v in d.iter_mut() {
                if *v == 0.0 {
                    *v = 0.5;
                }
            }
            let zeros = vec![0.0; n];
            let t = wilcoxon_signed_rank(&d, &zeros).unwrap();
            let oracle = brute_force_p(&d);
            assert_eq!(t.p_value, oracle, "case {case}: d={d:?}");
        }
    }

    #[test]
    fn two_sided_p_is_symmetric_in_arguments() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for _ in 0..30 {
            let n = rng.random_range(3..40);
            let a: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let b: Vec<f64> = (0..n).map(|_| rng.random_range(-1.0..1.0)).collect();
            let t1 = wilcoxon_signed_rank(&a, &b).unwrap();
            let t2 = wilcoxon_signed_rank(&b, &a).unwrap();
            assert_eq!(t1.p_value, t2.p_value);
            assert_eq!(t1.w_statistic, t2.w_statistic);
        }
    }

    #[test]
    fn large_sample_uses_normal_approximation() {
        let mut rng = ChaCha8Rng::seed_from_u64(19);
        let n = 90;
        let a: Vec<f64> = (0..n).map(|_| rng.random_range(0.0..1.0) + 0.05).collect();
        let b: Vec<f64> = a.iter().map(|v| v - 0.04 + rng.random_range(-0.01..0.01)).collect();
        let t = wilcoxon_signed_rank(&a, &b).unwrap();
        assert_eq!(t.method, WilcoxonMethod::NormalApproximation);
        assert!(t.p_value < 1e-6, "p {}", t.p_value);
        assert!(t.mean_delta > 0.0);
    }

    #[test]
    fn length_mismatch_and_empty_error() {
        assert!(wilcoxon_signed_rank(&[1.0], &[1.0, 2.0]).is_err());
        assert!(wilcoxon_signed_rank(&[], &[]).is_err());
    }
}
