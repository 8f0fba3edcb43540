//! Rank statistics: two-sided Mann-Whitney U with exact small-sample
//! enumeration, Bonferroni families, and descriptive helpers.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::SimError;

/// Largest group size for which p is computed by exact enumeration.
pub const EXACT_MAX: usize = 8;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct StatResult {
    /// U of the first sample.
    pub u: f64,
    pub p: f64,
    pub p_adjusted: f64,
    pub n_a: usize,
    pub n_b: usize,
    pub method: PMethod,
    /// Every value identical across both samples.
    pub degenerate: bool,
}

/// Midranks (1-based) of `values`, plus the tie group sizes.
pub fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut idx: Vec<usize> = (0..values.len()).collect();
    idx.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < idx.len() {
        let mut end = start + 1;
        while end < idx.len() && values[idx[end]] == values[idx[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &i in &idx[start..end] {
            ranks[i] = rank;
        }
        ties.push(end - start);
        start = end;
    }
    (ranks, ties)
}

/// Number of size-`k` subsets of `doubled` by subset sum, via DP over items.
fn subset_sum_counts(doubled: &[u64], k: usize) -> Vec<u64> {
    let max_sum: u64 = doubled.iter().sum();
    // counts[j][s]: subsets of size j with doubled-rank sum s.
    let mut counts = vec![vec![0u64; max_sum as usize + 1]; k + 1];
    counts[0][0] = 1;
    for &r in doubled {
        for j in (1..=k).rev() {
            for s in (r as usize..=max_sum as usize).rev() {
                counts[j][s] += counts[j - 1][s - r as usize];
            }
        }
    }
    counts.swap_remove(k)
}

/// Exact two-sided permutation p for the rank sum of `n_a` items drawn from
/// the pooled midranks, given as doubled integers.
fn exact_p(doubled: &[u64], n_a: usize, observed_doubled_sum: u64) -> f64 {
    let counts = subset_sum_counts(doubled, n_a);
    let total: u64 = counts.iter().sum();
    let n = doubled.len() as f64;
    // Mean of the doubled rank sum is n_a * (n + 1).
    let centre2 = n_a as f64 * (n + 1.0);
    let obs = (observed_doubled_sum as f64 - centre2).abs();
    let extreme: u64 = counts
        .iter()
        .enumerate()
        .filter(|(s, _)| (*s as f64 - centre2).abs() >= obs)
        .map(|(_, c)| c)
        .sum();
    extreme as f64 / total as f64
}

/// Two-sided Mann-Whitney U test of `a` against `b`.
pub fn mann_whitney(a: &[f64], b: &[f64]) -> Result<StatResult, SimError> {
    if a.is_empty() || b.is_empty() {
        return Err(SimError::Stats("both samples must be non-empty".into()));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(SimError::Stats("samples must be finite".into()));
    }
    let (n_a, n_b) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let (ranks, ties) = midranks(&pooled);
    let rank_sum_a: f64 = ranks[..n_a].iter().sum();
    let u = rank_sum_a - (n_a * (n_a + 1)) as f64 / 2.0;
    let degenerate = ties.len() == 1;
    if degenerate {
        return Ok(StatResult {
            u,
            p: 1.0,
            p_adjusted: 1.0,
            n_a,
            n_b,
            method: PMethod::Exact,
            degenerate,
        });
    }
    let (p, method) = if n_a <= EXACT_MAX && n_b <= EXACT_MAX {
        let doubled: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
        let obs: u64 = doubled[..n_a].iter().sum();
        (exact_p(&doubled, n_a, obs), PMethod::Exact)
    } else {
        (normal_p(u, n_a, n_b, &ties), PMethod::Normal)
    };
    let p = p.clamp(f64::MIN_POSITIVE, 1.0);
    Ok(StatResult {
        u,
        p,
        p_adjusted: p,
        n_a,
        n_b,
        method,
        degenerate,
    })
}

/// Normal approximation with tie-corrected variance and continuity correction.
pub fn normal_p(u: f64, n_a: usize, n_b: usize, ties: &[usize]) -> f64 {
    let (na, nb) = (n_a as f64, n_b as f64);
    let n = na + nb;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = na * nb / 12.0 * ((n + 1.0) - tie_term);
    if var <= 0.0 {
        return 1.0;
    }
    let diff = ((u - na * nb / 2.0).abs() - 0.5).max(0.0);
    let z = diff / var.sqrt();
    let std = Normal::new(0.0, 1.0).expect("unit normal");
    (2.0 * (1.0 - std.cdf(z))).min(1.0)
}

/// Bonferroni: `min(1, m * p)`.
pub fn bonferroni(p: f64, m: usize) -> f64 {
    (p * m as f64).min(1.0)
}

/// Significance marker at the 0.05 / 0.01 / 0.001 levels.
pub fn stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        "ns"
    }
}

/// Mean and standard error (sample sd over root N), two-pass.
pub fn mean_se(values: &[f64]) -> (f64, f64) {
    if values.is_empty() {
        return (f64::NAN, f64::NAN);
    }
    let n = values.len() as f64;
    let mean = values.iter().sum::<f64>() / n;
    if values.len() < 2 {
        return (mean, 0.0);
    }
    let ss: f64 = values.iter().map(|v| (v - mean).powi(2)).sum();
    (mean, (ss / (n - 1.0)).sqrt() / n.sqrt())
}

/// Spearman rank correlation with midranks for ties.
pub fn spearman(x: &[f64], y: &[f64]) -> f64 {
    assert_eq!(x.len(), y.len(), "paired samples");
    let (rx, _) = midranks(x);
    let (ry, _) = midranks(y);
    pearson(&rx, &ry)
}

pub fn pearson(x: &[f64], y: &[f64]) -> f64 {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        sxy += (a - mx) * (b - my);
        sxx += (a - mx).powi(2);
        syy += (b - my).powi(2);
    }
    sxy / (sxx * syy).sqrt()
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn separated_triples() {
        let r = mann_whitney(&[1.0, 2.0, 3.0], &[4.0, 5.0, 6.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert_eq!(r.p, 0.1);
        assert_eq!(r.method, PMethod::Exact);
        let flipped = mann_whitney(&[4.0, 5.0, 6.0], &[1.0, 2.0, 3.0]).unwrap();
        assert_eq!((flipped.u, flipped.p), (9.0, 0.1));
    }

    #[test]
    fn identical_samples() {
        let r = mann_whitney(&[2.0, 2.0], &[2.0, 2.0, 2.0]).unwrap();
        assert!(r.degenerate);
        assert_eq!(r.p, 1.0);
        let same = mann_whitney(&[1.0, 5.0, 9.0], &[1.0, 5.0, 9.0]).unwrap();
        assert_eq!(same.p, 1.0);
        assert!(!same.degenerate);
    }

    #[test]
    fn midranks_with_ties() {
        let (r, t) = midranks(&[3.0, 1.0, 3.0, 2.0]);
        assert_eq!(r, vec![3.5, 1.0, 3.5, 2.0]);
        assert_eq!(t, vec![1, 1, 2]);
    }

    #[test]
    fn empty_sample_rejected() {
        assert!(mann_whitney(&[], &[1.0]).is_err());
    }

    #[test]
    fn bonferroni_caps_at_one() {
        assert!((bonferroni(0.01, 6) - 0.06).abs() < 1e-15);
        assert_eq!(bonferroni(0.3, 6), 1.0);
    }
}
