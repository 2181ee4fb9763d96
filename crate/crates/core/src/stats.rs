//! Wilcoxon rank-sum (Mann-Whitney U) test.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Pooled sizes up to this use the exact permutation distribution.
pub const EXACT_MAX_POOLED: usize = 20;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum RankSumMethod {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct RankSum {
    /// Mann-Whitney U of the first sample.
    pub u: f64,
    /// Two-sided p-value.
    pub p: f64,
    pub method: RankSumMethod,
}

/// Midranks (1-based) of `values`, doubled so that they are integers.
fn doubled_midranks(values: &[f64]) -> Vec<u64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&i, &j| values[i].total_cmp(&values[j]));
    let mut ranks = vec![0; values.len()];
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        // ranks start+1 ..= end, doubled mean = start + 1 + end
        for &i in &order[start..end] {
            ranks[i] = (start + 1 + end) as u64;
        }
        start = end;
    }
    ranks
}

fn tie_sizes(values: &[f64]) -> Vec<usize> {
    let mut v = values.to_vec();
    v.sort_by(f64::total_cmp);
    let mut out = Vec::new();
    let mut start = 0;
    while start < v.len() {
        let mut end = start + 1;
        while end < v.len() && v[end] == v[start] {
            end += 1;
        }
        out.push(end - start);
        start = end;
    }
    out
}

/// Two-sided rank-sum test of `a` against `b`.
///
/// Small samples (pooled size up to 20) use the exact distribution of the
/// rank sum over all assignments of the pooled midranks; larger ones use the
/// normal approximation with tie and continuity corrections. The two-sided
/// p-value is twice the smaller tail, capped at 1.
pub fn ranksum(a: &[f64], b: &[f64]) -> Result<RankSum> {
    if a.len() < 3 || b.len() < 3 {
        return Err(Error::InsufficientSample(format!(
            "rank-sum needs at least 3 values per side, got {} and {}",
            a.len(),
            b.len()
        )));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::InsufficientSample("rank-sum values must be finite".into()));
    }
    let (n1, n2) = (a.len(), b.len());
    let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
    let ranks = doubled_midranks(&pooled);
    let w2: u64 = ranks[..n1].iter().sum();
    let u = w2 as f64 / 2.0 - (n1 * (n1 + 1)) as f64 / 2.0;
    if n1 + n2 <= EXACT_MAX_POOLED {
        let p = exact_p(&ranks, n1, w2);
        return Ok(RankSum {
            u,
            p,
            method: RankSumMethod::Exact,
        });
    }
    let n = (n1 + n2) as f64;
    let (f1, f2) = (n1 as f64, n2 as f64);
    let ties: f64 = tie_sizes(&pooled).iter().map(|&t| (t * t * t - t) as f64).sum();
    let var = f1 * f2 / 12.0 * ((n + 1.0) - ties / (n * (n - 1.0)));
    let mean = f1 * f2 / 2.0;
    let p = if var <= 0.0 {
        1.0
    } else {
        let dev = ((u - mean).abs() - 0.5).max(0.0);
        let z = dev / var.sqrt();
        let normal = Normal::standard();
        (2.0 * normal.sf(z)).min(1.0)
    };
    Ok(RankSum {
        u,
        p,
        method: RankSumMethod::Normal,
    })
}

/// Two-sided exact p of observed doubled rank sum `w2` for the first `n1`.
fn exact_p(ranks: &[u64], n1: usize, w2: u64) -> f64 {
    let max_sum: u64 = ranks.iter().sum();
    // ways[k][s]: subsets of size k with doubled rank sum s
    let width = max_sum as usize + 1;
    let mut ways = vec![vec![0f64; width]; n1 + 1];
    ways[0][0] = 1.0;
    for &r in ranks {
        for k in (1..=n1).rev() {
            let (lo, hi) = ways.split_at_mut(k);
            let (prev, cur) = (&lo[k - 1], &mut hi[0]);
            for s in (r as usize..width).rev() {
                cur[s] += prev[s - r as usize];
            }
        }
    }
    let dist = &ways[n1];
    let total: f64 = dist.iter().sum();
    let lower: f64 = dist[..=w2 as usize].iter().sum();
    let upper: f64 = dist[w2 as usize..].iter().sum();
    (2.0 * lower.min(upper) / total).min(1.0)
}

#[cfg(test)]
mod tests {
    use super::*;

    /// Brute force over every choice of which pooled positions belong to `a`.
    fn enumerate(a: &[f64], b: &[f64]) -> f64 {
        let pooled: Vec<f64> = a.iter().chain(b).copied().collect();
        let n = pooled.len();
        // plain midranks, computed by counting
        let rank = |i: usize| {
            let less = pooled.iter().filter(|&&v| v < pooled[i]).count() as f64;
            let equal = pooled.iter().filter(|&&v| v == pooled[i]).count() as f64;
            less + (equal + 1.0) / 2.0
        };
        let ranks: Vec<f64> = (0..n).map(rank).collect();
        let observed: f64 = ranks[..a.len()].iter().sum();
        let (mut lo, mut hi, mut total) = (0u64, 0u64, 0u64);
        for mask in 0u32..(1 << n) {
            if mask.count_ones() as usize != a.len() {
                continue;
            }
            let w: f64 = (0..n).filter(|i| mask >> i & 1 == 1).map(|i| ranks[i]).sum();
            total += 1;
            if w <= observed + 1e-9 {
                lo += 1;
            }
            if w >= observed - 1e-9 {
                hi += 1;
            }
        }
        (2.0 * lo.min(hi) as f64 / total as f64).min(1.0)
    }

    #[test]
    fn separated_samples() {
        let r = ranksum(&[1.0, 2.0, 3.0], &[10.0, 11.0, 12.0]).unwrap();
        assert_eq!(r.u, 0.0);
        assert!((r.p - 0.1).abs() < 1e-12);
        assert_eq!(r.method, RankSumMethod::Exact);
    }

    #[test]
    fn identical_samples_and_symmetry() {
        let a = [0.91, 0.93, 0.95, 0.97];
        assert!(ranksum(&a, &a).unwrap().p >= 0.9);
        let b = [0.88, 0.9, 0.99, 0.92, 0.85];
        assert_eq!(ranksum(&a, &b).unwrap().p, ranksum(&b, &a).unwrap().p);
        let big_a: Vec<f64> = (0..15).map(|i| i as f64 * 0.7).collect();
        let big_b: Vec<f64> = (0..14).map(|i| i as f64 * 0.9 + 0.3).collect();
        let (x, y) = (ranksum(&big_a, &big_b).unwrap(), ranksum(&big_b, &big_a).unwrap());
        assert_eq!(x.method, RankSumMethod::Normal);
        assert!((x.p - y.p).abs() < 1e-12);
    }

    #[test]
    fn too_few_values() {
        assert!(matches!(ranksum(&[1.0, 2.0], &[1.0, 2.0, 3.0]), Err(Error::InsufficientSample(_))));
    }

    #[test]
    fn matches_enumeration_with_ties() {
        use rand::Rng;
        let mut rng = crate::rng::rng_for(5, &[]);
        for n1 in 3..=6 {
            for n2 in 3..=6 {
                for _ in 0..5 {
                    let a: Vec<f64> = (0..n1).map(|_| rng.gen_range(0..6) as f64).collect();
                    let b: Vec<f64> = (0..n2).map(|_| rng.gen_range(0..6) as f64).collect();
                    let got = ranksum(&a, &b).unwrap().p;
                    assert!((got - enumerate(&a, &b)).abs() < 1e-12, "{a:?} {b:?}");
                }
            }
        }
    }

    #[test]
    fn normal_approximation_is_close_to_exact_at_the_boundary() {
        let a: Vec<f64> = (0..10).map(|i| i as f64).collect();
        let b: Vec<f64> = (0..10).map(|i| i as f64 + 3.5).collect();
        let exact = ranksum(&a, &b).unwrap();
        let mut c = b.clone();
        c.push(100.0);
        let approx = ranksum(&a, &c).unwrap();
        assert_eq!(approx.method, RankSumMethod::Normal);
        assert!((exact.p - approx.p).abs() < 0.05, "{} {}", exact.p, approx.p);
    }
}
