//! Two-sided Mann-Whitney U test.

use serde::{Deserialize, Serialize};
use statrs::function::erf::erfc;
use thiserror::Error;

/// Largest combined sample size for which the exact null distribution is used.
pub const EXACT_LIMIT: usize = 20;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StatsError {
    #[error("sample {0} is empty")]
    EmptySample(char),
    #[error("sample {0} contains a non-finite value")]
    NonFinite(char),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Method {
    Exact,
    Normal,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct MannWhitney {
    /// U statistic of the first sample.
    pub u: f64,
    pub p_two_sided: f64,
    pub method: Method,
}

/// Midranks (1-based) of the pooled sample, plus the tie-group sizes.
fn pooled_ranks(a: &[f64], b: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut pooled: Vec<(f64, usize)> = a.iter().chain(b).copied().zip(0..).collect();
    pooled.sort_by(|x, y| x.0.total_cmp(&y.0));
    let mut ranks = vec![0.0; pooled.len()];
    let mut ties = Vec::new();
    let mut i = 0;
    while i < pooled.len() {
        let mut j = i + 1;
        while j < pooled.len() && pooled[j].0 == pooled[i].0 {
            j += 1;
        }
        let mid = (i + j + 1) as f64 / 2.0;
        for item in &pooled[i..j] {
            ranks[item.1] = mid;
        }
        if j - i > 1 {
            ties.push(j - i);
        }
        i = j;
    }
    (ranks, ties)
}

/// Number of n1-subsets of {1..n} for each value of U = rank sum - n1(n1+1)/2.
fn u_distribution(n1: usize, n2: usize) -> Vec<f64> {
    let max_u = n1 * n2;
    // counts[k][u]: ways to pick k of the items seen so far with statistic u.
    let mut counts = vec![vec![0.0f64; max_u + 1]; n1 + 1];
    counts[0][0] = 1.0;
    for item in 0..(n1 + n2) {
        for k in (1..=n1.min(item + 1)).rev() {
            // Choosing this item as the k-th smallest of sample a adds (item - (k-1)) to U.
            let shift = item + 1 - k;
            if shift > n2 {
                continue;
            }
            for u in (shift..=max_u).rev() {
                counts[k][u] += counts[k - 1][u - shift];
            }
        }
    }
    counts.swap_remove(n1)
}

fn check(a: &[f64], b: &[f64]) -> Result<(), StatsError> {
    for (s, name) in [(a, 'a'), (b, 'b')] {
        if s.is_empty() {
            return Err(StatsError::EmptySample(name));
        }
        if s.iter().any(|v| !v.is_finite()) {
            return Err(StatsError::NonFinite(name));
        }
    }
    Ok(())
}

/// Exact null distribution for small tie-free samples, normal approximation
/// otherwise.
pub fn mann_whitney_u(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    check(a, b)?;
    let (n1, n2) = (a.len(), b.len());
    let (ranks, ties) = pooled_ranks(a, b);
    let rank_sum: f64 = ranks[..n1].iter().sum();
    let u = rank_sum - (n1 * (n1 + 1)) as f64 / 2.0;

    if n1 + n2 <= EXACT_LIMIT && ties.is_empty() {
        let dist = u_distribution(n1, n2);
        let total: f64 = dist.iter().sum();
        let ui = u.round() as usize;
        let lower: f64 = dist[..=ui].iter().sum();
        let upper: f64 = dist[ui..].iter().sum();
        let p = (2.0 * lower.min(upper) / total).min(1.0);
        return Ok(MannWhitney { u, p_two_sided: p, method: Method::Exact });
    }

    Ok(normal_from_ranks(u, n1, n2, &ties))
}

/// Normal approximation with tie and continuity corrections, whatever the
/// sample sizes.
pub fn normal_approximation(a: &[f64], b: &[f64]) -> Result<MannWhitney, StatsError> {
    check(a, b)?;
    let (ranks, ties) = pooled_ranks(a, b);
    let u = ranks[..a.len()].iter().sum::<f64>() - (a.len() * (a.len() + 1)) as f64 / 2.0;
    Ok(normal_from_ranks(u, a.len(), b.len(), &ties))
}

fn normal_from_ranks(u: f64, n1: usize, n2: usize, ties: &[usize]) -> MannWhitney {
    let (n1f, n2f) = (n1 as f64, n2 as f64);
    let n = n1f + n2f;
    let mean = n1f * n2f / 2.0;
    let tie_term: f64 = ties.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / (n * (n - 1.0));
    let var = n1f * n2f / 12.0 * ((n + 1.0) - tie_term);
    let p = if var <= 0.0 {
        1.0
    } else {
        let z = ((u - mean).abs() - 0.5).max(0.0) / var.sqrt();
        erfc(z / std::f64::consts::SQRT_2).min(1.0)
    };
    MannWhitney { u, p_two_sided: p, method: Method::Normal }
}
