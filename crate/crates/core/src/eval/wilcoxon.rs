//! Two-sided Wilcoxon signed-rank test for paired samples.

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};

/// Largest number of non-zero differences handled by the exact null distribution.
pub const EXACT_MAX_N: usize = 25;
pub const MIN_PAIRS: usize = 6;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WilcoxonMethod {
    Exact,
    Normal,
    /// Every difference was zero; the p-value is 1 by convention.
    AllZero,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct WilcoxonResult {
    pub p_value: f64,
    /// Sum of the ranks of positive differences `a − b`.
    pub w_plus: f64,
    /// Pairs left after dropping zero differences.
    pub n_used: usize,
    pub method: WilcoxonMethod,
}

/// Signed-rank test of `a − b`. Zero differences are dropped and tied
/// absolute differences share their average rank. Up to [`EXACT_MAX_N`]
/// remaining pairs the p-value comes from the exact permutation distribution
/// of the observed ranks; above that from the tie-corrected normal
/// approximation with continuity correction.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<WilcoxonResult> {
    if a.len() != b.len() {
        return Err(Error::shape("wilcoxon_signed_rank", a.len(), b.len()));
    }
    if a.len() < MIN_PAIRS {
        return Err(Error::Contract(format!(
            "the signed-rank test needs at least {MIN_PAIRS} pairs, got {}",
            a.len()
        )));
    }
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    if diffs.iter().any(|d| !d.is_finite()) {
        return Err(Error::numeric("wilcoxon_signed_rank", "non-finite difference"));
    }
    let n = diffs.len();
    if n == 0 {
        return Ok(WilcoxonResult {
            p_value: 1.0,
            w_plus: 0.0,
            n_used: 0,
            method: WilcoxonMethod::AllZero,
        });
    }
    let (doubled, tie_sizes) = doubled_ranks(&diffs);
    let w2: u64 = diffs
        .iter()
        .zip(&doubled)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| *r)
        .sum();
    let w_plus = w2 as f64 / 2.0;

    if n <= EXACT_MAX_N {
        let counts = null_counts(&doubled);
        let total: f64 = counts.iter().sum();
        let lower: f64 = counts[..=w2 as usize].iter().sum();
        let upper: f64 = counts[w2 as usize..].iter().sum();
        let p = (2.0 * lower.min(upper) / total).min(1.0);
        return Ok(WilcoxonResult {
            p_value: p,
            w_plus,
            n_used: n,
            method: WilcoxonMethod::Exact,
        });
    }

    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let dev = w_plus - mean;
    let z = (dev.abs() - 0.5).max(0.0) / var.sqrt();
    let std_normal = Normal::new(0.0, 1.0).expect("unit normal");
    let p = (2.0 * std_normal.sf(z)).min(1.0);
    Ok(WilcoxonResult {
        p_value: p,
        w_plus,
        n_used: n,
        method: WilcoxonMethod::Normal,
    })
}

/// Twice the average rank of each `|d|` (always an integer) and the sizes of
/// the tie groups.
fn doubled_ranks(diffs: &[f64]) -> (Vec<u64>, Vec<u64>) {
    let mut order: Vec<usize> = (0..diffs.len()).collect();
    order.sort_by(|&i, &j| diffs[i].abs().total_cmp(&diffs[j].abs()));
    let mut ranks = vec![0u64; diffs.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && diffs[order[end]].abs() == diffs[order[start]].abs() {
            end += 1;
        }
        // ranks start+1 ..= end average to (start + 1 + end) / 2
        let r2 = (start + 1 + end) as u64;
        for &i in &order[start..end] {
            ranks[i] = r2;
        }
        ties.push((end - start) as u64);
        start = end;
    }
    (ranks, ties)
}

/// Number of sign assignments giving each doubled positive-rank sum.
fn null_counts(doubled: &[u64]) -> Vec<f64> {
    let max: u64 = doubled.iter().sum();
    let mut counts = vec![0.0; max as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled {
        let r = r as usize;
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    counts
}
