//! Paired Wilcoxon signed-rank test and Bonferroni-corrected pairwise comparisons.

use statrs::function::erf::erfc;

use super::auc::average_ranks;
use crate::error::{Error, Result};

/// Largest effective sample size for which the exact null distribution is used.
pub const EXACT_MAX_N: usize = 20;

/// Signed-rank statistic: non-zero differences, and twice the positive rank
/// sum together with the doubled ranks (integers even with tied averages).
struct SignedRanks {
    doubled_ranks: Vec<u64>,
    doubled_w_plus: u64,
    tie_sizes: Vec<usize>,
}

fn signed_ranks(a: &[f64], b: &[f64]) -> SignedRanks {
    let diffs: Vec<f64> = a.iter().zip(b).map(|(x, y)| x - y).filter(|d| *d != 0.0).collect();
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let ranks = average_ranks(&abs);
    let doubled_ranks: Vec<u64> = ranks.iter().map(|r| (2.0 * r).round() as u64).collect();
    let doubled_w_plus = diffs.iter().zip(&doubled_ranks).filter(|(d, _)| **d > 0.0).map(|(_, r)| r).sum();

    let mut sorted = abs.clone();
    sorted.sort_by(f64::total_cmp);
    let mut tie_sizes = Vec::new();
    let mut i = 0;
    while i < sorted.len() {
        let j = sorted[i..].iter().take_while(|v| **v == sorted[i]).count();
        if j > 1 {
            tie_sizes.push(j);
        }
        i += j;
    }
    SignedRanks { doubled_ranks, doubled_w_plus, tie_sizes }
}

/// Null distribution of the doubled positive rank sum: `counts[s]` is the
/// number of sign assignments reaching sum `s`.
fn exact_counts(doubled_ranks: &[u64]) -> Vec<f64> {
    let max: u64 = doubled_ranks.iter().sum();
    let mut counts = vec![0.0; max as usize + 1];
    counts[0] = 1.0;
    let mut reach = 0usize;
    for &r in doubled_ranks {
        let r = r as usize;
        for s in (0..=reach).rev() {
            if counts[s] != 0.0 {
                counts[s + r] += counts[s];
            }
        }
        reach += r;
    }
    counts
}

/// Two-sided Wilcoxon signed-rank p-value for paired samples.
///
/// Zero differences are dropped and tied magnitudes get average ranks. The
/// exact permutation distribution is used for up to [`EXACT_MAX_N`] non-zero
/// differences; beyond that a normal approximation with tie and continuity
/// corrections. All-zero differences give `p = 1`.
pub fn wilcoxon_signed_rank(a: &[f64], b: &[f64]) -> Result<f64> {
    if a.len() != b.len() {
        return Err(Error::Dimension { expected: a.len(), found: b.len() });
    }
    if a.len() < 5 {
        return Err(Error::Evaluation(format!("Wilcoxon test needs at least 5 pairs, got {}", a.len())));
    }
    if a.iter().chain(b).any(|v| !v.is_finite()) {
        return Err(Error::Numeric("non-finite value in Wilcoxon input".into()));
    }
    let sr = signed_ranks(a, b);
    let n = sr.doubled_ranks.len();
    if n == 0 {
        return Ok(1.0);
    }
    if n <= EXACT_MAX_N {
        let counts = exact_counts(&sr.doubled_ranks);
        let total = 2f64.powi(n as i32);
        let w = sr.doubled_w_plus as usize;
        let lower: f64 = counts[..=w].iter().sum();
        let upper: f64 = counts[w..].iter().sum();
        return Ok((2.0 * lower.min(upper) / total).min(1.0));
    }
    let nf = n as f64;
    let mean = nf * (nf + 1.0) / 4.0;
    let tie_term: f64 = sr.tie_sizes.iter().map(|&t| (t * t * t - t) as f64).sum::<f64>() / 48.0;
    let var = nf * (nf + 1.0) * (2.0 * nf + 1.0) / 24.0 - tie_term;
    let w = sr.doubled_w_plus as f64 / 2.0;
    let dev = ((w - mean).abs() - 0.5).max(0.0);
    let z = dev / var.sqrt();
    Ok(erfc(z / std::f64::consts::SQRT_2).min(1.0))
}

/// Conditions x conditions result of Bonferroni-corrected pairwise tests.
#[derive(Clone, Debug, PartialEq)]
pub struct Significance {
    /// `p_values[i][j]`, symmetric, `None` on the diagonal.
    pub p_values: Vec<Vec<Option<f64>>>,
    pub threshold: f64,
}

impl Significance {
    pub fn n_conditions(&self) -> usize {
        self.p_values.len()
    }

    /// `Some(true)` when significant, `None` on the diagonal.
    pub fn is_significant(&self, i: usize, j: usize) -> Option<bool> {
        self.p_values[i][j].map(|p| p < self.threshold)
    }
}

/// Wilcoxon test for every pair of condition columns of a
/// subjects x conditions grid, at `alpha / C(m, 2)`.
pub fn pairwise_significance(per_subject_auc: &[Vec<f64>], alpha: f64) -> Result<Significance> {
    let m = per_subject_auc.first().map(|r| r.len()).unwrap_or(0);
    if m < 2 {
        return Err(Error::Evaluation("pairwise comparison needs at least two conditions".into()));
    }
    if let Some(r) = per_subject_auc.iter().find(|r| r.len() != m) {
        return Err(Error::Dimension { expected: m, found: r.len() });
    }
    let column = |c: usize| -> Vec<f64> { per_subject_auc.iter().map(|r| r[c]).collect() };
    let comparisons = (m * (m - 1) / 2) as f64;
    let mut p_values = vec![vec![None; m]; m];
    for i in 0..m {
        for j in i + 1..m {
            let p = wilcoxon_signed_rank(&column(i), &column(j))?;
            p_values[i][j] = Some(p);
            p_values[j][i] = Some(p);
        }
    }
    Ok(Significance { p_values, threshold: alpha / comparisons })
}
