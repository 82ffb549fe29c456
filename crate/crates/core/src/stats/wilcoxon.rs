//! Wilcoxon signed-rank test for paired samples.

use super::dist::normal_sf;
use super::{midranks, PairwiseComparison, StatsError};

pub const DEFAULT_EXACT_THRESHOLD: usize = 25;

/// Two-sided signed-rank test on the differences `y − x`.
///
/// Zero differences are dropped. With `m` remaining pairs the p-value is
/// exact when `m <= exact_threshold` (the null distribution of W+ over all
/// `2^m` sign assignments, midranks included), otherwise it uses the normal
/// approximation with tie and continuity corrections.
///
/// The returned comparison has `earlier = 0`, `later = 1`; `delta` is the
/// z-score of W+ (positive when `y` tends to exceed `x`). When every
/// difference is zero the result is flagged `degenerate` with p = 1.
pub fn wilcoxon_signed_rank(
    x: &[f64],
    y: &[f64],
    exact_threshold: usize,
) -> Result<PairwiseComparison, StatsError> {
    if x.len() != y.len() {
        return Err(StatsError::InvalidInput(format!(
            "paired samples differ in length ({} vs {})",
            x.len(),
            y.len()
        )));
    }
    if x.is_empty() {
        return Err(StatsError::InvalidInput("empty samples".into()));
    }
    let diffs: Vec<f64> = x
        .iter()
        .zip(y)
        .map(|(a, b)| b - a)
        .filter(|d| *d != 0.0)
        .collect();
    let mean_difference = x.iter().zip(y).map(|(a, b)| b - a).sum::<f64>() / x.len() as f64;
    let m = diffs.len();
    if m == 0 {
        return Ok(PairwiseComparison {
            earlier: 0,
            later: 1,
            label: "x-y".into(),
            delta: 0.0,
            mean_difference,
            statistic: 0.0,
            p_raw: 1.0,
            p_adjusted: 1.0,
            significant: false,
            degenerate: true,
        });
    }
    let abs: Vec<f64> = diffs.iter().map(|d| d.abs()).collect();
    let (ranks, ties) = midranks(&abs);
    let w_plus: f64 = diffs
        .iter()
        .zip(&ranks)
        .filter(|(d, _)| **d > 0.0)
        .map(|(_, r)| r)
        .sum();
    let mf = m as f64;
    let mu = mf * (mf + 1.0) / 4.0;
    let tie_term: f64 = ties
        .iter()
        .map(|&t| {
            let t = t as f64;
            t * t * t - t
        })
        .sum();
    let sigma = (mf * (mf + 1.0) * (2.0 * mf + 1.0) / 24.0 - tie_term / 48.0).sqrt();
    let z = if sigma > 0.0 { (w_plus - mu) / sigma } else { 0.0 };

    let p = if m <= exact_threshold {
        exact_two_sided(&ranks, w_plus)
    } else {
        let corrected = ((w_plus - mu).abs() - 0.5).max(0.0);
        (2.0 * normal_sf(corrected / sigma)).min(1.0)
    };
    Ok(PairwiseComparison {
        earlier: 0,
        later: 1,
        label: "x-y".into(),
        delta: z,
        mean_difference,
        statistic: w_plus,
        p_raw: p,
        p_adjusted: p,
        significant: false,
        degenerate: false,
    })
}

/// Exact two-sided p-value of W+ given the (mid)ranks in play.
///
/// Midranks are multiples of 1/2, so doubled ranks are integers and the
/// distribution over the `2^m` equally likely sign vectors is a counting DP.
fn exact_two_sided(ranks: &[f64], w_plus: f64) -> f64 {
    let doubled: Vec<usize> = ranks.iter().map(|r| (2.0 * r).round() as usize).collect();
    let total: usize = doubled.iter().sum();
    let mut counts = vec![0.0f64; total + 1];
    counts[0] = 1.0;
    let mut reach = 0;
    for &r in &doubled {
        for s in (0..=reach).rev() {
            let c = counts[s];
            if c != 0.0 {
                counts[s + r] += c;
            }
        }
        reach += r;
    }
    let all: f64 = 2f64.powi(ranks.len() as i32);
    let t = (2.0 * w_plus).round() as usize;
    let lower: f64 = counts[..=t].iter().sum::<f64>() / all;
    let upper: f64 = counts[t..].iter().sum::<f64>() / all;
    (2.0 * lower.min(upper)).min(1.0)
}
