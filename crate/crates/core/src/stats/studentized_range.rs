//! Studentized range distribution and Tukey's HSD for repeated measures.
//!
//! The CDF is evaluated from its integral representation
//!
//! ```text
//! P(Q < q) = ∫_0^∞ f_ν(s) · R(q·s) ds
//! R(w)     = k ∫ φ(z) [Φ(z) − Φ(z − w)]^(k−1) dz
//! ```
//!
//! where `f_ν` is the density of `sqrt(χ²_ν / ν)`. Both integrals use the
//! 64-node Gauss–Legendre rule over truncated ranges that carry all but
//! ~1e-17 of the mass.

use statrs::function::gamma::ln_gamma;

use super::anova::error_term;
use super::dist::{gl64, normal_cdf, normal_pdf};
use super::{pair_label, stage_pairs, PairwiseComparison, RepeatedMeasures, StatsError};

const Z_SPAN: f64 = 8.5;
/// Above this many error degrees of freedom the scale factor is treated as 1.
const DF_LIMIT: f64 = 1e6;

/// CDF of the range of `k` standard normals (infinite degrees of freedom).
fn range_cdf(w: f64, k: usize) -> f64 {
    if w <= 0.0 {
        return 0.0;
    }
    let kf = k as f64;
    let e = (k - 1) as i32;
    let v = gl64().integrate(-Z_SPAN, Z_SPAN, |z| {
        let inner = normal_cdf(z) - normal_cdf(z - w);
        normal_pdf(z) * inner.max(0.0).powi(e)
    });
    (kf * v).clamp(0.0, 1.0)
}

/// CDF of the studentized range statistic with `k` groups and `df` degrees
/// of freedom.
pub fn ptukey(q: f64, k: usize, df: f64) -> f64 {
    assert!(k >= 2, "studentized range needs k >= 2");
    assert!(df > 0.0, "degrees of freedom must be positive");
    if q <= 0.0 {
        return 0.0;
    }
    if df >= DF_LIMIT {
        return range_cdf(q, k);
    }
    // log-density of s = sqrt(chi2_df / df)
    let half = df / 2.0;
    let log_norm = half * df.ln() - ln_gamma(half) - (half - 1.0) * std::f64::consts::LN_2;
    let density = |s: f64| -> f64 {
        if s <= 0.0 {
            return 0.0;
        }
        (log_norm + (df - 1.0) * s.ln() - df * s * s / 2.0).exp()
    };
    // Wilson–Hilferty bounds at roughly ±8.5 standard deviations
    let c = 2.0 / (9.0 * df);
    let bound = |z: f64| -> f64 {
        let t = 1.0 - c + z * c.sqrt();
        if t <= 0.0 {
            0.0
        } else {
            t.powi(3).sqrt()
        }
    };
    let lo = bound(-8.5);
    let hi = bound(8.5);
    gl64()
        .integrate(lo, hi, |s| density(s) * range_cdf(q * s, k))
        .clamp(0.0, 1.0)
}

/// Upper tail `P(Q >= q)`.
pub fn qtukey_sf(q: f64, k: usize, df: f64) -> f64 {
    (1.0 - ptukey(q, k, df)).clamp(0.0, 1.0)
}

/// Tukey HSD over every condition pair using the repeated-measures error
/// term: `q = |mean_i − mean_j| / sqrt(MS_error / n)` with
/// `(k, (k−1)(n−1))` degrees of freedom.
pub fn tukey_hsd(data: &RepeatedMeasures) -> Result<Vec<PairwiseComparison>, StatsError> {
    let (ms_error, df_error) = error_term(data)?;
    let n = data.n_subjects() as f64;
    let k = data.n_conditions();
    let se = (ms_error / n).sqrt();
    let means = data.column_means();
    Ok(stage_pairs(k)
        .into_iter()
        .map(|(i, j)| {
            let diff = means[j] - means[i];
            let q = diff.abs() / se;
            let p = if q == 0.0 { 1.0 } else { qtukey_sf(q, k, df_error) };
            PairwiseComparison {
                earlier: i,
                later: j,
                label: pair_label(data, i, j),
                delta: q.copysign(diff),
                mean_difference: diff,
                statistic: q,
                p_raw: p,
                p_adjusted: p,
                significant: false,
                degenerate: false,
            }
        })
        .collect())
}
