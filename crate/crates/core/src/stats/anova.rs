//! One-way repeated-measures ANOVA.

use super::dist::f_sf;
use super::{OmnibusResult, RepeatedMeasures, StatsError, TestFamily};

/// Sums of squares of the subjects × conditions decomposition.
#[derive(Debug, Clone, Copy, PartialEq)]
pub(crate) struct SumsOfSquares {
    pub total: f64,
    pub conditions: f64,
    pub subjects: f64,
    pub error: f64,
}

pub(crate) fn sums_of_squares(data: &RepeatedMeasures) -> SumsOfSquares {
    let n = data.n_subjects() as f64;
    let k = data.n_conditions() as f64;
    let grand = data.values().iter().sum::<f64>() / (n * k);
    let total: f64 = data.values().iter().map(|v| (v - grand).powi(2)).sum();
    let conditions: f64 = data
        .column_means()
        .iter()
        .map(|m| n * (m - grand).powi(2))
        .sum();
    let subjects: f64 = data
        .rows()
        .map(|r| k * (r.iter().sum::<f64>() / k - grand).powi(2))
        .sum();
    // residual computed directly rather than by subtraction so that
    // perfectly additive data gives an exact zero
    let col_means = data.column_means();
    let error: f64 = data
        .rows()
        .map(|r| {
            let row_mean = r.iter().sum::<f64>() / k;
            r.iter()
                .zip(&col_means)
                .map(|(v, cm)| (v - row_mean - cm + grand).powi(2))
                .sum::<f64>()
        })
        .sum();
    SumsOfSquares {
        total,
        conditions,
        subjects,
        error,
    }
}

/// Error mean square and its degrees of freedom.
pub(crate) fn error_term(data: &RepeatedMeasures) -> Result<(f64, f64), StatsError> {
    let ss = sums_of_squares(data);
    let df_err = ((data.n_conditions() - 1) * (data.n_subjects() - 1)) as f64;
    if is_zero(ss.error, ss.total) {
        return Err(StatsError::ZeroErrorVariance);
    }
    Ok((ss.error / df_err, df_err))
}

fn is_zero(x: f64, scale: f64) -> bool {
    x <= 1e-12 * scale.max(f64::MIN_POSITIVE) || x == 0.0
}

/// F = MS_conditions / MS_error with df `(k-1, (k-1)(n-1))`.
///
/// Data with no condition effect and no residual (every subject constant
/// across conditions) yields F = 0, p = 1. Residual-free data with a
/// condition effect is rejected with [`StatsError::ZeroErrorVariance`].
pub fn rm_anova(data: &RepeatedMeasures) -> Result<OmnibusResult, StatsError> {
    let n = data.n_subjects();
    let k = data.n_conditions();
    let ss = sums_of_squares(data);
    let df1 = (k - 1) as f64;
    let df2 = ((k - 1) * (n - 1)) as f64;
    let no_effect = is_zero(ss.conditions, ss.total);
    if is_zero(ss.error, ss.total) {
        if no_effect {
            return Ok(OmnibusResult {
                family: TestFamily::RmAnova,
                statistic: 0.0,
                effect: 0.0,
                df: (df1, df2),
                p_value: 1.0,
            });
        }
        return Err(StatsError::ZeroErrorVariance);
    }
    let f = (ss.conditions / df1) / (ss.error / df2);
    let effect = ss.conditions / (ss.conditions + ss.error);
    Ok(OmnibusResult {
        family: TestFamily::RmAnova,
        statistic: f,
        effect,
        df: (df1, df2),
        p_value: f_sf(f, df1, df2),
    })
}
