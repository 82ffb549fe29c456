//! Friedman rank test with Kendall's W as effect size.

use super::dist::chi2_sf;
use super::{midranks, OmnibusResult, RepeatedMeasures, StatsError, TestFamily};

/// Friedman chi-squared over within-subject midranks, tie-corrected.
pub fn friedman(data: &RepeatedMeasures) -> Result<OmnibusResult, StatsError> {
    let n = data.n_subjects();
    let k = data.n_conditions();
    let nf = n as f64;
    let kf = k as f64;
    let mut rank_sums = vec![0.0; k];
    let mut tie_term = 0.0;
    for row in data.rows() {
        let (ranks, ties) = midranks(row);
        for (s, r) in rank_sums.iter_mut().zip(&ranks) {
            *s += r;
        }
        tie_term += ties
            .iter()
            .map(|&t| {
                let t = t as f64;
                t * t * t - t
            })
            .sum::<f64>();
    }
    let df = kf - 1.0;
    let correction = 1.0 - tie_term / (nf * kf * (kf * kf - 1.0));
    let raw = 12.0 / (nf * kf * (kf + 1.0)) * rank_sums.iter().map(|r| r * r).sum::<f64>()
        - 3.0 * nf * (kf + 1.0);
    let chi2 = if correction <= 1e-12 {
        // every row fully tied
        0.0
    } else {
        (raw / correction).max(0.0)
    };
    let effect = (chi2 / (nf * df)).clamp(0.0, 1.0);
    Ok(OmnibusResult {
        family: TestFamily::Friedman,
        statistic: chi2,
        effect,
        df: (df, 0.0),
        p_value: chi2_sf(chi2, df),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn constant_rows_give_zero() {
        let d = RepeatedMeasures::from_rows(vec![vec![2.0; 3], vec![5.0; 3], vec![1.0; 3]])
            .unwrap();
        let r = friedman(&d).unwrap();
        assert_eq!(r.statistic, 0.0);
        assert_eq!(r.p_value, 1.0);
        assert_eq!(r.effect, 0.0);
    }

    #[test]
    fn partial_ties_are_corrected() {
        // rows (1,1,2) x3: rank sums (4.5, 4.5, 9); raw = 12/36 * 121.5 - 36 = 4.5;
        // correction = 1 - 3*6/(3*3*8) = 0.75 -> chi2 = 6
        let d = RepeatedMeasures::from_rows(vec![vec![1.0, 1.0, 2.0]; 3]).unwrap();
        let r = friedman(&d).unwrap();
        assert!((r.statistic - 6.0).abs() < 1e-12);
    }
}
