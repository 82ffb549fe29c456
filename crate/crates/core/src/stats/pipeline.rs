use std::collections::BTreeMap;

use super::{
    friedman, rm_anova, shapiro_wilk, stage_pairs, tukey_hsd, wilcoxon_signed_rank,
    FactorAnalysis, OmnibusResult, PairwiseComparison, RepeatedMeasures, StatsError, Trend,
    DEFAULT_EXACT_THRESHOLD,
};
use crate::questionnaire::FactorSample;
use crate::protocol::{STAGES, STAGE_LABELS};

pub const DEFAULT_ALPHA: f64 = 0.05;
/// Fewest complete subjects the pipeline will test.
pub const MIN_SUBJECTS: usize = 3;

/// `p_adj = min(1, m·p)` for a family of `m` p-values, order preserved.
pub fn bonferroni_adjust(p_values: &[f64]) -> Vec<f64> {
    let m = p_values.len() as f64;
    p_values.iter().map(|p| (p * m).min(1.0)).collect()
}

/// Table-style significance marker.
pub fn significance_stars(p: f64) -> &'static str {
    if p < 0.001 {
        "***"
    } else if p < 0.01 {
        "**"
    } else if p < 0.05 {
        "*"
    } else {
        ""
    }
}

/// Reduces an omnibus result and its post-hoc comparisons to a trend.
///
/// A non-significant omnibus test, or no significant comparison, is `Stay`.
/// Otherwise the significant deltas must agree in sign for `Up`/`Down`;
/// mixed signs are `Random`.
pub fn classify_trend(
    omnibus: &OmnibusResult,
    pairwise: &[PairwiseComparison],
    alpha: f64,
) -> Trend {
    if !(omnibus.p_value < alpha) {
        return Trend::Stay;
    }
    let significant: Vec<f64> = pairwise
        .iter()
        .filter(|c| c.significant)
        .map(|c| c.delta)
        .collect();
    let any_up = significant.iter().any(|d| *d > 0.0);
    let any_down = significant.iter().any(|d| *d < 0.0);
    match (any_up, any_down) {
        (true, true) => Trend::Random,
        (true, false) => Trend::Up,
        (false, true) => Trend::Down,
        (false, false) => Trend::Stay,
    }
}

/// Runs the full pipeline over one factor's complete subjects × stages data.
pub fn analyze_repeated(
    data: &RepeatedMeasures,
    questionnaire_id: &str,
    factor_id: &str,
    alpha: f64,
) -> Result<FactorAnalysis, StatsError> {
    if data.n_subjects() < MIN_SUBJECTS {
        return Err(StatsError::InsufficientData(data.n_subjects()));
    }
    let mut analysis = FactorAnalysis {
        questionnaire_id: questionnaire_id.to_string(),
        factor_id: factor_id.to_string(),
        n_subjects: data.n_subjects(),
        normality: None,
        omnibus: None,
        pairwise: Vec::new(),
        trend: Trend::Stay,
        alpha,
    };

    let normal = match shapiro_wilk(data.values()) {
        Ok(r) => {
            analysis.normality = Some(r);
            r.p_value >= alpha
        }
        Err(StatsError::ZeroVariance) => return Ok(analysis),
        // pooled samples beyond the test's range take the rank-based branch
        Err(StatsError::SampleSizeOutOfRange(_)) => false,
        Err(e) => return Err(e),
    };

    let parametric = if normal {
        match rm_anova(data) {
            Ok(omnibus) => Some(omnibus),
            Err(StatsError::ZeroErrorVariance) => None,
            Err(e) => return Err(e),
        }
    } else {
        None
    };

    let (omnibus, pairwise) = match parametric {
        Some(omnibus) => {
            let pairwise = if omnibus.p_value < alpha {
                match tukey_hsd(data) {
                    Ok(mut cmp) => {
                        for c in &mut cmp {
                            c.significant = c.p_adjusted < alpha;
                        }
                        cmp
                    }
                    Err(StatsError::ZeroErrorVariance) => Vec::new(),
                    Err(e) => return Err(e),
                }
            } else {
                Vec::new()
            };
            (omnibus, pairwise)
        }
        None => {
            let omnibus = friedman(data)?;
            let pairwise = if omnibus.p_value < alpha {
                signed_rank_posthoc(data, alpha)?
            } else {
                Vec::new()
            };
            (omnibus, pairwise)
        }
    };
    analysis.trend = classify_trend(&omnibus, &pairwise, alpha);
    analysis.omnibus = Some(omnibus);
    analysis.pairwise = pairwise;
    Ok(analysis)
}

fn signed_rank_posthoc(
    data: &RepeatedMeasures,
    alpha: f64,
) -> Result<Vec<PairwiseComparison>, StatsError> {
    let mut out = Vec::new();
    for (i, j) in stage_pairs(data.n_conditions()) {
        let mut c = wilcoxon_signed_rank(
            &data.column(i),
            &data.column(j),
            DEFAULT_EXACT_THRESHOLD,
        )?;
        c.earlier = i;
        c.later = j;
        c.label = super::pair_label(data, i, j);
        out.push(c);
    }
    let raw: Vec<f64> = out.iter().map(|c| c.p_raw).collect();
    for (c, adj) in out.iter_mut().zip(bonferroni_adjust(&raw)) {
        c.p_adjusted = adj;
        c.significant = adj < alpha;
    }
    Ok(out)
}

/// Groups one factor's samples into subjects (participant × repetition),
/// drops subjects missing any stage, and runs [`analyze_repeated`].
pub fn analyze_factor(samples: &[FactorSample], alpha: f64) -> Result<FactorAnalysis, StatsError> {
    let first = samples
        .first()
        .ok_or(StatsError::InsufficientData(0))?;
    let mut cells: BTreeMap<(&str, u32), [Option<f64>; STAGES]> = BTreeMap::new();
    for s in samples {
        if s.questionnaire_id != first.questionnaire_id || s.factor_id != first.factor_id {
            return Err(StatsError::InvalidInput(format!(
                "mixed factors: {}/{} and {}/{}",
                first.questionnaire_id, first.factor_id, s.questionnaire_id, s.factor_id
            )));
        }
        if !(1..=STAGES as u8).contains(&s.stage) {
            return Err(StatsError::InvalidInput(format!("stage {} out of range", s.stage)));
        }
        let slot = &mut cells.entry((&s.participant_id, s.repetition)).or_default()
            [usize::from(s.stage - 1)];
        if slot.is_some() {
            return Err(StatsError::InvalidInput(format!(
                "duplicate sample for {} repetition {} stage {}",
                s.participant_id, s.repetition, s.stage
            )));
        }
        *slot = Some(s.value);
    }
    let mut ids = Vec::new();
    let mut rows = Vec::new();
    for ((participant, rep), stages) in cells {
        if let [Some(a), Some(b), Some(c)] = stages {
            ids.push(format!("{participant}#{rep}"));
            rows.push(vec![a, b, c]);
        }
    }
    if rows.len() < MIN_SUBJECTS {
        return Err(StatsError::InsufficientData(rows.len()));
    }
    let labels = STAGE_LABELS.iter().map(|s| s.to_string()).collect();
    let data = RepeatedMeasures::new(ids, labels, rows)?;
    analyze_repeated(&data, &first.questionnaire_id, &first.factor_id, alpha)
}
