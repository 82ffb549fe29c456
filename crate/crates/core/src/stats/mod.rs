//! Repeated-measures hypothesis testing across the three conversation
//! snapshots and the trend classification built on top of it.
//!
//! The pipeline per factor is: Shapiro–Wilk on the pooled values, then
//! either repeated-measures ANOVA followed by Tukey HSD, or Friedman followed
//! by Bonferroni-adjusted Wilcoxon signed-rank tests. The resulting omnibus
//! and pairwise results are reduced to one of four trend classes.

mod anova;
pub mod dist;
mod friedman;
mod normality;
mod pipeline;
mod studentized_range;
mod wilcoxon;

use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use anova::rm_anova;
pub use friedman::friedman;
pub use normality::shapiro_wilk;
pub use pipeline::{
    analyze_factor, analyze_repeated, bonferroni_adjust, classify_trend, significance_stars,
    DEFAULT_ALPHA, MIN_SUBJECTS,
};
pub use studentized_range::{ptukey, qtukey_sf, tukey_hsd};
pub use wilcoxon::{wilcoxon_signed_rank, DEFAULT_EXACT_THRESHOLD};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum StatsError {
    #[error("sample has zero variance")]
    ZeroVariance,
    #[error("sample size {0} outside the supported range 3..=5000")]
    SampleSizeOutOfRange(usize),
    #[error("error sum of squares is zero (perfectly additive data)")]
    ZeroErrorVariance,
    #[error("only {0} complete subjects, too few to test")]
    InsufficientData(usize),
    #[error("invalid input: {0}")]
    InvalidInput(String),
}

/// Complete subjects × conditions matrix (row-major).
#[derive(Debug, Clone, PartialEq)]
pub struct RepeatedMeasures {
    subject_ids: Vec<String>,
    condition_labels: Vec<String>,
    values: Vec<f64>,
}

impl RepeatedMeasures {
    pub fn new(
        subject_ids: Vec<String>,
        condition_labels: Vec<String>,
        rows: Vec<Vec<f64>>,
    ) -> Result<Self, StatsError> {
        let k = condition_labels.len();
        if k < 2 {
            return Err(StatsError::InvalidInput(format!(
                "need at least 2 conditions, got {k}"
            )));
        }
        if rows.len() != subject_ids.len() {
            return Err(StatsError::InvalidInput(
                "one row per subject id required".into(),
            ));
        }
        if rows.len() < 2 {
            return Err(StatsError::InsufficientData(rows.len()));
        }
        let mut values = Vec::with_capacity(rows.len() * k);
        for (i, row) in rows.iter().enumerate() {
            if row.len() != k {
                return Err(StatsError::InvalidInput(format!(
                    "row {i} has {} cells, expected {k}",
                    row.len()
                )));
            }
            if row.iter().any(|v| !v.is_finite()) {
                return Err(StatsError::InvalidInput(format!("row {i} has a non-finite cell")));
            }
            values.extend_from_slice(row);
        }
        Ok(Self {
            subject_ids,
            condition_labels,
            values,
        })
    }

    /// Anonymous subjects labelled `s1..sn`, conditions `c1..ck`.
    pub fn from_rows(rows: Vec<Vec<f64>>) -> Result<Self, StatsError> {
        let k = rows.first().map_or(0, Vec::len);
        let ids = (1..=rows.len()).map(|i| format!("s{i}")).collect();
        let labels = (1..=k).map(|j| format!("c{j}")).collect();
        Self::new(ids, labels, rows)
    }

    pub fn n_subjects(&self) -> usize {
        self.subject_ids.len()
    }

    pub fn n_conditions(&self) -> usize {
        self.condition_labels.len()
    }

    pub fn subject_ids(&self) -> &[String] {
        &self.subject_ids
    }

    pub fn condition_labels(&self) -> &[String] {
        &self.condition_labels
    }

    pub fn row(&self, i: usize) -> &[f64] {
        let k = self.n_conditions();
        &self.values[i * k..(i + 1) * k]
    }

    pub fn rows(&self) -> impl Iterator<Item = &[f64]> {
        self.values.chunks(self.n_conditions())
    }

    pub fn column(&self, j: usize) -> Vec<f64> {
        self.rows().map(|r| r[j]).collect()
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn column_means(&self) -> Vec<f64> {
        let n = self.n_subjects() as f64;
        (0..self.n_conditions())
            .map(|j| self.rows().map(|r| r[j]).sum::<f64>() / n)
            .collect()
    }

    /// Applies `f` to every cell, keeping labels.
    pub fn map(&self, mut f: impl FnMut(f64) -> f64) -> Self {
        Self {
            subject_ids: self.subject_ids.clone(),
            condition_labels: self.condition_labels.clone(),
            values: self.values.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Reorders conditions so that new column `j` is old column `order[j]`.
    pub fn permute_conditions(&self, order: &[usize]) -> Self {
        let k = self.n_conditions();
        assert_eq!(order.len(), k);
        let values = self
            .rows()
            .flat_map(|r| order.iter().map(move |&j| r[j]))
            .collect();
        Self {
            subject_ids: self.subject_ids.clone(),
            condition_labels: order.iter().map(|&j| self.condition_labels[j].clone()).collect(),
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct NormalityResult {
    pub w: f64,
    pub p_value: f64,
    pub n: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TestFamily {
    RmAnova,
    Friedman,
}

impl TestFamily {
    pub fn as_str(self) -> &'static str {
        match self {
            TestFamily::RmAnova => "rm_anova",
            TestFamily::Friedman => "friedman",
        }
    }
}

/// Omnibus result. `statistic` is F or chi-squared; `effect` is partial
/// eta-squared or Kendall's W respectively.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct OmnibusResult {
    pub family: TestFamily,
    pub statistic: f64,
    pub effect: f64,
    pub df: (f64, f64),
    pub p_value: f64,
}

/// Post-hoc comparison between two conditions, `earlier < later`.
///
/// `delta` is a signed standardized statistic oriented later-minus-earlier:
/// signed q for Tukey, the z-score of W+ for Wilcoxon. Positive means the
/// later snapshot scored higher.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseComparison {
    pub earlier: usize,
    pub later: usize,
    pub label: String,
    pub delta: f64,
    pub mean_difference: f64,
    pub statistic: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub significant: bool,
    /// Set when every paired difference was zero (p = 1, delta = 0).
    #[serde(default)]
    pub degenerate: bool,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Trend {
    Stay,
    Up,
    Down,
    Random,
}

impl Trend {
    pub const ALL: [Trend; 4] = [Trend::Stay, Trend::Up, Trend::Down, Trend::Random];

    pub fn as_str(self) -> &'static str {
        match self {
            Trend::Stay => "stay",
            Trend::Up => "up",
            Trend::Down => "down",
            Trend::Random => "random",
        }
    }

    pub fn glyph(self) -> &'static str {
        match self {
            Trend::Stay => "=",
            Trend::Up => "↑",
            Trend::Down => "↓",
            Trend::Random => "~",
        }
    }

    pub fn negated(self) -> Self {
        match self {
            Trend::Up => Trend::Down,
            Trend::Down => Trend::Up,
            other => other,
        }
    }
}

impl fmt::Display for Trend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

impl std::str::FromStr for Trend {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.trim().to_ascii_lowercase().as_str() {
            "stay" | "=" => Ok(Trend::Stay),
            "up" | "↑" => Ok(Trend::Up),
            "down" | "↓" => Ok(Trend::Down),
            "random" | "~" => Ok(Trend::Random),
            other => Err(format!("unknown trend {other:?}")),
        }
    }
}

/// Full per-factor output of the pipeline.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorAnalysis {
    pub questionnaire_id: String,
    pub factor_id: String,
    pub n_subjects: usize,
    /// `None` when the pooled sample had zero variance.
    pub normality: Option<NormalityResult>,
    pub omnibus: Option<OmnibusResult>,
    /// Empty unless the omnibus test was significant.
    pub pairwise: Vec<PairwiseComparison>,
    pub trend: Trend,
    pub alpha: f64,
}

/// Condition index pairs in reporting order: (12,24), (24,36), (12,36).
pub fn stage_pairs(k: usize) -> Vec<(usize, usize)> {
    if k == 3 {
        return vec![(0, 1), (1, 2), (0, 2)];
    }
    let mut pairs = Vec::new();
    for i in 0..k {
        for j in i + 1..k {
            pairs.push((i, j));
        }
    }
    pairs
}

pub(crate) fn pair_label(data: &RepeatedMeasures, i: usize, j: usize) -> String {
    format!(
        "{}-{}",
        data.condition_labels()[i],
        data.condition_labels()[j]
    )
}

/// Midranks (1-based) of `values`, plus the tie group sizes.
pub(crate) fn midranks(values: &[f64]) -> (Vec<f64>, Vec<usize>) {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut ties = Vec::new();
    let mut start = 0;
    while start < order.len() {
        let mut end = start + 1;
        while end < order.len() && values[order[end]] == values[order[start]] {
            end += 1;
        }
        let rank = (start + end + 1) as f64 / 2.0;
        for &idx in &order[start..end] {
            ranks[idx] = rank;
        }
        if end - start > 1 {
            ties.push(end - start);
        }
        start = end;
    }
    (ranks, ties)
}
