//! Analysis records and the factor × model trend table.

use std::collections::{BTreeMap, HashMap};
use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::protocol::STAGE_LABELS;
use crate::questionnaire::ASPECTS;
use crate::stats::{significance_stars, FactorAnalysis, PairwiseComparison, TestFamily, Trend};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PairwiseRecord {
    /// Stage labels, earlier first, e.g. `12-24`.
    pub pair: String,
    pub delta: f64,
    pub mean_difference: f64,
    pub statistic: f64,
    pub p_raw: f64,
    pub p_adjusted: f64,
    pub stars: String,
    pub significant: bool,
    #[serde(default)]
    pub degenerate: bool,
}

impl From<&PairwiseComparison> for PairwiseRecord {
    fn from(c: &PairwiseComparison) -> Self {
        Self {
            pair: c.label.clone(),
            delta: c.delta,
            mean_difference: c.mean_difference,
            statistic: c.statistic,
            p_raw: c.p_raw,
            p_adjusted: c.p_adjusted,
            stars: significance_stars(c.p_adjusted).to_string(),
            significant: c.significant,
            degenerate: c.degenerate,
        }
    }
}

/// One row of the per-model analysis table.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AnalysisRecord {
    pub model_id: String,
    pub questionnaire_id: String,
    pub factor_id: String,
    pub factor_name: String,
    pub n_subjects: usize,
    pub normality_w: Option<f64>,
    pub normality_p: Option<f64>,
    pub family: Option<TestFamily>,
    /// F for the ANOVA branch, chi-squared for Friedman.
    pub statistic: Option<f64>,
    /// Partial eta-squared or Kendall's W.
    pub effect: Option<f64>,
    pub df: Option<(f64, f64)>,
    pub p_value: Option<f64>,
    pub stars: String,
    pub pairwise: Vec<PairwiseRecord>,
    pub trend: Trend,
    pub alpha: f64,
}

impl AnalysisRecord {
    pub fn new(model_id: &str, factor_name: &str, a: &FactorAnalysis) -> Self {
        Self {
            model_id: model_id.to_string(),
            questionnaire_id: a.questionnaire_id.clone(),
            factor_id: a.factor_id.clone(),
            factor_name: factor_name.to_string(),
            n_subjects: a.n_subjects,
            normality_w: a.normality.map(|n| n.w),
            normality_p: a.normality.map(|n| n.p_value),
            family: a.omnibus.map(|o| o.family),
            statistic: a.omnibus.map(|o| o.statistic),
            effect: a.omnibus.map(|o| o.effect),
            df: a.omnibus.map(|o| o.df),
            p_value: a.omnibus.map(|o| o.p_value),
            stars: a
                .omnibus
                .map_or("", |o| significance_stars(o.p_value))
                .to_string(),
            pairwise: a.pairwise.iter().map(PairwiseRecord::from).collect(),
            trend: a.trend,
            alpha: a.alpha,
        }
    }

    pub fn row_label(&self) -> String {
        format!("{} {}", self.questionnaire_id, self.factor_name)
    }
}

pub const LEGEND: &str = "= stay (insignificant change)  ↑ up (consistently increased)  ↓ down (consistently decreased)  ~ random (inconsistent change)  · no data";

/// Expected trend per (model, questionnaire, factor), e.g. a published table.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ReferenceGrid {
    cells: HashMap<(String, String, String), Trend>,
}

#[derive(Debug, Deserialize)]
struct ReferenceRow {
    model_id: String,
    questionnaire_id: String,
    factor_id: String,
    trend: String,
}

impl ReferenceGrid {
    pub fn insert(&mut self, model: &str, questionnaire: &str, factor: &str, trend: Trend) {
        self.cells.insert(
            (model.to_string(), questionnaire.to_string(), factor.to_string()),
            trend,
        );
    }

    pub fn get(&self, model: &str, questionnaire: &str, factor: &str) -> Option<Trend> {
        self.cells
            .get(&(model.to_string(), questionnaire.to_string(), factor.to_string()))
            .copied()
    }

    /// CSV with columns `model_id, questionnaire_id, factor_id, trend`;
    /// trends may be names (`up`) or glyphs (`↑`).
    pub fn from_csv(text: &str) -> Result<Self, String> {
        let mut grid = Self::default();
        let mut rdr = csv::Reader::from_reader(text.as_bytes());
        for (i, row) in rdr.deserialize::<ReferenceRow>().enumerate() {
            let row = row.map_err(|e| format!("row {}: {e}", i + 1))?;
            let trend = parse_trend_or_glyph(&row.trend)
                .ok_or_else(|| format!("row {}: unknown trend {:?}", i + 1, row.trend))?;
            grid.insert(&row.model_id, &row.questionnaire_id, &row.factor_id, trend);
        }
        Ok(grid)
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path).map_err(|e| format!("{}: {e}", path.display()))?;
        Self::from_csv(&text)
    }
}

fn parse_trend_or_glyph(s: &str) -> Option<Trend> {
    let s = s.trim();
    s.parse()
        .ok()
        .or_else(|| Trend::ALL.into_iter().find(|t| t.glyph() == s))
}

fn questionnaire_rank(id: &str) -> (usize, usize) {
    for (a, (_, ids)) in ASPECTS.iter().enumerate() {
        if let Some(q) = ids.iter().position(|x| *x == id) {
            return (a, q);
        }
    }
    (ASPECTS.len(), 0)
}

struct Row {
    aspect: usize,
    questionnaire_id: String,
    factor_id: String,
    label: String,
}

/// Factor rows in aspect, then instrument, then first-seen factor order.
fn rows(records: &[AnalysisRecord]) -> Vec<Row> {
    let mut first_seen: BTreeMap<(String, String), usize> = BTreeMap::new();
    let mut labels = HashMap::new();
    for (i, r) in records.iter().enumerate() {
        let key = (r.questionnaire_id.clone(), r.factor_id.clone());
        first_seen.entry(key.clone()).or_insert(i);
        labels.entry(key).or_insert_with(|| r.row_label());
    }
    let mut out: Vec<(usize, usize, String, usize, Row)> = first_seen
        .into_iter()
        .map(|((q, f), i)| {
            let (aspect, rank) = questionnaire_rank(&q);
            let label = labels[&(q.clone(), f.clone())].clone();
            (
                aspect,
                rank,
                q.clone(),
                i,
                Row {
                    aspect,
                    questionnaire_id: q,
                    factor_id: f,
                    label,
                },
            )
        })
        .collect();
    out.sort_by(|a, b| (a.0, a.1, &a.2, a.3).cmp(&(b.0, b.1, &b.2, b.3)));
    out.into_iter().map(|t| t.4).collect()
}

fn pad(s: &str, width: usize) -> String {
    let n = s.chars().count();
    format!("{s}{}", " ".repeat(width.saturating_sub(n)))
}

fn center(s: &str, width: usize) -> String {
    let n = s.chars().count();
    let left = width.saturating_sub(n) / 2;
    let right = width.saturating_sub(n + left);
    format!("{}{s}{}", " ".repeat(left), " ".repeat(right))
}

/// Plain-text grid: one row per factor grouped by aspect, one column per
/// model. Cells differing from `reference` are marked and footnoted.
pub fn render_trend_table(
    records: &[AnalysisRecord],
    models: &[String],
    reference: Option<&ReferenceGrid>,
) -> String {
    let rows = rows(records);
    let cells: HashMap<(&str, &str, &str), Trend> = records
        .iter()
        .map(|r| {
            (
                (r.model_id.as_str(), r.questionnaire_id.as_str(), r.factor_id.as_str()),
                r.trend,
            )
        })
        .collect();
    let label_width = rows
        .iter()
        .map(|r| r.label.chars().count() + 2)
        .chain(std::iter::once("Factor".len()))
        .max()
        .unwrap_or(6);
    let col_width: Vec<usize> = models.iter().map(|m| m.chars().count().max(3)).collect();

    let mut out = String::new();
    out.push_str(&pad("Factor", label_width));
    for (m, w) in models.iter().zip(&col_width) {
        out.push_str(" | ");
        out.push_str(&center(m, *w));
    }
    out.push('\n');
    out.push_str(&"-".repeat(label_width));
    for w in &col_width {
        out.push_str("-+-");
        out.push_str(&"-".repeat(*w));
    }
    out.push('\n');

    let mut footnotes = Vec::new();
    let mut current_aspect = None;
    for row in &rows {
        if current_aspect != Some(row.aspect) {
            current_aspect = Some(row.aspect);
            let name = ASPECTS.get(row.aspect).map_or("Other", |a| a.0);
            out.push_str(name);
            out.push('\n');
        }
        out.push_str(&pad(&format!("  {}", row.label), label_width));
        for (m, w) in models.iter().zip(&col_width) {
            let trend = cells
                .get(&(m.as_str(), row.questionnaire_id.as_str(), row.factor_id.as_str()))
                .copied();
            let mut cell = trend.map_or("·".to_string(), |t| t.glyph().to_string());
            if let (Some(t), Some(reference)) = (trend, reference) {
                if let Some(expected) = reference.get(m, &row.questionnaire_id, &row.factor_id) {
                    if expected != t {
                        footnotes.push(format!(
                            "[{}] {} / {m}: rule gives {} ({}), reference shows {} ({})",
                            footnotes.len() + 1,
                            row.label,
                            t.glyph(),
                            t.as_str(),
                            expected.glyph(),
                            expected.as_str()
                        ));
                        cell = format!("{}[{}]", t.glyph(), footnotes.len());
                    }
                }
            }
            out.push_str(" | ");
            out.push_str(&center(&cell, *w));
        }
        out.push('\n');
    }
    out.push('\n');
    out.push_str(LEGEND);
    out.push('\n');
    if !footnotes.is_empty() {
        out.push('\n');
        for f in footnotes {
            out.push_str(&f);
            out.push('\n');
        }
    }
    out
}

/// Machine-readable twin of the trend table: one row per factor, one
/// column per model holding the trend name (empty when missing).
pub fn trend_table_csv(records: &[AnalysisRecord], models: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec!["aspect".to_string(), "questionnaire_id".into(), "factor_id".into(), "factor".into()];
    header.extend(models.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    let cells: HashMap<(&str, &str, &str), Trend> = records
        .iter()
        .map(|r| {
            (
                (r.model_id.as_str(), r.questionnaire_id.as_str(), r.factor_id.as_str()),
                r.trend,
            )
        })
        .collect();
    for row in rows(records) {
        let mut line = vec![
            ASPECTS.get(row.aspect).map_or("Other", |a| a.0).to_string(),
            row.questionnaire_id.clone(),
            row.factor_id.clone(),
            row.label.clone(),
        ];
        for m in models {
            line.push(
                cells
                    .get(&(m.as_str(), row.questionnaire_id.as_str(), row.factor_id.as_str()))
                    .map_or(String::new(), |t| t.as_str().to_string()),
            );
        }
        w.write_record(&line).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

fn fmt_opt(v: Option<f64>) -> String {
    v.map_or(String::new(), |x| format!("{x}"))
}

/// Flat per-factor table mirroring the detailed statistics tables.
pub fn analyses_csv(records: &[AnalysisRecord]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header: Vec<String> = [
        "model_id",
        "questionnaire_id",
        "factor_id",
        "factor",
        "n_subjects",
        "normality_w",
        "normality_p",
        "family",
        "statistic",
        "effect",
        "df1",
        "df2",
        "p_value",
        "stars",
    ]
    .iter()
    .map(|s| s.to_string())
    .collect();
    let pairs = [
        format!("{}-{}", STAGE_LABELS[0], STAGE_LABELS[1]),
        format!("{}-{}", STAGE_LABELS[1], STAGE_LABELS[2]),
        format!("{}-{}", STAGE_LABELS[0], STAGE_LABELS[2]),
    ];
    for p in &pairs {
        for col in ["delta", "p_raw", "p_adj", "stars"] {
            header.push(format!("{col}_{p}"));
        }
    }
    header.push("trend".into());
    w.write_record(&header).expect("in-memory write");
    for r in records {
        let mut line = vec![
            r.model_id.clone(),
            r.questionnaire_id.clone(),
            r.factor_id.clone(),
            r.factor_name.clone(),
            r.n_subjects.to_string(),
            fmt_opt(r.normality_w),
            fmt_opt(r.normality_p),
            r.family.map_or(String::new(), |f| f.as_str().to_string()),
            fmt_opt(r.statistic),
            fmt_opt(r.effect),
            fmt_opt(r.df.map(|d| d.0)),
            fmt_opt(r.df.map(|d| d.1)),
            fmt_opt(r.p_value),
            r.stars.clone(),
        ];
        for p in &pairs {
            match r.pairwise.iter().find(|c| &c.pair == p) {
                Some(c) => line.extend([
                    format!("{}", c.delta),
                    format!("{}", c.p_raw),
                    format!("{}", c.p_adjusted),
                    c.stars.clone(),
                ]),
                None => line.extend(std::iter::repeat(String::new()).take(4)),
            }
        }
        line.push(r.trend.as_str().to_string());
        w.write_record(&line).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}
