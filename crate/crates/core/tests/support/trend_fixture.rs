//! Published per-factor statistics rows and the trend pictogram each maps to.
//!
//! Each row gives the omnibus statistic with its significance stars and the
//! three stage-pair deltas with their post-hoc stars. Stars stand in for
//! p-values: `***` 0.0005, `**` 0.005, `*` 0.03, none 0.5.

#![allow(dead_code)]

use std::path::PathBuf;

use convdepth_core::stats::{
    classify_trend, OmnibusResult, PairwiseComparison, TestFamily, Trend, DEFAULT_ALPHA,
};

/// Rows whose published pictogram disagrees with its own statistics row.
pub const EXEMPT: &[(&str, &str, &str)] = &[("BFI", "E", "GPT-3.5T")];

#[derive(Debug, Clone)]
pub struct FixtureRow {
    pub questionnaire: String,
    pub factor: String,
    pub model: String,
    pub omnibus_stars: String,
    /// (delta, stars) for 12-24, 24-36, 12-36; `None` when not tested.
    pub deltas: [Option<(f64, String)>; 3],
    pub expected: Trend,
}

impl FixtureRow {
    pub fn is_exempt(&self) -> bool {
        EXEMPT
            .iter()
            .any(|(q, f, m)| *q == self.questionnaire && *f == self.factor && *m == self.model)
    }

    pub fn classify(&self) -> Trend {
        let omnibus = OmnibusResult {
            family: TestFamily::Friedman,
            statistic: 0.0,
            effect: 0.0,
            df: (2.0, 0.0),
            p_value: stars_to_p(&self.omnibus_stars),
        };
        let pairs = [(0, 1), (1, 2), (0, 2)];
        let pairwise: Vec<PairwiseComparison> = self
            .deltas
            .iter()
            .zip(pairs)
            .filter_map(|(d, (i, j))| {
                let (delta, stars) = d.as_ref()?;
                let p = stars_to_p(stars);
                Some(PairwiseComparison {
                    earlier: i,
                    later: j,
                    label: format!("{i}-{j}"),
                    delta: *delta,
                    mean_difference: *delta,
                    statistic: *delta,
                    p_raw: p,
                    p_adjusted: p,
                    significant: p < DEFAULT_ALPHA,
                    degenerate: false,
                })
            })
            .collect();
        classify_trend(&omnibus, &pairwise, DEFAULT_ALPHA)
    }
}

pub fn stars_to_p(stars: &str) -> f64 {
    match stars {
        "***" => 0.0005,
        "**" => 0.005,
        "*" => 0.03,
        _ => 0.5,
    }
}

pub fn fixture_path() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("../core/tests/fixtures/appendix_trends.csv")
}

pub fn load() -> Vec<FixtureRow> {
    let mut reader = csv::Reader::from_path(fixture_path()).expect("fixture file");
    reader
        .records()
        .map(|r| {
            let r = r.expect("fixture row");
            let delta = |i: usize| -> Option<(f64, String)> {
                let d = r.get(i)?;
                (!d.is_empty()).then(|| (d.parse().expect("numeric delta"), r[i + 1].to_string()))
            };
            FixtureRow {
                questionnaire: r[0].to_string(),
                factor: r[1].to_string(),
                model: r[2].to_string(),
                omnibus_stars: r[4].to_string(),
                deltas: [delta(5), delta(7), delta(9)],
                expected: r[11].parse().expect("trend name"),
            }
        })
        .collect()
}

#[derive(Debug, Default)]
pub struct FixtureScore {
    pub total: usize,
    pub matched: usize,
    pub exempt: Vec<String>,
    pub mismatches: Vec<String>,
}

impl FixtureScore {
    pub fn rate(&self) -> f64 {
        self.matched as f64 / self.total as f64
    }
}

pub fn score() -> FixtureScore {
    let mut s = FixtureScore::default();
    for row in load() {
        let label = format!("{} {} {}", row.questionnaire, row.factor, row.model);
        let got = row.classify();
        if row.is_exempt() {
            s.exempt.push(format!("{label}: rule {got}, table {}", row.expected));
            continue;
        }
        s.total += 1;
        if got == row.expected {
            s.matched += 1;
        } else {
            s.mismatches.push(format!("{label}: rule {got}, table {}", row.expected));
        }
    }
    s
}
