//! Randomized property checks, each run for [`CASES`] generated inputs.

#![allow(dead_code)]

use proptest::prelude::*;
use proptest::test_runner::{Config, TestCaseError, TestRunner};

use convdepth_core::protocol::{
    build_snapshot, default_themes, turn_order, Agent, ConversationLog, Utterance,
};
use convdepth_core::questionnaire::builtin;
use convdepth_core::stats::{
    analyze_repeated, bonferroni_adjust, friedman, wilcoxon_signed_rank, RepeatedMeasures,
    DEFAULT_ALPHA, DEFAULT_EXACT_THRESHOLD,
};
use convdepth_core::topics::{ctf_idf_keywords, Corpus, Document};

pub const CASES: u32 = 1000;

pub type Check = fn() -> Result<(), String>;

pub const ALL: &[(&str, Check)] = &[
    ("reverse-scoring involution", reverse_scoring_involution),
    ("Friedman rank invariance", friedman_rank_invariance),
    ("Wilcoxon antisymmetry", wilcoxon_antisymmetry),
    ("Bonferroni monotonicity", bonferroni_monotonicity),
    ("trend negation symmetry", trend_negation_symmetry),
    ("snapshot prefix", snapshot_prefix),
    ("c-TF-IDF duplication invariance", ctf_idf_duplication_invariance),
];

fn runner() -> TestRunner {
    TestRunner::new(Config {
        cases: CASES,
        failure_persistence: None,
        ..Config::default()
    })
}

fn check<S: Strategy>(
    strategy: S,
    test: impl Fn(S::Value) -> Result<(), TestCaseError>,
) -> Result<(), String> {
    runner().run(&strategy, test).map_err(|e| e.to_string())
}

/// Likert-like integer cells for `n` subjects × 3 stages.
fn likert_rows() -> impl Strategy<Value = Vec<Vec<f64>>> {
    (3usize..16).prop_flat_map(|n| {
        prop::collection::vec(prop::collection::vec((1i32..=7).prop_map(f64::from), 3), n)
    })
}

pub fn reverse_scoring_involution() -> Result<(), String> {
    let base = builtin("BFI").expect("BFI is built in").clone();
    check((-5i64..5, 1i64..10, 0.0f64..1.0), |(min, span, pos)| {
        let mut spec = base.clone();
        spec.scale_min = min;
        spec.scale_max = min + span;
        let r = min + (pos * (span + 1) as f64).floor().min(span as f64) as i64;
        let once = spec.reverse_score(r);
        prop_assert!((spec.scale_min..=spec.scale_max).contains(&once));
        prop_assert_eq!(spec.reverse_score(once), r);
        Ok(())
    })
}

pub fn friedman_rank_invariance() -> Result<(), String> {
    let strategy = likert_rows().prop_flat_map(|rows| {
        let n = rows.len();
        (Just(rows), prop::collection::vec((0.1f64..5.0, -10.0f64..10.0, 0usize..3), n))
    });
    check(strategy, |(rows, transforms)| {
        let transformed: Vec<Vec<f64>> = rows
            .iter()
            .zip(&transforms)
            .map(|(row, &(a, b, kind))| {
                row.iter()
                    .map(|&x| match kind {
                        0 => a * x + b,
                        1 => (a * x).exp(),
                        _ => x * x * x + b,
                    })
                    .collect()
            })
            .collect();
        let before = friedman(&RepeatedMeasures::from_rows(rows).unwrap()).unwrap();
        let after = friedman(&RepeatedMeasures::from_rows(transformed).unwrap()).unwrap();
        prop_assert!((before.statistic - after.statistic).abs() < 1e-9);
        prop_assert!((before.p_value - after.p_value).abs() < 1e-9);
        Ok(())
    })
}

pub fn wilcoxon_antisymmetry() -> Result<(), String> {
    let strategy = (1usize..40).prop_flat_map(|n| {
        (
            prop::collection::vec(-5i32..=5, n),
            prop::collection::vec(-5i32..=5, n),
        )
    });
    check(strategy, |(x, y)| {
        let x: Vec<f64> = x.into_iter().map(f64::from).collect();
        let y: Vec<f64> = y.into_iter().map(f64::from).collect();
        let xy = wilcoxon_signed_rank(&x, &y, DEFAULT_EXACT_THRESHOLD).unwrap();
        let yx = wilcoxon_signed_rank(&y, &x, DEFAULT_EXACT_THRESHOLD).unwrap();
        prop_assert!((xy.p_raw - yx.p_raw).abs() < 1e-12);
        prop_assert!((xy.delta + yx.delta).abs() < 1e-12);
        prop_assert!((0.0..=1.0).contains(&xy.p_raw));
        Ok(())
    })
}

pub fn bonferroni_monotonicity() -> Result<(), String> {
    check(prop::collection::vec(0.0f64..=1.0, 1..12), |p| {
        let adj = bonferroni_adjust(&p);
        prop_assert_eq!(adj.len(), p.len());
        for i in 0..p.len() {
            prop_assert!(adj[i] >= p[i] && adj[i] <= 1.0);
            for j in 0..p.len() {
                if p[i] <= p[j] {
                    prop_assert!(adj[i] <= adj[j]);
                }
            }
        }
        Ok(())
    })
}

pub fn trend_negation_symmetry() -> Result<(), String> {
    let strategy = (3usize..25, 0.0f64..1.5).prop_flat_map(|(n, drift)| {
        (
            Just(drift),
            prop::collection::vec(prop::collection::vec(-1.0f64..1.0, 3), n),
        )
    });
    check(strategy, |(drift, noise)| {
        let rows: Vec<Vec<f64>> = noise
            .iter()
            .map(|r| r.iter().enumerate().map(|(j, e)| 3.0 + drift * j as f64 + e).collect())
            .collect();
        let negated: Vec<Vec<f64>> = rows.iter().map(|r| r.iter().map(|v| -v).collect()).collect();
        let a = analyze_repeated(&RepeatedMeasures::from_rows(rows).unwrap(), "q", "f", DEFAULT_ALPHA);
        let b = analyze_repeated(&RepeatedMeasures::from_rows(negated).unwrap(), "q", "f", DEFAULT_ALPHA);
        match (a, b) {
            (Ok(a), Ok(b)) => prop_assert_eq!(a.trend.negated(), b.trend),
            (Err(a), Err(b)) => prop_assert_eq!(a, b),
            (a, b) => prop_assert!(false, "asymmetric outcome: {:?} vs {:?}", a, b),
        }
        Ok(())
    })
}

pub fn snapshot_prefix() -> Result<(), String> {
    let themes = default_themes();
    let strategy = (
        prop::collection::vec("[a-z]{1,8}( [a-z]{1,8}){0,4}", 72),
        prop::bool::ANY,
    );
    check(strategy, |(texts, b)| {
        let mut log = ConversationLog::new("s", "m", 0);
        for (i, text) in texts.into_iter().enumerate() {
            let theme_index = i / 2 + 1;
            let agent = if i % 2 == 0 { Agent::A } else { Agent::B };
            log.utterances.push(Utterance {
                theme_index,
                agent,
                text,
                turn_order: turn_order(theme_index, agent),
            });
        }
        let agent = if b { Agent::B } else { Agent::A };
        let snaps: Vec<_> = (1..=3u8)
            .map(|s| build_snapshot(&log, &themes, s, agent).unwrap())
            .collect();
        for w in snaps.windows(2) {
            prop_assert!(w[0].history.len() < w[1].history.len());
            prop_assert_eq!(&w[1].history[..w[0].history.len()], &w[0].history[..]);
        }
        Ok(())
    })
}

pub fn ctf_idf_duplication_invariance() -> Result<(), String> {
    let strategy = prop::collection::vec(
        ("[a-h]{2}( [a-h]{2}){0,6}", 0usize..3),
        2..12,
    );
    check(strategy, |docs| {
        let make = |copies: usize| {
            let mut documents = Vec::new();
            let mut assignments = Vec::new();
            for (text, c) in &docs {
                for _ in 0..copies {
                    documents.push(Document {
                        doc_id: documents.len(),
                        model_id: "m".into(),
                        session_id: "s".into(),
                        agent: Agent::A,
                        theme_index: 1,
                        text: text.clone(),
                    });
                    assignments.push(Some(*c));
                }
            }
            ctf_idf_keywords(&Corpus::new(documents), &assignments, 3, 10)
        };
        let once = make(1);
        let twice = make(2);
        for (a, b) in once.iter().zip(&twice) {
            let terms_a: Vec<&str> = a.iter().map(|(t, _)| t.as_str()).collect();
            let terms_b: Vec<&str> = b.iter().map(|(t, _)| t.as_str()).collect();
            prop_assert_eq!(terms_a, terms_b);
            for ((_, sa), (_, sb)) in a.iter().zip(b) {
                prop_assert!((2.0 * sa - sb).abs() < 1e-9 * sb.abs().max(1.0));
            }
        }
        Ok(())
    })
}
