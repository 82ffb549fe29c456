//! Small corpora with known topic structure.

#![allow(dead_code)]

use std::collections::BTreeMap;

use convdepth_core::protocol::Agent;
use convdepth_core::topics::{Corpus, Document, TopicModel, TopicSummary};

/// Three documents over {alpha, beta, gamma}, three over {delta, epsilon, zeta}.
pub const TWO_VOCABULARIES: [&str; 6] = [
    "alpha beta",
    "alpha gamma",
    "beta gamma",
    "delta epsilon",
    "delta zeta",
    "epsilon zeta",
];

/// With the true partition each cluster holds 6 tokens, so A = 12 / 2 = 6,
/// and every token occurs twice overall: score = 2 ln(1 + 6/2) = 2 ln 4.
pub fn expected_keyword_score() -> f64 {
    2.0 * 4f64.ln()
}

pub fn corpus(texts: &[&str], models: &[&str]) -> Corpus {
    Corpus::new(
        texts
            .iter()
            .enumerate()
            .map(|(i, t)| Document {
                doc_id: i,
                model_id: models[i % models.len()].to_string(),
                session_id: format!("s{i}"),
                agent: Agent::A,
                theme_index: i + 1,
                text: t.to_string(),
            })
            .collect(),
    )
}

/// Same partition up to relabelling.
pub fn same_partition(a: &[Option<usize>], b: &[Option<usize>]) -> bool {
    a.len() == b.len()
        && (0..a.len()).all(|i| (0..a.len()).all(|j| (a[i] == a[j]) == (b[i] == b[j])))
}

/// A model with the given (model, cluster) counts and placeholder keywords.
pub fn model_with_counts(k: usize, counts: BTreeMap<(String, usize), usize>) -> TopicModel {
    TopicModel {
        k,
        assignments: Vec::new(),
        centroids: vec![Vec::new(); k],
        keywords: (0..k).map(|c| vec![(format!("t{c}"), 1.0)]).collect(),
        counts,
        dominant_theme: vec![None; k],
        excluded: BTreeMap::new(),
        iterations: 0,
        converged: true,
    }
}

/// Reference selection: repeatedly take the largest remaining count,
/// lowest cluster id first.
pub fn brute_force_top(model: &TopicModel, m: usize) -> BTreeMap<String, Vec<(usize, usize)>> {
    let mut out = BTreeMap::new();
    let models: Vec<String> = model.counts.keys().map(|(m, _)| m.clone()).collect();
    for name in models {
        let mut left: Vec<(usize, usize)> = (0..model.k)
            .filter_map(|c| model.counts.get(&(name.clone(), c)).map(|&n| (c, n)))
            .collect();
        let mut picked = Vec::new();
        while picked.len() < m && !left.is_empty() {
            let mut best = 0;
            for i in 1..left.len() {
                if left[i].1 > left[best].1 || (left[i].1 == left[best].1 && left[i].0 < left[best].0) {
                    best = i;
                }
            }
            picked.push(left.remove(best));
        }
        out.insert(name, picked);
    }
    out
}

pub fn as_pairs(top: &BTreeMap<String, Vec<TopicSummary>>) -> BTreeMap<String, Vec<(usize, usize)>> {
    top.iter()
        .map(|(m, v)| (m.clone(), v.iter().map(|t| (t.cluster_id, t.count)).collect()))
        .collect()
}
