//! Topic analysis over generated utterances.
//!
//! Documents are vectorised (deterministic TF-IDF or a remote embedding
//! endpoint), grouped by spherical k-means, labelled with class-based TF-IDF
//! keywords and counted per model.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::sync::OnceLock;

use rand::distributions::{Distribution, WeightedIndex};
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;
use unicode_segmentation::UnicodeSegmentation;

use crate::gateway::{Backend, GatewayError};
use crate::protocol::{Agent, ConversationLog};
use crate::Exec;

pub const STOPWORDS_VERSION: &str = "v1";
const STOPWORDS: &str = include_str!("../data/stopwords_en.txt");

pub const MAX_ITERATIONS: usize = 200;
pub const TOLERANCE: f64 = 1e-6;
pub const DEFAULT_TOP_N: usize = 10;
pub const DOCS_PER_TOPIC: usize = 72;
const EMBED_BATCH: usize = 64;

#[derive(Debug, Error)]
pub enum TopicError {
    #[error("corpus has no documents")]
    EmptyCorpus,
    #[error("k = {k} exceeds the {available} non-empty documents")]
    KTooLarge { k: usize, available: usize },
    #[error("k must be at least 1")]
    InvalidK,
    #[error("embedding failed: {0}")]
    Embedding(#[from] GatewayError),
    #[error("embedding endpoint returned vectors of differing length")]
    RaggedEmbeddings,
}

fn stopwords() -> &'static HashSet<&'static str> {
    static SET: OnceLock<HashSet<&'static str>> = OnceLock::new();
    SET.get_or_init(|| {
        STOPWORDS
            .lines()
            .map(str::trim)
            .filter(|l| !l.is_empty() && !l.starts_with('#'))
            .collect()
    })
}

/// Unicode words, lowercased, stop words and punctuation removed.
pub fn tokenize(text: &str) -> Vec<String> {
    let stop = stopwords();
    text.unicode_words()
        .filter_map(|w| {
            let lower = w.to_lowercase().replace('\u{2019}', "'");
            if stop.contains(lower.as_str()) {
                return None;
            }
            let stripped: String = lower.chars().filter(|c| c.is_alphanumeric()).collect();
            if stripped.is_empty() || stop.contains(stripped.as_str()) {
                None
            } else {
                Some(stripped)
            }
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Document {
    pub doc_id: usize,
    pub model_id: String,
    pub session_id: String,
    pub agent: Agent,
    pub theme_index: usize,
    pub text: String,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Corpus {
    pub documents: Vec<Document>,
    /// Sorted tokens; a token's position is its column index.
    pub vocabulary: Vec<String>,
    /// Token ids of each document, in text order.
    pub tokens: Vec<Vec<u32>>,
}

impl Corpus {
    pub fn new(documents: Vec<Document>) -> Self {
        let raw: Vec<Vec<String>> = documents.iter().map(|d| tokenize(&d.text)).collect();
        let vocabulary: Vec<String> = raw
            .iter()
            .flatten()
            .cloned()
            .collect::<std::collections::BTreeSet<_>>()
            .into_iter()
            .collect();
        let index: HashMap<&str, u32> = vocabulary
            .iter()
            .enumerate()
            .map(|(i, t)| (t.as_str(), i as u32))
            .collect();
        let tokens = raw
            .iter()
            .map(|doc| doc.iter().map(|t| index[t.as_str()]).collect())
            .collect();
        Self {
            documents,
            vocabulary,
            tokens,
        }
    }

    pub fn len(&self) -> usize {
        self.documents.len()
    }

    pub fn is_empty(&self) -> bool {
        self.documents.is_empty()
    }

    pub fn model_ids(&self) -> Vec<String> {
        let mut seen = Vec::new();
        for d in &self.documents {
            if !seen.contains(&d.model_id) {
                seen.push(d.model_id.clone());
            }
        }
        seen
    }
}

/// One document per utterance, in log order.
pub fn extract_utterances(logs: &[ConversationLog]) -> Corpus {
    let documents = logs
        .iter()
        .flat_map(|log| {
            log.utterances.iter().map(move |u| (log, u))
        })
        .enumerate()
        .map(|(doc_id, (log, u))| Document {
            doc_id,
            model_id: log.model_id.clone(),
            session_id: log.session_id.clone(),
            agent: u.agent,
            theme_index: u.theme_index,
            text: u.text.clone(),
        })
        .collect();
    Corpus::new(documents)
}

/// Sparse vector with strictly increasing indices.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct SparseVec {
    pub indices: Vec<u32>,
    pub values: Vec<f64>,
}

impl SparseVec {
    pub fn is_zero(&self) -> bool {
        self.values.iter().all(|v| *v == 0.0)
    }

    pub fn norm(&self) -> f64 {
        self.values.iter().map(|v| v * v).sum::<f64>().sqrt()
    }

    fn normalize(&mut self) {
        let n = self.norm();
        if n > 0.0 {
            self.values.iter_mut().for_each(|v| *v /= n);
        }
    }

    pub fn dot_dense(&self, dense: &[f64]) -> f64 {
        self.indices
            .iter()
            .zip(&self.values)
            .map(|(&i, v)| v * dense[i as usize])
            .sum()
    }

    pub fn dot(&self, other: &SparseVec) -> f64 {
        let (mut i, mut j, mut s) = (0, 0, 0.0);
        while i < self.indices.len() && j < other.indices.len() {
            match self.indices[i].cmp(&other.indices[j]) {
                std::cmp::Ordering::Less => i += 1,
                std::cmp::Ordering::Greater => j += 1,
                std::cmp::Ordering::Equal => {
                    s += self.values[i] * other.values[j];
                    i += 1;
                    j += 1;
                }
            }
        }
        s
    }

    pub fn to_dense(&self, dim: usize) -> Vec<f64> {
        let mut d = vec![0.0; dim];
        for (&i, v) in self.indices.iter().zip(&self.values) {
            d[i as usize] = *v;
        }
        d
    }

    fn from_dense(dense: &[f64]) -> Self {
        let mut s = SparseVec::default();
        for (i, v) in dense.iter().enumerate() {
            if *v != 0.0 {
                s.indices.push(i as u32);
                s.values.push(*v);
            }
        }
        s
    }
}

/// Unit (or zero) document vectors.
#[derive(Debug, Clone, PartialEq)]
pub struct Vectors {
    pub dim: usize,
    pub rows: Vec<SparseVec>,
}

impl Vectors {
    pub fn cosine(&self, a: usize, b: usize) -> f64 {
        self.rows[a].dot(&self.rows[b])
    }

    pub fn nonzero(&self) -> Vec<usize> {
        (0..self.rows.len()).filter(|&i| !self.rows[i].is_zero()).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Embedder {
    TfidfFallback,
    RemoteEmbedding,
}

impl std::str::FromStr for Embedder {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "tfidf" | "tfidf_fallback" => Ok(Embedder::TfidfFallback),
            "remote" | "remote_embedding" => Ok(Embedder::RemoteEmbedding),
            other => Err(format!("unknown embedder {other:?}")),
        }
    }
}

/// TF-IDF with `idf = ln(1 + N/df)`, L2-normalised. Documents without
/// tokens get the zero vector.
pub fn tfidf_vectors(corpus: &Corpus, exec: Exec) -> Vectors {
    let n = corpus.len() as f64;
    let mut df = vec![0usize; corpus.vocabulary.len()];
    for doc in &corpus.tokens {
        let mut uniq: Vec<u32> = doc.clone();
        uniq.sort_unstable();
        uniq.dedup();
        for t in uniq {
            df[t as usize] += 1;
        }
    }
    let idf: Vec<f64> = df
        .iter()
        .map(|&d| if d == 0 { 0.0 } else { (1.0 + n / d as f64).ln() })
        .collect();
    let rows = exec.map(&corpus.tokens, |doc| {
        let mut counts: BTreeMap<u32, f64> = BTreeMap::new();
        for &t in doc {
            *counts.entry(t).or_default() += 1.0;
        }
        let mut v = SparseVec {
            indices: counts.keys().copied().collect(),
            values: counts.iter().map(|(t, c)| c * idf[*t as usize]).collect(),
        };
        v.normalize();
        v
    });
    Vectors {
        dim: corpus.vocabulary.len(),
        rows,
    }
}

/// Embeddings from the backend's embedding endpoint, L2-normalised.
/// Blank documents are not sent and get the zero vector.
pub fn embedding_vectors(corpus: &Corpus, backend: &Backend, model_id: &str) -> Result<Vectors, TopicError> {
    let mut rows = vec![SparseVec::default(); corpus.len()];
    let live: Vec<usize> = (0..corpus.len())
        .filter(|&i| !corpus.documents[i].text.trim().is_empty())
        .collect();
    let mut dim = None;
    for chunk in live.chunks(EMBED_BATCH) {
        let texts: Vec<String> = chunk.iter().map(|&i| corpus.documents[i].text.clone()).collect();
        let vecs = backend.embed(model_id, &texts)?;
        for (&i, v) in chunk.iter().zip(vecs) {
            match dim {
                None => dim = Some(v.len()),
                Some(d) if d != v.len() => return Err(TopicError::RaggedEmbeddings),
                _ => {}
            }
            let mut s = SparseVec::from_dense(&v);
            s.normalize();
            rows[i] = s;
        }
    }
    Ok(Vectors {
        dim: dim.unwrap_or(0),
        rows,
    })
}

pub fn vectorize(
    corpus: &Corpus,
    embedder: Embedder,
    backend: Option<&Backend>,
    embedding_model: &str,
    exec: Exec,
) -> Result<Vectors, TopicError> {
    if corpus.is_empty() {
        return Err(TopicError::EmptyCorpus);
    }
    match (embedder, backend) {
        (Embedder::TfidfFallback, _) => Ok(tfidf_vectors(corpus, exec)),
        (Embedder::RemoteEmbedding, Some(b)) => embedding_vectors(corpus, b, embedding_model),
        (Embedder::RemoteEmbedding, None) => Err(TopicError::Embedding(GatewayError::Config(
            "remote embedding needs a backend".into(),
        ))),
    }
}

/// `max(2, n/72)`, capped at `n`.
pub fn default_k(nonempty_docs: usize) -> usize {
    (nonempty_docs / DOCS_PER_TOPIC).max(2).min(nonempty_docs).max(1)
}

#[derive(Debug, Clone, PartialEq)]
pub struct Clustering {
    /// Cluster per document; `None` for zero vectors.
    pub assignments: Vec<Option<usize>>,
    pub centroids: Vec<Vec<f64>>,
    pub iterations: usize,
    pub converged: bool,
}

fn similarities(vectors: &Vectors, docs: &[usize], center: &SparseVec, exec: Exec) -> Vec<f64> {
    let dense = center.to_dense(vectors.dim);
    exec.map(docs, |&i| vectors.rows[i].dot_dense(&dense))
}

/// Greedy k-means++ on cosine distance `1 − cos`: each new center is the
/// best of `2 + ⌊ln k⌋` candidates sampled proportionally to distance.
fn seed_centers(vectors: &Vectors, docs: &[usize], k: usize, rng: &mut ChaCha8Rng, exec: Exec) -> Vec<usize> {
    let first = rng.gen_range(0..docs.len());
    let mut centers = vec![first];
    let mut dist: Vec<f64> = similarities(vectors, docs, &vectors.rows[docs[first]], exec)
        .into_iter()
        .map(|s| (1.0 - s).max(0.0))
        .collect();
    let trials = 2 + (k as f64).ln().floor() as usize;
    while centers.len() < k {
        let total: f64 = dist.iter().sum();
        let candidates: Vec<usize> = if total > 0.0 {
            let w = WeightedIndex::new(&dist).expect("positive total weight");
            (0..trials).map(|_| w.sample(rng)).collect()
        } else {
            // every point coincides with a center; take unused points in order
            (0..docs.len())
                .filter(|p| !centers.contains(p))
                .take(1)
                .collect()
        };
        let mut best: Option<(f64, usize, Vec<f64>)> = None;
        for c in candidates {
            let cand: Vec<f64> = similarities(vectors, docs, &vectors.rows[docs[c]], exec)
                .into_iter()
                .zip(&dist)
                .map(|(s, d)| d.min((1.0 - s).max(0.0)))
                .collect();
            let potential: f64 = cand.iter().sum();
            if best.as_ref().map_or(true, |b| potential < b.0) {
                best = Some((potential, c, cand));
            }
        }
        let (_, c, d) = best.expect("at least one candidate");
        centers.push(c);
        dist = d;
    }
    centers
}

fn nearest(v: &SparseVec, centroids: &[Vec<f64>]) -> (usize, f64) {
    let mut best = (0, f64::NEG_INFINITY);
    for (c, centroid) in centroids.iter().enumerate() {
        let s = v.dot_dense(centroid);
        if s > best.1 {
            best = (c, s);
        }
    }
    best
}

/// Spherical k-means over the non-zero vectors.
pub fn cluster(vectors: &Vectors, k: usize, seed: u64, exec: Exec) -> Result<Clustering, TopicError> {
    if k == 0 {
        return Err(TopicError::InvalidK);
    }
    let docs = vectors.nonzero();
    if k > docs.len() {
        return Err(TopicError::KTooLarge {
            k,
            available: docs.len(),
        });
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut centroids: Vec<Vec<f64>> = seed_centers(vectors, &docs, k, &mut rng, exec)
        .into_iter()
        .map(|p| vectors.rows[docs[p]].to_dense(vectors.dim))
        .collect();

    let mut iterations = 0;
    let mut converged = false;
    while iterations < MAX_ITERATIONS {
        iterations += 1;
        let assigned = exec.map(&docs, |&i| nearest(&vectors.rows[i], &centroids));

        let mut sums = vec![vec![0.0; vectors.dim]; k];
        let mut sizes = vec![0usize; k];
        for (&i, &(c, _)) in docs.iter().zip(&assigned) {
            sizes[c] += 1;
            let row = &vectors.rows[i];
            for (&t, v) in row.indices.iter().zip(&row.values) {
                sums[c][t as usize] += v;
            }
        }
        // empty clusters take the points farthest from their centroids
        let mut taken = HashSet::new();
        let mut reseeded = false;
        for c in 0..k {
            if sizes[c] > 0 {
                continue;
            }
            let far = (0..docs.len())
                .filter(|p| !taken.contains(p) && sizes[assigned[*p].0] > 1)
                .min_by(|&a, &b| assigned[a].1.total_cmp(&assigned[b].1).then(a.cmp(&b)));
            if let Some(p) = far {
                taken.insert(p);
                sizes[assigned[p].0] -= 1;
                sums[c] = vectors.rows[docs[p]].to_dense(vectors.dim);
                reseeded = true;
            }
        }
        let mut movement: f64 = 0.0;
        for (c, sum) in sums.into_iter().enumerate() {
            let norm = sum.iter().map(|v| v * v).sum::<f64>().sqrt();
            if norm == 0.0 {
                continue;
            }
            let next: Vec<f64> = sum.into_iter().map(|v| v / norm).collect();
            let shift = next
                .iter()
                .zip(&centroids[c])
                .map(|(a, b)| (a - b) * (a - b))
                .sum::<f64>()
                .sqrt();
            movement = movement.max(shift);
            centroids[c] = next;
        }
        if !reseeded && movement < TOLERANCE {
            converged = true;
            break;
        }
    }
    let assigned = exec.map(&docs, |&i| nearest(&vectors.rows[i], &centroids));
    let mut assignments = vec![None; vectors.rows.len()];
    for (&i, &(c, _)) in docs.iter().zip(&assigned) {
        assignments[i] = Some(c);
    }
    Ok(Clustering {
        assignments,
        centroids,
        iterations,
        converged,
    })
}

/// Class-based TF-IDF keywords: `tf_c(t) · ln(1 + A / f_t)` where `f_t`
/// counts token `t` over all clustered documents and `A` is the mean token
/// count per non-empty cluster. Ties are broken by token.
pub fn ctf_idf_keywords(
    corpus: &Corpus,
    assignments: &[Option<usize>],
    k: usize,
    top_n: usize,
) -> Vec<Vec<(String, f64)>> {
    let mut tf: Vec<HashMap<u32, f64>> = vec![HashMap::new(); k];
    let mut total: HashMap<u32, f64> = HashMap::new();
    for (doc, a) in corpus.tokens.iter().zip(assignments) {
        let Some(c) = *a else { continue };
        for &t in doc {
            *tf[c].entry(t).or_default() += 1.0;
            *total.entry(t).or_default() += 1.0;
        }
    }
    let all_tokens: f64 = total.values().sum();
    let live = tf.iter().filter(|m| !m.is_empty()).count().max(1);
    let avg = all_tokens / live as f64;
    tf.into_iter()
        .map(|counts| {
            let mut scored: Vec<(String, f64)> = counts
                .into_iter()
                .map(|(t, c)| {
                    let f = total[&t];
                    (corpus.vocabulary[t as usize].clone(), c * (1.0 + avg / f).ln())
                })
                .collect();
            scored.sort_by(|a, b| b.1.total_cmp(&a.1).then_with(|| a.0.cmp(&b.0)));
            scored.truncate(top_n);
            scored
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct TopicModel {
    pub k: usize,
    pub assignments: Vec<Option<usize>>,
    pub centroids: Vec<Vec<f64>>,
    pub keywords: Vec<Vec<(String, f64)>>,
    /// (model_id, cluster_id) → document count.
    pub counts: BTreeMap<(String, usize), usize>,
    /// Most frequent theme per cluster and its share of the members.
    pub dominant_theme: Vec<Option<(usize, f64)>>,
    /// Documents left out of clustering (no usable tokens), per model.
    pub excluded: BTreeMap<String, usize>,
    pub iterations: usize,
    pub converged: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TopicSettings {
    pub k: Option<usize>,
    pub seed: u64,
    pub top_n: usize,
    pub embedder: Embedder,
}

impl Default for TopicSettings {
    fn default() -> Self {
        Self {
            k: None,
            seed: 0,
            top_n: DEFAULT_TOP_N,
            embedder: Embedder::TfidfFallback,
        }
    }
}

pub fn build_topic_model(
    corpus: &Corpus,
    vectors: &Vectors,
    settings: &TopicSettings,
    exec: Exec,
) -> Result<TopicModel, TopicError> {
    let nonzero = vectors.nonzero().len();
    let k = settings.k.unwrap_or_else(|| default_k(nonzero));
    let clustering = cluster(vectors, k, settings.seed, exec)?;
    let keywords = ctf_idf_keywords(corpus, &clustering.assignments, k, settings.top_n);
    let mut counts = BTreeMap::new();
    let mut excluded = BTreeMap::new();
    let mut themes: Vec<BTreeMap<usize, usize>> = vec![BTreeMap::new(); k];
    for (doc, a) in corpus.documents.iter().zip(&clustering.assignments) {
        match a {
            Some(c) => {
                *counts.entry((doc.model_id.clone(), *c)).or_insert(0) += 1;
                *themes[*c].entry(doc.theme_index).or_insert(0) += 1;
            }
            None => *excluded.entry(doc.model_id.clone()).or_insert(0) += 1,
        }
    }
    let dominant_theme = themes
        .iter()
        .map(|t| {
            let size: usize = t.values().sum();
            // BTreeMap order makes the lowest theme win ties
            t.iter()
                .fold(None, |best: Option<(usize, usize)>, (&theme, &n)| match best {
                    Some((_, m)) if m >= n => best,
                    _ => Some((theme, n)),
                })
                .map(|(theme, n)| (theme, n as f64 / size as f64))
        })
        .collect();
    Ok(TopicModel {
        k,
        assignments: clustering.assignments,
        centroids: clustering.centroids,
        keywords,
        counts,
        dominant_theme,
        excluded,
        iterations: clustering.iterations,
        converged: clustering.converged,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TopicSummary {
    pub cluster_id: usize,
    pub count: usize,
    pub dominant_theme: Option<usize>,
    pub keywords: Vec<String>,
}

/// For each model, the `m` clusters with most documents (ties: lower id).
pub fn top_topics_per_model(model: &TopicModel, m: usize) -> BTreeMap<String, Vec<TopicSummary>> {
    let mut per_model: BTreeMap<String, Vec<(usize, usize)>> = BTreeMap::new();
    for ((model_id, cluster), &count) in &model.counts {
        per_model
            .entry(model_id.clone())
            .or_default()
            .push((*cluster, count));
    }
    per_model
        .into_iter()
        .map(|(model_id, mut clusters)| {
            clusters.sort_by(|a, b| b.1.cmp(&a.1).then(a.0.cmp(&b.0)));
            clusters.truncate(m);
            let summaries = clusters
                .into_iter()
                .map(|(c, count)| TopicSummary {
                    cluster_id: c,
                    count,
                    dominant_theme: model.dominant_theme[c].map(|d| d.0),
                    keywords: model.keywords[c].iter().map(|(t, _)| t.clone()).collect(),
                })
                .collect();
            (model_id, summaries)
        })
        .collect()
}

/// Per-model ranked topic lists with keywords and dominant themes.
pub fn render_topic_report(model: &TopicModel, m: usize) -> String {
    let mut out = String::new();
    out.push_str(&format!(
        "{} topics; k-means {} after {} iteration(s)\n",
        model.k,
        if model.converged { "converged" } else { "stopped" },
        model.iterations
    ));
    for (model_id, topics) in top_topics_per_model(model, m) {
        out.push_str(&format!("\n{model_id}\n"));
        for (rank, t) in topics.iter().enumerate() {
            let theme = t
                .dominant_theme
                .map_or(String::new(), |n| format!(" (Theme {n})"));
            out.push_str(&format!(
                "  {:>2}. #{:03} {:>5}  {}{}\n",
                rank + 1,
                t.cluster_id,
                t.count,
                t.keywords.join(", "),
                theme
            ));
        }
        if let Some(n) = model.excluded.get(&model_id) {
            out.push_str(&format!("  excluded (no usable tokens): {n}\n"));
        }
    }
    for (model_id, n) in &model.excluded {
        if !model.counts.keys().any(|(m, _)| m == model_id) {
            out.push_str(&format!("\n{model_id}\n  excluded (no usable tokens): {n}\n"));
        }
    }
    out
}

/// One row per cluster: keywords, dominant theme and per-model counts.
pub fn topics_csv(model: &TopicModel, models: &[String]) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    let mut header = vec![
        "cluster_id".to_string(),
        "keywords".into(),
        "dominant_theme".into(),
        "dominant_share".into(),
    ];
    header.extend(models.iter().cloned());
    w.write_record(&header).expect("in-memory write");
    for c in 0..model.k {
        let mut row = vec![
            c.to_string(),
            model.keywords[c]
                .iter()
                .map(|(t, _)| t.as_str())
                .collect::<Vec<_>>()
                .join(" "),
            model.dominant_theme[c].map_or(String::new(), |d| d.0.to_string()),
            model.dominant_theme[c].map_or(String::new(), |d| format!("{:.3}", d.1)),
        ];
        for m in models {
            row.push(
                model
                    .counts
                    .get(&(m.clone(), c))
                    .copied()
                    .unwrap_or(0)
                    .to_string(),
            );
        }
        w.write_record(&row).expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}

/// Document → cluster table; excluded documents have an empty cluster.
pub fn assignments_csv(corpus: &Corpus, model: &TopicModel) -> String {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record(["doc_id", "model_id", "session_id", "agent", "theme_index", "cluster_id"])
        .expect("in-memory write");
    for (d, a) in corpus.documents.iter().zip(&model.assignments) {
        w.write_record([
            d.doc_id.to_string(),
            d.model_id.clone(),
            d.session_id.clone(),
            d.agent.to_string(),
            d.theme_index.to_string(),
            a.map_or(String::new(), |c| c.to_string()),
        ])
        .expect("in-memory write");
    }
    String::from_utf8(w.into_inner().expect("in-memory flush")).expect("CSV is UTF-8")
}
