//! Questionnaire instruments, administration plans, probe prompts, answer
//! parsing and factor scoring.
//!
//! Instruments are data: a JSON document per questionnaire listing the
//! scale, factors and items. The shipped files are skeletons with
//! placeholder item texts; real instruments are loaded from a directory of
//! files with the same schema.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fmt;
use std::path::Path;
use std::sync::OnceLock;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::gateway::{ChatMessage, Role};
use crate::protocol::{Agent, Snapshot, STAGES};

pub const DEFAULT_REPETITIONS: u32 = 10;
pub const DEFAULT_PROBE_TEMPERATURE: f64 = 0.0;
/// Re-asks after a failed parse before the repetition is recorded missing.
pub const DEFAULT_MAX_REASKS: u32 = 2;

pub const PROBE_HEADER: &str = "Your name is assistant. Considering the next conversation between user and assistant, answer given descriptions.";
pub const HISTORY_SEPARATOR: &str = "\n\n------\n\n";

/// Instrument ids grouped by the aspect they measure, in report order.
pub const ASPECTS: [(&str, &[&str]); 4] = [
    ("Personality", &["BFI", "EPQ-R", "DTDD"]),
    (
        "Interpersonal Relationship",
        &["BSRI", "CABIN", "ICB", "ECR-R", "MFQ-FF"],
    ),
    ("Motivation", &["GSE", "LOT-R", "LMS"]),
    ("Emotion", &["EIS", "WLEIS", "Empathy"]),
];

const SHIPPED: [(&str, &str); 14] = [
    ("BFI", include_str!("../data/questionnaires/BFI.json")),
    ("EPQ-R", include_str!("../data/questionnaires/EPQ-R.json")),
    ("DTDD", include_str!("../data/questionnaires/DTDD.json")),
    ("BSRI", include_str!("../data/questionnaires/BSRI.json")),
    ("CABIN", include_str!("../data/questionnaires/CABIN.json")),
    ("ICB", include_str!("../data/questionnaires/ICB.json")),
    ("ECR-R", include_str!("../data/questionnaires/ECR-R.json")),
    ("MFQ-FF", include_str!("../data/questionnaires/MFQ-FF.json")),
    ("GSE", include_str!("../data/questionnaires/GSE.json")),
    ("LOT-R", include_str!("../data/questionnaires/LOT-R.json")),
    ("LMS", include_str!("../data/questionnaires/LMS.json")),
    ("EIS", include_str!("../data/questionnaires/EIS.json")),
    ("WLEIS", include_str!("../data/questionnaires/WLEIS.json")),
    ("Empathy", include_str!("../data/questionnaires/Empathy.json")),
];

#[derive(Debug, Error)]
pub enum QuestionnaireError {
    #[error("schema error in {source_name}: {message}")]
    Schema { source_name: String, message: String },
    #[error("invariant violated in {id}: {message}")]
    Invariant { id: String, message: String },
    #[error("reading {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("snapshot stage {snapshot} does not match plan stage {plan}")]
    StageMismatch { snapshot: u8, plan: u8 },
    #[error("plan is for {plan}, questionnaire is {spec}")]
    WrongQuestionnaire { plan: String, spec: String },
    #[error("unknown questionnaire {0:?}")]
    Unknown(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Error, Serialize, Deserialize)]
pub enum ParseError {
    #[error("no answers covering items {0:?}")]
    MissingItems(Vec<String>),
    #[error("score {score} for statement {index} is outside the scale")]
    OutOfRange { index: usize, score: i64 },
    #[error("statement {0} answered more than once")]
    DuplicateIndex(usize),
    #[error("no \"index: score\" lines found")]
    Unparseable,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Aggregation {
    Mean,
    Sum,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FactorDef {
    pub factor_id: String,
    pub name: String,
    pub aggregation: Aggregation,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ItemDef {
    pub item_id: String,
    pub text: String,
    pub reverse: bool,
    pub factor_id: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct QuestionnaireSpec {
    pub id: String,
    pub name: String,
    pub scale_min: i64,
    pub scale_max: i64,
    pub scale_labels: Option<Vec<String>>,
    pub prompt_preamble: String,
    pub factors: Vec<FactorDef>,
    pub items: Vec<ItemDef>,
}

impl QuestionnaireSpec {
    pub fn from_json(text: &str, source_name: &str) -> Result<Self, QuestionnaireError> {
        let spec: Self =
            serde_json::from_str(text).map_err(|e| QuestionnaireError::Schema {
                source_name: source_name.to_string(),
                message: e.to_string(),
            })?;
        spec.validate()?;
        Ok(spec)
    }

    pub fn validate(&self) -> Result<(), QuestionnaireError> {
        let bad = |message: String| QuestionnaireError::Invariant {
            id: self.id.clone(),
            message,
        };
        if self.id.trim().is_empty() {
            return Err(bad("empty id".into()));
        }
        if self.scale_min >= self.scale_max {
            return Err(bad(format!(
                "scale_min {} must be below scale_max {}",
                self.scale_min, self.scale_max
            )));
        }
        if let Some(labels) = &self.scale_labels {
            let points = (self.scale_max - self.scale_min + 1) as usize;
            if labels.len() != points {
                return Err(bad(format!(
                    "{} scale labels for {points} scale points",
                    labels.len()
                )));
            }
        }
        let mut factor_ids = HashSet::new();
        for f in &self.factors {
            if !factor_ids.insert(f.factor_id.as_str()) {
                return Err(bad(format!("duplicate factor {}", f.factor_id)));
            }
        }
        if self.items.is_empty() {
            return Err(bad("no items".into()));
        }
        let mut item_ids = HashSet::new();
        let mut used = HashSet::new();
        for item in &self.items {
            if !item_ids.insert(item.item_id.as_str()) {
                return Err(bad(format!("duplicate item {}", item.item_id)));
            }
            if !factor_ids.contains(item.factor_id.as_str()) {
                return Err(bad(format!(
                    "item {} references unknown factor {}",
                    item.item_id, item.factor_id
                )));
            }
            if item.text.contains('\n') || item.text.trim().is_empty() {
                return Err(bad(format!("item {} text must be a single non-blank line", item.item_id)));
            }
            used.insert(item.factor_id.as_str());
        }
        if let Some(f) = self.factors.iter().find(|f| !used.contains(f.factor_id.as_str())) {
            return Err(bad(format!("factor {} has no items", f.factor_id)));
        }
        Ok(())
    }

    pub fn factor(&self, factor_id: &str) -> Option<&FactorDef> {
        self.factors.iter().find(|f| f.factor_id == factor_id)
    }

    pub fn item(&self, item_id: &str) -> Option<&ItemDef> {
        self.items.iter().find(|i| i.item_id == item_id)
    }

    /// Mirrors a raw score across the scale.
    pub fn reverse_score(&self, r: i64) -> i64 {
        self.scale_min + self.scale_max - r
    }

    /// Valid range of a factor value.
    pub fn factor_bounds(&self, factor_id: &str) -> Option<(f64, f64)> {
        let f = self.factor(factor_id)?;
        let n = self.items.iter().filter(|i| i.factor_id == factor_id).count() as f64;
        let (lo, hi) = (self.scale_min as f64, self.scale_max as f64);
        Some(match f.aggregation {
            Aggregation::Mean => (lo, hi),
            Aggregation::Sum => (n * lo, n * hi),
        })
    }
}

pub fn load_questionnaire(path: &Path) -> Result<QuestionnaireSpec, QuestionnaireError> {
    let text = std::fs::read_to_string(path).map_err(|source| QuestionnaireError::Io {
        path: path.display().to_string(),
        source,
    })?;
    QuestionnaireSpec::from_json(&text, &path.display().to_string())
}

fn report_rank(id: &str) -> usize {
    ASPECTS
        .iter()
        .flat_map(|(_, ids)| ids.iter())
        .position(|x| *x == id)
        .unwrap_or(usize::MAX)
}

fn sort_for_report(specs: &mut [QuestionnaireSpec]) {
    specs.sort_by(|a, b| (report_rank(&a.id), &a.id).cmp(&(report_rank(&b.id), &b.id)));
}

/// Every `*.json` file in `dir`, in report order.
pub fn load_dir(dir: &Path) -> Result<Vec<QuestionnaireSpec>, QuestionnaireError> {
    let io = |source| QuestionnaireError::Io {
        path: dir.display().to_string(),
        source,
    };
    let mut specs = Vec::new();
    for entry in std::fs::read_dir(dir).map_err(io)? {
        let path = entry.map_err(io)?.path();
        if path.extension().is_some_and(|e| e == "json") {
            specs.push(load_questionnaire(&path)?);
        }
    }
    let mut ids = HashSet::new();
    if let Some(dup) = specs.iter().find(|s| !ids.insert(s.id.clone())) {
        return Err(QuestionnaireError::Invariant {
            id: dup.id.clone(),
            message: format!("defined twice in {}", dir.display()),
        });
    }
    sort_for_report(&mut specs);
    Ok(specs)
}

/// The 14 shipped instrument skeletons, in report order.
pub fn builtin_questionnaires() -> &'static [QuestionnaireSpec] {
    static ALL: OnceLock<Vec<QuestionnaireSpec>> = OnceLock::new();
    ALL.get_or_init(|| {
        SHIPPED
            .iter()
            .map(|(id, text)| {
                QuestionnaireSpec::from_json(text, id).expect("shipped skeleton is valid")
            })
            .collect()
    })
}

pub fn builtin(id: &str) -> Option<&'static QuestionnaireSpec> {
    builtin_questionnaires().iter().find(|s| s.id == id)
}

/// Keeps only `ids` (in the order of `all`), failing on unknown ids.
pub fn select(
    all: &[QuestionnaireSpec],
    ids: &[String],
) -> Result<Vec<QuestionnaireSpec>, QuestionnaireError> {
    if let Some(missing) = ids.iter().find(|id| !all.iter().any(|s| &s.id == *id)) {
        return Err(QuestionnaireError::Unknown(missing.clone()));
    }
    Ok(all.iter().filter(|s| ids.contains(&s.id)).cloned().collect())
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Participant {
    pub model_id: String,
    pub session_id: String,
    pub agent: Agent,
}

impl Participant {
    pub fn new(model_id: &str, session_id: &str, agent: Agent) -> Self {
        Self {
            model_id: model_id.to_string(),
            session_id: session_id.to_string(),
            agent,
        }
    }

    pub fn id(&self) -> String {
        participant_id(&self.session_id, self.agent)
    }
}

pub fn participant_id(session_id: &str, agent: Agent) -> String {
    format!("{session_id}:{agent}")
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AdministrationPlan {
    pub model_id: String,
    pub session_id: String,
    pub participant_id: String,
    pub agent: Agent,
    pub questionnaire_id: String,
    pub stage: u8,
    pub repetition: u32,
    pub item_permutation: Vec<String>,
    pub seed: u64,
}

/// Deterministic plan for one (participant, stage, repetition) unit.
pub fn plan_for(
    spec: &QuestionnaireSpec,
    participant: &Participant,
    stage: u8,
    repetition: u32,
    master_seed: u64,
) -> AdministrationPlan {
    let pid = participant.id();
    let seed = derive_seed(
        master_seed,
        &format!("plan:{}:{pid}:{stage}:{repetition}", spec.id),
    );
    let mut item_permutation: Vec<String> = spec.items.iter().map(|i| i.item_id.clone()).collect();
    item_permutation.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    AdministrationPlan {
        model_id: participant.model_id.clone(),
        session_id: participant.session_id.clone(),
        participant_id: pid,
        agent: participant.agent,
        questionnaire_id: spec.id.clone(),
        stage,
        repetition,
        item_permutation,
        seed,
    }
}

/// Plans for every participant × stage × repetition, in that nesting order.
pub fn plan_administrations(
    spec: &QuestionnaireSpec,
    participants: &[Participant],
    stages: u8,
    repetitions: u32,
    master_seed: u64,
) -> Vec<AdministrationPlan> {
    let mut plans = Vec::with_capacity(participants.len() * stages as usize * repetitions as usize);
    for p in participants {
        for stage in 1..=stages {
            for rep in 1..=repetitions {
                plans.push(plan_for(spec, p, stage, rep, master_seed));
            }
        }
    }
    plans
}

/// Plain-text transcript embedded in the probe's system message.
pub fn render_history(history: &[ChatMessage]) -> String {
    history
        .iter()
        .map(|m| format!("{}: {}", m.role, m.content))
        .collect::<Vec<_>>()
        .join("\n")
}

/// Scale instructions followed by the items in plan order, numbered from 1.
pub fn questionnaire_setup(spec: &QuestionnaireSpec, permutation: &[String]) -> String {
    let mut s = String::new();
    s.push_str(spec.prompt_preamble.trim());
    s.push_str(&format!(
        "\nYou can only reply with numbers from {} to {}.",
        spec.scale_min, spec.scale_max
    ));
    if let Some(labels) = &spec.scale_labels {
        let parts: Vec<String> = labels
            .iter()
            .zip(spec.scale_min..)
            .map(|(l, v)| format!("{v} denotes \"{l}\""))
            .collect();
        s.push_str(&format!("\n{}.", parts.join(", ")));
    }
    s.push_str(&format!(
        "\nHere are the statements, score them one by one. Reply with exactly one line per statement in the form \"<index>: <score>\", for all {} statements.\n",
        permutation.len()
    ));
    for (pos, id) in permutation.iter().enumerate() {
        let text = spec.item(id).map_or("", |i| i.text.as_str());
        s.push_str(&format!("\n{}. {}", pos + 1, text));
    }
    s
}

pub fn assemble_probe_prompt(
    spec: &QuestionnaireSpec,
    snapshot: &Snapshot,
    plan: &AdministrationPlan,
) -> Result<Vec<ChatMessage>, QuestionnaireError> {
    if plan.questionnaire_id != spec.id {
        return Err(QuestionnaireError::WrongQuestionnaire {
            plan: plan.questionnaire_id.clone(),
            spec: spec.id.clone(),
        });
    }
    if snapshot.stage != plan.stage
        || !(1..=STAGES as u8).contains(&snapshot.stage)
        || snapshot.history.is_empty()
    {
        return Err(QuestionnaireError::StageMismatch {
            snapshot: snapshot.stage,
            plan: plan.stage,
        });
    }
    let content = format!(
        "{PROBE_HEADER}{HISTORY_SEPARATOR}{}{HISTORY_SEPARATOR}{}",
        render_history(&snapshot.history),
        questionnaire_setup(spec, &plan.item_permutation)
    );
    Ok(vec![ChatMessage {
        role: Role::System,
        content,
    }])
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RawResponse {
    pub model_id: String,
    pub session_id: String,
    pub participant_id: String,
    pub questionnaire_id: String,
    pub stage: u8,
    pub repetition: u32,
    /// item_id → raw score as answered.
    pub answers: BTreeMap<String, i64>,
}

fn answer_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| {
        Regex::new(r"^\s*(?:[-*]\s+)?[*_]*(\d+)[*_]*\s*[.)]?\s*:\s*[*_]*(-?\d+)(\.\d+)?").unwrap()
    })
}

/// Extracts `index: score` lines, ignoring any other text.
pub fn parse_answers(
    spec: &QuestionnaireSpec,
    plan: &AdministrationPlan,
    raw_text: &str,
) -> Result<RawResponse, ParseError> {
    let n = plan.item_permutation.len();
    let mut scores: Vec<Option<i64>> = vec![None; n];
    let mut matched = false;
    for line in raw_text.lines() {
        let Some(c) = answer_re().captures(line) else {
            continue;
        };
        if c.get(3).is_some() {
            // fractional score: not a valid answer line
            continue;
        }
        let (Ok(index), Ok(score)) = (c[1].parse::<usize>(), c[2].parse::<i64>()) else {
            continue;
        };
        if index == 0 || index > n {
            continue;
        }
        matched = true;
        if scores[index - 1].is_some() {
            return Err(ParseError::DuplicateIndex(index));
        }
        if score < spec.scale_min || score > spec.scale_max {
            return Err(ParseError::OutOfRange { index, score });
        }
        scores[index - 1] = Some(score);
    }
    if !matched {
        return Err(ParseError::Unparseable);
    }
    let missing: Vec<String> = scores
        .iter()
        .zip(&plan.item_permutation)
        .filter(|(s, _)| s.is_none())
        .map(|(_, id)| id.clone())
        .collect();
    if !missing.is_empty() {
        return Err(ParseError::MissingItems(missing));
    }
    Ok(RawResponse {
        model_id: plan.model_id.clone(),
        session_id: plan.session_id.clone(),
        participant_id: plan.participant_id.clone(),
        questionnaire_id: plan.questionnaire_id.clone(),
        stage: plan.stage,
        repetition: plan.repetition,
        answers: plan
            .item_permutation
            .iter()
            .cloned()
            .zip(scores.into_iter().flatten())
            .collect(),
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FactorSample {
    pub model_id: String,
    pub session_id: String,
    pub participant_id: String,
    pub stage: u8,
    pub repetition: u32,
    pub questionnaire_id: String,
    pub factor_id: String,
    pub value: f64,
}

/// One sample per factor, in the questionnaire's factor order.
pub fn score_response(spec: &QuestionnaireSpec, response: &RawResponse) -> Vec<FactorSample> {
    let mut acc: HashMap<&str, (f64, usize)> = HashMap::new();
    for item in &spec.items {
        let Some(&raw) = response.answers.get(&item.item_id) else {
            continue;
        };
        let r = if item.reverse {
            spec.reverse_score(raw)
        } else {
            raw
        };
        let e = acc.entry(item.factor_id.as_str()).or_default();
        e.0 += r as f64;
        e.1 += 1;
    }
    spec.factors
        .iter()
        .filter_map(|f| {
            let (sum, count) = *acc.get(f.factor_id.as_str())?;
            let value = match f.aggregation {
                Aggregation::Sum => sum,
                Aggregation::Mean => sum / count as f64,
            };
            Some(FactorSample {
                model_id: response.model_id.clone(),
                session_id: response.session_id.clone(),
                participant_id: response.participant_id.clone(),
                stage: response.stage,
                repetition: response.repetition,
                questionnaire_id: spec.id.clone(),
                factor_id: f.factor_id.clone(),
                value,
            })
        })
        .collect()
}

impl fmt::Display for Aggregation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Aggregation::Mean => "mean",
            Aggregation::Sum => "sum",
        })
    }
}
