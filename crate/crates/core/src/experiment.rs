//! Experiment orchestration: conversations, probes and analysis over a
//! persisted run.
//!
//! Sessions run concurrently; each session's probes start once its log is
//! complete. Every record goes through [`RunStore`] as it is produced, so an
//! interrupted run picks up from [`resume_plan`] without repeating work.

use std::collections::{BTreeMap, HashMap, HashSet};

use serde::Serialize;
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::gateway::{Backend, ChatRequest};
use crate::protocol::{
    build_snapshot, continue_conversation, Agent, ConversationLog, ProtocolError, Theme,
    DEFAULT_CONVERSATION_TEMPERATURE,
};
use crate::questionnaire::{
    assemble_probe_prompt, parse_answers, plan_for, score_response, FactorSample, Participant,
    QuestionnaireSpec, DEFAULT_MAX_REASKS, DEFAULT_PROBE_TEMPERATURE, DEFAULT_REPETITIONS,
};
use crate::report::AnalysisRecord;
use crate::stats::analyze_factor;
use crate::stats::StatsError;
use crate::store::{
    load_run, resume_plan, LoadedRun, LogRecord, ResponseRecord, ResponseStatus, RunConfig,
    RunManifest, RunStore, SessionEntry, SessionStatus, StoreError, Stream, WorkItem,
};
use crate::{derive_seed, Exec};

pub const DEFAULT_SESSIONS_PER_MODEL: u32 = 20;
pub const DEFAULT_ALPHA: f64 = 0.05;

#[derive(Debug, Error)]
pub enum ExperimentError {
    #[error(transparent)]
    Store(#[from] StoreError),
    #[error("run settings differ from the run manifest: {}", .0.join(", "))]
    ConfigMismatch(Vec<String>),
    #[error("invalid settings: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone)]
pub struct ExperimentSettings {
    pub model_ids: Vec<String>,
    pub sessions_per_model: u32,
    pub repetitions: u32,
    pub conversation_temperature: f64,
    pub probe_temperature: f64,
    pub alpha: f64,
    pub master_seed: u64,
    pub max_reasks: u32,
    pub themes: Vec<Theme>,
    pub questionnaires: Vec<QuestionnaireSpec>,
    pub exec: Exec,
}

impl ExperimentSettings {
    pub fn new(model_ids: Vec<String>, themes: Vec<Theme>, questionnaires: Vec<QuestionnaireSpec>) -> Self {
        Self {
            model_ids,
            sessions_per_model: DEFAULT_SESSIONS_PER_MODEL,
            repetitions: DEFAULT_REPETITIONS,
            conversation_temperature: DEFAULT_CONVERSATION_TEMPERATURE,
            probe_temperature: DEFAULT_PROBE_TEMPERATURE,
            alpha: DEFAULT_ALPHA,
            master_seed: 0,
            max_reasks: DEFAULT_MAX_REASKS,
            themes,
            questionnaires,
            exec: Exec::default(),
        }
    }

    pub fn validate(&self) -> Result<(), ExperimentError> {
        let bad = |m: &str| Err(ExperimentError::Invalid(m.to_string()));
        if self.model_ids.is_empty() {
            return bad("at least one model id is required");
        }
        let unique: HashSet<&String> = self.model_ids.iter().collect();
        if unique.len() != self.model_ids.len() {
            return bad("model ids must be distinct");
        }
        if self.sessions_per_model == 0 {
            return bad("sessions_per_model must be at least 1");
        }
        if self.repetitions == 0 {
            return bad("repetitions must be at least 1");
        }
        for t in [self.conversation_temperature, self.probe_temperature] {
            if !(0.0..=2.0).contains(&t) {
                return bad("temperatures must lie in [0, 2]");
            }
        }
        if !(self.alpha > 0.0 && self.alpha < 1.0) {
            return bad("alpha must lie in (0, 1)");
        }
        crate::protocol::validate_themes(&self.themes)
            .map_err(|e| ExperimentError::Invalid(e.to_string()))?;
        Ok(())
    }

    pub fn run_config(&self, backend: serde_json::Value) -> RunConfig {
        RunConfig {
            model_ids: self.model_ids.clone(),
            sessions_per_model: self.sessions_per_model,
            repetitions: self.repetitions,
            conversation_temperature: self.conversation_temperature,
            probe_temperature: self.probe_temperature,
            alpha: self.alpha,
            master_seed: self.master_seed,
            max_reasks: self.max_reasks,
            theme_count: self.themes.len(),
            themes_digest: digest(&self.themes),
            questionnaire_ids: self.questionnaires.iter().map(|q| q.id.clone()).collect(),
            questionnaires_digest: digest(&self.questionnaires),
            backend,
        }
    }

    /// Manifest for a fresh run: one pending entry per session.
    pub fn manifest(&self, run_id: &str, backend: serde_json::Value) -> RunManifest {
        let sessions = self
            .model_ids
            .iter()
            .flat_map(|m| (1..=self.sessions_per_model).map(move |n| (m, n)))
            .map(|(m, n)| {
                let id = session_id(m, n);
                SessionEntry {
                    seed: derive_seed(self.master_seed, &format!("session:{id}")),
                    session_id: id,
                    model_id: m.clone(),
                    status: SessionStatus::Pending,
                }
            })
            .collect();
        RunManifest::new(run_id, self.run_config(backend), sessions)
    }

    fn spec(&self, id: &str) -> Option<&QuestionnaireSpec> {
        self.questionnaires.iter().find(|q| q.id == id)
    }
}

pub fn session_id(model_id: &str, n: u32) -> String {
    format!("{model_id}-s{n:02}")
}

/// Hex SHA-256 of the value's JSON form.
pub fn digest<T: Serialize>(value: &T) -> String {
    let bytes = serde_json::to_vec(value).expect("value serializes");
    Sha256::digest(&bytes)
        .iter()
        .map(|b| format!("{b:02x}"))
        .collect()
}

/// Fields whose values differ between two run configurations. The
/// alpha level only affects analysis and is not compared.
pub fn config_mismatches(stored: &RunConfig, current: &RunConfig) -> Vec<String> {
    let mut out = Vec::new();
    let mut check = |name: &str, same: bool| {
        if !same {
            out.push(name.to_string());
        }
    };
    check("model_ids", stored.model_ids == current.model_ids);
    check("sessions_per_model", stored.sessions_per_model == current.sessions_per_model);
    check("repetitions", stored.repetitions == current.repetitions);
    check(
        "conversation_temperature",
        stored.conversation_temperature == current.conversation_temperature,
    );
    check("probe_temperature", stored.probe_temperature == current.probe_temperature);
    check("master_seed", stored.master_seed == current.master_seed);
    check("max_reasks", stored.max_reasks == current.max_reasks);
    check("themes", stored.themes_digest == current.themes_digest);
    check("questionnaire_ids", stored.questionnaire_ids == current.questionnaire_ids);
    check("questionnaires", stored.questionnaires_digest == current.questionnaires_digest);
    out
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunSummary {
    pub utterances_written: usize,
    pub responses_ok: usize,
    pub responses_missing: usize,
    pub samples_written: usize,
    pub samples_backfilled: usize,
    /// Sessions that stopped early, with the reason. Rerunning resumes them.
    pub failures: Vec<(String, String)>,
}

impl RunSummary {
    fn absorb(&mut self, other: RunSummary) {
        self.utterances_written += other.utterances_written;
        self.responses_ok += other.responses_ok;
        self.responses_missing += other.responses_missing;
        self.samples_written += other.samples_written;
        self.samples_backfilled += other.samples_backfilled;
        self.failures.extend(other.failures);
    }
}

/// Runs every unit of work the store does not hold yet.
pub fn execute(
    store: &RunStore,
    settings: &ExperimentSettings,
    backend: &Backend,
) -> Result<RunSummary, ExperimentError> {
    settings.validate()?;
    let manifest = store.manifest();
    let current = settings.run_config(manifest.config.backend.clone());
    let diff = config_mismatches(&manifest.config, &current);
    if !diff.is_empty() {
        return Err(ExperimentError::ConfigMismatch(diff));
    }
    let loaded = load_run(store.dir())?;
    let mut summary = RunSummary {
        samples_backfilled: backfill_samples(store, settings, &loaded)?,
        ..RunSummary::default()
    };

    let mut probes: BTreeMap<String, Vec<WorkItem>> = BTreeMap::new();
    for item in resume_plan(&loaded) {
        if let WorkItem::Probe { session_id, .. } = &item {
            probes.entry(session_id.clone()).or_default().push(item);
        }
    }
    let logs = loaded.conversation_logs();
    let sessions: Vec<(ConversationLog, Vec<WorkItem>)> = manifest
        .sessions
        .iter()
        .filter_map(|s| {
            let log = logs.get(&s.session_id)?.clone();
            let pending = probes.remove(&s.session_id).unwrap_or_default();
            let needs_turns = !log.is_complete(settings.themes.len());
            (needs_turns || !pending.is_empty()).then_some((log, pending))
        })
        .collect();

    let results = settings.exec.map(&sessions, |(log, pending)| {
        run_session(store, settings, backend, log.clone(), pending)
    });
    for r in results {
        summary.absorb(r?);
    }
    store.sync()?;
    Ok(summary)
}

fn run_session(
    store: &RunStore,
    settings: &ExperimentSettings,
    backend: &Backend,
    mut log: ConversationLog,
    pending: &[WorkItem],
) -> Result<RunSummary, ExperimentError> {
    let mut summary = RunSummary::default();
    let mut store_error = None;
    let before = log.utterances.len();
    let outcome = {
        let session = ConversationLog::new(&log.session_id, &log.model_id, log.seed);
        let mut sink = |u: &crate::protocol::Utterance| {
            store
                .append(Stream::Logs, &LogRecord::new(&session, u))
                .map_err(|e| {
                    let msg = e.to_string();
                    store_error = Some(e);
                    msg
                })
        };
        continue_conversation(
            &mut log,
            &settings.themes,
            backend,
            settings.conversation_temperature,
            &mut sink,
        )
    };
    if let Some(e) = store_error {
        return Err(e.into());
    }
    summary.utterances_written = log.utterances.len() - before;
    if let Err(e) = outcome {
        summary.failures.push((log.session_id.clone(), e.to_string()));
        return Ok(summary);
    }

    let results = settings
        .exec
        .map(pending, |item| administer(store, settings, backend, &log, item));
    let mut first_failure = None;
    for r in results {
        match r? {
            ProbeOutcome::Answered { samples } => {
                summary.responses_ok += 1;
                summary.samples_written += samples;
            }
            ProbeOutcome::Missing => summary.responses_missing += 1,
            ProbeOutcome::Failed(msg) => {
                first_failure.get_or_insert(msg);
            }
        }
    }
    if let Some(msg) = first_failure {
        summary.failures.push((log.session_id.clone(), msg));
    }
    Ok(summary)
}

enum ProbeOutcome {
    Answered { samples: usize },
    Missing,
    /// Backend failure; nothing recorded, so a rerun retries the unit.
    Failed(String),
}

fn administer(
    store: &RunStore,
    settings: &ExperimentSettings,
    backend: &Backend,
    log: &ConversationLog,
    item: &WorkItem,
) -> Result<ProbeOutcome, ExperimentError> {
    let WorkItem::Probe {
        participant_id,
        stage,
        questionnaire_id,
        repetition,
        ..
    } = item
    else {
        return Ok(ProbeOutcome::Missing);
    };
    let spec = settings
        .spec(questionnaire_id)
        .ok_or_else(|| ExperimentError::Invalid(format!("unknown questionnaire {questionnaire_id}")))?;
    let agent = if participant_id.ends_with(":B") { Agent::B } else { Agent::A };
    let participant = Participant::new(&log.model_id, &log.session_id, agent);
    let plan = plan_for(spec, &participant, *stage, *repetition, settings.master_seed);
    let prompt = build_snapshot(log, &settings.themes, *stage, agent)
        .map_err(|e: ProtocolError| e.to_string())
        .and_then(|snap| assemble_probe_prompt(spec, &snap, &plan).map_err(|e| e.to_string()));
    let messages = match prompt {
        Ok(m) => m,
        Err(e) => return Ok(ProbeOutcome::Failed(e)),
    };

    let mut raw_text = String::new();
    let mut last_error = None;
    let attempts = settings.max_reasks + 1;
    for attempt in 0..attempts {
        let request = ChatRequest {
            model_id: log.model_id.clone(),
            messages: messages.clone(),
            temperature: settings.probe_temperature,
            seed: Some(derive_seed(plan.seed, &format!("attempt:{attempt}"))),
        };
        raw_text = match backend.complete(&request) {
            Ok(t) => t,
            Err(e) => return Ok(ProbeOutcome::Failed(e.to_string())),
        };
        match parse_answers(spec, &plan, &raw_text) {
            Ok(raw) => {
                let record = ResponseRecord {
                    model_id: plan.model_id.clone(),
                    session_id: plan.session_id.clone(),
                    participant_id: plan.participant_id.clone(),
                    questionnaire_id: plan.questionnaire_id.clone(),
                    stage: plan.stage,
                    repetition: plan.repetition,
                    status: ResponseStatus::Ok,
                    attempts: attempt + 1,
                    item_permutation: plan.item_permutation.clone(),
                    answers: Some(raw.answers.clone()),
                    raw_text,
                    error: None,
                };
                store.append(Stream::Responses, &record)?;
                let samples = score_response(spec, &raw);
                for s in &samples {
                    store.append(Stream::Samples, s)?;
                }
                return Ok(ProbeOutcome::Answered {
                    samples: samples.len(),
                });
            }
            Err(e) => last_error = Some(e.to_string()),
        }
    }
    let record = ResponseRecord {
        model_id: plan.model_id.clone(),
        session_id: plan.session_id.clone(),
        participant_id: plan.participant_id.clone(),
        questionnaire_id: plan.questionnaire_id.clone(),
        stage: plan.stage,
        repetition: plan.repetition,
        status: ResponseStatus::Missing,
        attempts,
        item_permutation: plan.item_permutation,
        answers: None,
        raw_text,
        error: last_error,
    };
    store.append(Stream::Responses, &record)?;
    Ok(ProbeOutcome::Missing)
}

/// Scores answered responses whose samples were lost to an interruption
/// between the response and sample appends.
fn backfill_samples(
    store: &RunStore,
    settings: &ExperimentSettings,
    loaded: &LoadedRun,
) -> Result<usize, ExperimentError> {
    let scored: HashSet<(&str, u8, &str, u32)> = loaded
        .samples
        .iter()
        .map(|s| (s.participant_id.as_str(), s.stage, s.questionnaire_id.as_str(), s.repetition))
        .collect();
    let mut written = 0;
    for r in &loaded.responses {
        let key = (r.participant_id.as_str(), r.stage, r.questionnaire_id.as_str(), r.repetition);
        let (ResponseStatus::Ok, Some(answers)) = (r.status, &r.answers) else {
            continue;
        };
        if scored.contains(&key) {
            continue;
        }
        let Some(spec) = settings.spec(&r.questionnaire_id) else {
            continue;
        };
        let raw = crate::questionnaire::RawResponse {
            model_id: r.model_id.clone(),
            session_id: r.session_id.clone(),
            participant_id: r.participant_id.clone(),
            questionnaire_id: r.questionnaire_id.clone(),
            stage: r.stage,
            repetition: r.repetition,
            answers: answers.clone(),
        };
        for s in score_response(spec, &raw) {
            store.append(Stream::Samples, &s)?;
            written += 1;
        }
    }
    Ok(written)
}

#[derive(Debug, Clone, Default, PartialEq)]
pub struct AnalysisOutcome {
    pub records: Vec<AnalysisRecord>,
    /// (model, questionnaire/factor, reason) for cells that could not be
    /// analysed, e.g. too few complete subjects.
    pub skipped: Vec<(String, String, String)>,
}

/// Runs the statistical pipeline for every (model, questionnaire, factor)
/// cell of a loaded run. Cells are ordered by model, then questionnaire and
/// factor order of `questionnaires`. Duplicate samples keep their first copy.
pub fn analyze_run(
    run: &LoadedRun,
    questionnaires: &[QuestionnaireSpec],
    alpha: f64,
    exec: Exec,
) -> AnalysisOutcome {
    let mut groups: HashMap<(&str, &str, &str), Vec<FactorSample>> = HashMap::new();
    let mut seen = HashSet::new();
    for s in &run.samples {
        let key = (
            s.participant_id.as_str(),
            s.stage,
            s.questionnaire_id.as_str(),
            s.factor_id.as_str(),
            s.repetition,
        );
        if !seen.insert(key) {
            continue;
        }
        groups
            .entry((s.model_id.as_str(), s.questionnaire_id.as_str(), s.factor_id.as_str()))
            .or_default()
            .push(s.clone());
    }
    let mut cells: Vec<(String, String, String, String, Vec<FactorSample>)> = Vec::new();
    for model in &run.manifest.config.model_ids {
        for q in questionnaires {
            for f in &q.factors {
                let samples = groups
                    .remove(&(model.as_str(), q.id.as_str(), f.factor_id.as_str()))
                    .unwrap_or_default();
                cells.push((model.clone(), q.id.clone(), f.factor_id.clone(), f.name.clone(), samples));
            }
        }
    }
    let results = exec.map(&cells, |(_, _, _, _, samples)| {
        if samples.is_empty() {
            Err(StatsError::InsufficientData(0))
        } else {
            analyze_factor(samples, alpha)
        }
    });
    let mut out = AnalysisOutcome::default();
    for ((model, qid, fid, name, _), r) in cells.iter().zip(results) {
        let model: &String = model;
        match r {
            Ok(a) => out.records.push(AnalysisRecord::new(model, name, &a)),
            Err(e) => out
                .skipped
                .push((model.clone(), format!("{qid}/{fid}"), e.to_string())),
        }
    }
    out
}

/// Response and utterance counts for a loaded run.
#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct RunCounts {
    pub utterances: usize,
    /// (questionnaire, stage) → answered responses.
    pub responses: BTreeMap<(String, u8), usize>,
    pub missing: usize,
}

pub fn count_records(run: &LoadedRun) -> RunCounts {
    let mut counts = RunCounts {
        utterances: run.conversation_logs().values().map(|l| l.utterances.len()).sum(),
        ..RunCounts::default()
    };
    for r in &run.responses {
        match r.status {
            ResponseStatus::Ok => {
                *counts
                    .responses
                    .entry((r.questionnaire_id.clone(), r.stage))
                    .or_default() += 1
            }
            ResponseStatus::Missing => counts.missing += 1,
        }
    }
    counts
}
