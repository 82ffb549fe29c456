//! Run persistence: one directory per run holding a JSON manifest and four
//! append-only JSON-lines streams.
//!
//! ```text
//! <run>/manifest.json
//! <run>/logs.jsonl        utterances
//! <run>/responses.jsonl   questionnaire answers (or a missing marker)
//! <run>/samples.jsonl     scored factor values
//! <run>/analyses.jsonl    per-factor test results
//! ```
//!
//! Each stream starts with a header line carrying `schema_version`. Records
//! are written with a single `write` of the full line, so a crash can at
//! worst leave a torn final line. Readers report such a line as corrupt and
//! skip it; writers truncate it before appending again.

use std::collections::{BTreeMap, HashMap, HashSet};
use std::fs::{File, OpenOptions};
use std::io::{Read, Seek, SeekFrom, Write};
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Mutex;

use serde::de::DeserializeOwned;
use serde::{Deserialize, Serialize};
use serde_json::Value;
use thiserror::Error;

use crate::protocol::{Agent, ConversationLog, Utterance, THEMES_PER_STAGE};
use crate::questionnaire::{participant_id, FactorSample};
use crate::report::AnalysisRecord;

pub const SCHEMA_MAJOR: u32 = 1;
pub const SCHEMA_VERSION: &str = "1.0";
pub const MANIFEST_FILE: &str = "manifest.json";

/// Test hook: abort the process part-way through the N-th append.
pub const FAULT_ENV: &str = "CONVDEPTH_FAULT_AFTER_APPENDS";

#[derive(Debug, Error)]
pub enum StoreError {
    #[error("run not found at {0}")]
    NotFound(PathBuf),
    #[error("a run already exists at {0}")]
    AlreadyExists(PathBuf),
    #[error("record for {stream} stream does not match its schema: {message}")]
    SchemaMismatch { stream: &'static str, message: String },
    #[error("{path}: schema version {found} is newer than supported major {SCHEMA_MAJOR}")]
    UnsupportedVersion { path: PathBuf, found: String },
    #[error("storage failure at {path}: {source}")]
    Storage {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
    #[error("manifest {path} is unreadable: {message}")]
    BadManifest { path: PathBuf, message: String },
    #[error("status of session {session} cannot move from {from:?} to {to:?}")]
    StatusRegression {
        session: String,
        from: SessionStatus,
        to: SessionStatus,
    },
}

type Result<T, E = StoreError> = std::result::Result<T, E>;

fn storage(path: &Path) -> impl FnOnce(std::io::Error) -> StoreError + '_ {
    move |source| StoreError::Storage {
        path: path.to_path_buf(),
        source,
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Stream {
    Logs,
    Responses,
    Samples,
    Analyses,
}

impl Stream {
    pub const ALL: [Stream; 4] = [Stream::Logs, Stream::Responses, Stream::Samples, Stream::Analyses];

    pub fn name(self) -> &'static str {
        match self {
            Stream::Logs => "logs",
            Stream::Responses => "responses",
            Stream::Samples => "samples",
            Stream::Analyses => "analyses",
        }
    }

    pub fn file_name(self) -> String {
        format!("{}.jsonl", self.name())
    }

    fn required_fields(self) -> &'static [&'static str] {
        match self {
            Stream::Logs => &["session_id", "model_id", "theme_index", "agent", "text", "turn_order"],
            Stream::Responses => &[
                "model_id",
                "session_id",
                "participant_id",
                "questionnaire_id",
                "stage",
                "repetition",
                "status",
            ],
            Stream::Samples => &[
                "model_id",
                "session_id",
                "participant_id",
                "stage",
                "repetition",
                "questionnaire_id",
                "factor_id",
                "value",
            ],
            Stream::Analyses => &["model_id", "questionnaire_id", "factor_id", "trend"],
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum SessionStatus {
    Pending,
    Partial,
    Complete,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SessionEntry {
    pub session_id: String,
    pub model_id: String,
    pub seed: u64,
    pub status: SessionStatus,
}

/// Settings frozen into the manifest when a run is created.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunConfig {
    pub model_ids: Vec<String>,
    pub sessions_per_model: u32,
    pub repetitions: u32,
    pub conversation_temperature: f64,
    pub probe_temperature: f64,
    pub alpha: f64,
    pub master_seed: u64,
    pub max_reasks: u32,
    pub theme_count: usize,
    pub themes_digest: String,
    pub questionnaire_ids: Vec<String>,
    pub questionnaires_digest: String,
    /// Backend settings as configured (credential variable name only).
    pub backend: Value,
}

impl RunConfig {
    /// Snapshot stages reachable with this many themes.
    pub fn stages(&self) -> u8 {
        (self.theme_count / THEMES_PER_STAGE) as u8
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunManifest {
    pub schema_version: String,
    pub run_id: String,
    pub created_unix: u64,
    pub config: RunConfig,
    pub sessions: Vec<SessionEntry>,
}

impl RunManifest {
    pub fn new(run_id: impl Into<String>, config: RunConfig, sessions: Vec<SessionEntry>) -> Self {
        Self {
            schema_version: SCHEMA_VERSION.to_string(),
            run_id: run_id.into(),
            created_unix: std::time::SystemTime::now()
                .duration_since(std::time::UNIX_EPOCH)
                .map_or(0, |d| d.as_secs()),
            config,
            sessions,
        }
    }

    pub fn session(&self, session_id: &str) -> Option<&SessionEntry> {
        self.sessions.iter().find(|s| s.session_id == session_id)
    }

    pub fn utterances_per_session(&self) -> usize {
        2 * self.config.theme_count
    }

    fn set_status(&mut self, session_id: &str, to: SessionStatus) -> Result<bool> {
        let Some(entry) = self.sessions.iter_mut().find(|s| s.session_id == session_id) else {
            return Ok(false);
        };
        if to < entry.status {
            return Err(StoreError::StatusRegression {
                session: session_id.to_string(),
                from: entry.status,
                to,
            });
        }
        let changed = to != entry.status;
        entry.status = to;
        Ok(changed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LogRecord {
    pub session_id: String,
    pub model_id: String,
    pub theme_index: usize,
    pub agent: Agent,
    pub text: String,
    pub turn_order: u32,
}

impl LogRecord {
    pub fn new(log: &ConversationLog, u: &Utterance) -> Self {
        Self {
            session_id: log.session_id.clone(),
            model_id: log.model_id.clone(),
            theme_index: u.theme_index,
            agent: u.agent,
            text: u.text.clone(),
            turn_order: u.turn_order,
        }
    }

    pub fn utterance(&self) -> Utterance {
        Utterance {
            theme_index: self.theme_index,
            agent: self.agent,
            text: self.text.clone(),
            turn_order: self.turn_order,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum ResponseStatus {
    Ok,
    Missing,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ResponseRecord {
    pub model_id: String,
    pub session_id: String,
    pub participant_id: String,
    pub questionnaire_id: String,
    pub stage: u8,
    pub repetition: u32,
    pub status: ResponseStatus,
    /// Requests issued, including re-asks.
    pub attempts: u32,
    pub item_permutation: Vec<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub answers: Option<BTreeMap<String, i64>>,
    /// Reply text of the last attempt.
    pub raw_text: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub error: Option<String>,
}

#[derive(Debug, Serialize, Deserialize)]
struct StreamHeader {
    schema_version: String,
    stream: Stream,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CorruptRecord {
    pub stream: Stream,
    /// Byte offset of the start of the bad line.
    pub offset: u64,
    pub reason: String,
}

fn check_version(path: &Path, version: &str) -> Result<()> {
    let major: u32 = version
        .split('.')
        .next()
        .and_then(|m| m.parse().ok())
        .ok_or_else(|| StoreError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version.to_string(),
        })?;
    if major > SCHEMA_MAJOR {
        return Err(StoreError::UnsupportedVersion {
            path: path.to_path_buf(),
            found: version.to_string(),
        });
    }
    Ok(())
}

fn read_manifest(dir: &Path) -> Result<RunManifest> {
    let path = dir.join(MANIFEST_FILE);
    if !path.exists() {
        return Err(StoreError::NotFound(dir.to_path_buf()));
    }
    let text = std::fs::read_to_string(&path).map_err(storage(&path))?;
    let raw: Value = serde_json::from_str(&text).map_err(|e| StoreError::BadManifest {
        path: path.clone(),
        message: e.to_string(),
    })?;
    if let Some(v) = raw.get("schema_version").and_then(Value::as_str) {
        check_version(&path, v)?;
    }
    serde_json::from_value(raw).map_err(|e| StoreError::BadManifest {
        path,
        message: e.to_string(),
    })
}

fn write_atomically(path: &Path, bytes: &[u8]) -> Result<()> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = File::create(&tmp).map_err(storage(&tmp))?;
        f.write_all(bytes).map_err(storage(&tmp))?;
        f.sync_all().map_err(storage(&tmp))?;
    }
    std::fs::rename(&tmp, path).map_err(storage(path))?;
    if let Some(parent) = path.parent() {
        // persist the rename itself; not supported everywhere, so best effort
        if let Ok(d) = File::open(parent) {
            let _ = d.sync_all();
        }
    }
    Ok(())
}

fn header_line(stream: Stream) -> String {
    let h = StreamHeader {
        schema_version: SCHEMA_VERSION.to_string(),
        stream,
    };
    format!("{}\n", serde_json::to_string(&h).expect("header serializes"))
}

/// Parsed records of one stream plus any lines that failed to parse.
fn read_stream<R: DeserializeOwned>(dir: &Path, stream: Stream) -> Result<(Vec<R>, Vec<CorruptRecord>)> {
    let path = dir.join(stream.file_name());
    let bytes = match std::fs::read(&path) {
        Ok(b) => b,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => return Ok((Vec::new(), Vec::new())),
        Err(e) => return Err(storage(&path)(e)),
    };
    let mut records = Vec::new();
    let mut corrupt = Vec::new();
    let mut offset = 0usize;
    let mut first = true;
    while offset < bytes.len() {
        let (line, next, complete) = match bytes[offset..].iter().position(|&b| b == b'\n') {
            Some(i) => (&bytes[offset..offset + i], offset + i + 1, true),
            None => (&bytes[offset..], bytes.len(), false),
        };
        let bad = |reason: String| CorruptRecord {
            stream,
            offset: offset as u64,
            reason,
        };
        if !complete {
            corrupt.push(bad("torn final record".into()));
        } else if first {
            match serde_json::from_slice::<StreamHeader>(line) {
                Ok(h) => check_version(&path, &h.schema_version)?,
                Err(e) => corrupt.push(bad(format!("bad header: {e}"))),
            }
        } else if !line.iter().all(u8::is_ascii_whitespace) {
            match serde_json::from_slice::<R>(line) {
                Ok(r) => records.push(r),
                Err(e) => corrupt.push(bad(e.to_string())),
            }
        }
        first = false;
        offset = next;
    }
    Ok((records, corrupt))
}

/// Everything persisted for one run.
#[derive(Debug, Clone, PartialEq)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub logs: Vec<LogRecord>,
    pub responses: Vec<ResponseRecord>,
    pub samples: Vec<FactorSample>,
    pub analyses: Vec<AnalysisRecord>,
    pub corrupt: Vec<CorruptRecord>,
}

/// Reads the manifest and all streams of the run in `dir`.
pub fn load_run(dir: &Path) -> Result<LoadedRun> {
    let manifest = read_manifest(dir)?;
    let (logs, mut corrupt) = read_stream(dir, Stream::Logs)?;
    let (responses, c) = read_stream(dir, Stream::Responses)?;
    corrupt.extend(c);
    let (samples, c) = read_stream(dir, Stream::Samples)?;
    corrupt.extend(c);
    let (analyses, c) = read_stream(dir, Stream::Analyses)?;
    corrupt.extend(c);
    Ok(LoadedRun {
        dir: dir.to_path_buf(),
        manifest,
        logs,
        responses,
        samples,
        analyses,
        corrupt,
    })
}

impl LoadedRun {
    /// Conversation logs rebuilt from the log stream, keyed by session id.
    /// Records are kept in file order; the first copy of a duplicate wins.
    pub fn conversation_logs(&self) -> BTreeMap<String, ConversationLog> {
        let mut out: BTreeMap<String, ConversationLog> = self
            .manifest
            .sessions
            .iter()
            .map(|s| {
                (
                    s.session_id.clone(),
                    ConversationLog::new(&s.session_id, &s.model_id, s.seed),
                )
            })
            .collect();
        let mut seen = HashSet::new();
        for r in &self.logs {
            if !seen.insert((r.session_id.as_str(), r.theme_index, r.agent)) {
                continue;
            }
            if let Some(log) = out.get_mut(&r.session_id) {
                log.utterances.push(r.utterance());
            }
        }
        out
    }

    /// Sessions that have started but not finished, with their last fully
    /// answered theme.
    pub fn partial_sessions(&self) -> Vec<(String, usize)> {
        let full = self.manifest.config.theme_count;
        self.conversation_logs()
            .into_values()
            .filter(|l| !l.utterances.is_empty() && !l.is_complete(full))
            .map(|l| {
                let t = l.last_complete_theme();
                (l.session_id, t)
            })
            .collect()
    }

    /// Keys that occur more than once in the logs, responses or samples.
    pub fn duplicate_keys(&self) -> Vec<String> {
        let mut dups = Vec::new();
        let mut seen = HashSet::new();
        for r in &self.logs {
            let key = format!("logs {} theme {} agent {}", r.session_id, r.theme_index, r.agent);
            if !seen.insert(key.clone()) {
                dups.push(key);
            }
        }
        for r in &self.responses {
            let key = format!(
                "responses {} stage {} {} rep {}",
                r.participant_id, r.stage, r.questionnaire_id, r.repetition
            );
            if !seen.insert(key.clone()) {
                dups.push(key);
            }
        }
        for s in &self.samples {
            let key = format!(
                "samples {} stage {} {}/{} rep {}",
                s.participant_id, s.stage, s.questionnaire_id, s.factor_id, s.repetition
            );
            if !seen.insert(key.clone()) {
                dups.push(key);
            }
        }
        dups
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum WorkItem {
    Conversation {
        session_id: String,
        theme_index: usize,
    },
    Probe {
        session_id: String,
        participant_id: String,
        stage: u8,
        questionnaire_id: String,
        repetition: u32,
    },
}

/// Every conversation and probe unit of the run that has no record yet.
///
/// A conversation unit (session, theme) is done when both agents' answers
/// are stored; a probe unit is done once any response record exists for it,
/// including a record marking the repetition missing.
pub fn resume_plan(run: &LoadedRun) -> Vec<WorkItem> {
    let cfg = &run.manifest.config;
    let logs = run.conversation_logs();
    let answered: HashSet<(&str, u8, &str, u32)> = run
        .responses
        .iter()
        .map(|r| {
            (
                r.participant_id.as_str(),
                r.stage,
                r.questionnaire_id.as_str(),
                r.repetition,
            )
        })
        .collect();
    let mut plan = Vec::new();
    for s in &run.manifest.sessions {
        let done = logs.get(&s.session_id).map_or(0, |l| l.last_complete_theme());
        for theme_index in done + 1..=cfg.theme_count {
            plan.push(WorkItem::Conversation {
                session_id: s.session_id.clone(),
                theme_index,
            });
        }
        for agent in Agent::BOTH {
            let pid = participant_id(&s.session_id, agent);
            for stage in 1..=cfg.stages() {
                for qid in &cfg.questionnaire_ids {
                    for rep in 1..=cfg.repetitions {
                        if !answered.contains(&(pid.as_str(), stage, qid.as_str(), rep)) {
                            plan.push(WorkItem::Probe {
                                session_id: s.session_id.clone(),
                                participant_id: pid.clone(),
                                stage,
                                questionnaire_id: qid.clone(),
                                repetition: rep,
                            });
                        }
                    }
                }
            }
        }
    }
    plan
}

static APPENDS: AtomicU64 = AtomicU64::new(0);

/// Appender for one run. Shareable across threads; all appends go through a
/// single lock.
#[derive(Debug)]
pub struct RunStore {
    dir: PathBuf,
    manifest: Mutex<RunManifest>,
    files: Mutex<HashMap<Stream, File>>,
    utterances: Mutex<HashMap<String, usize>>,
    fault_after: Option<u64>,
}

impl RunStore {
    /// Creates a new run directory. Fails if a manifest already exists.
    pub fn create(dir: &Path, manifest: RunManifest) -> Result<Self> {
        if dir.join(MANIFEST_FILE).exists() {
            return Err(StoreError::AlreadyExists(dir.to_path_buf()));
        }
        std::fs::create_dir_all(dir).map_err(storage(dir))?;
        for stream in Stream::ALL {
            let path = dir.join(stream.file_name());
            write_atomically(&path, header_line(stream).as_bytes())?;
        }
        let bytes = serde_json::to_vec_pretty(&manifest).expect("manifest serializes");
        write_atomically(&dir.join(MANIFEST_FILE), &bytes)?;
        Self::open(dir)
    }

    /// Opens an existing run for appending, repairing torn final records
    /// and reconciling session statuses with the log stream.
    pub fn open(dir: &Path) -> Result<Self> {
        let manifest = read_manifest(dir)?;
        let mut files = HashMap::new();
        for stream in Stream::ALL {
            files.insert(stream, open_for_append(dir, stream)?);
        }
        let (logs, _) = read_stream::<LogRecord>(dir, Stream::Logs)?;
        let mut seen = HashSet::new();
        let mut utterances: HashMap<String, usize> = HashMap::new();
        for r in &logs {
            if seen.insert((r.session_id.clone(), r.theme_index, r.agent)) {
                *utterances.entry(r.session_id.clone()).or_default() += 1;
            }
        }
        let fault_after = std::env::var(FAULT_ENV).ok().and_then(|v| v.parse().ok());
        let store = Self {
            dir: dir.to_path_buf(),
            manifest: Mutex::new(manifest),
            files: Mutex::new(files),
            utterances: Mutex::new(utterances),
            fault_after,
        };
        store.reconcile()?;
        Ok(store)
    }

    pub fn dir(&self) -> &Path {
        &self.dir
    }

    pub fn manifest(&self) -> RunManifest {
        self.manifest.lock().unwrap_or_else(|e| e.into_inner()).clone()
    }

    fn reconcile(&self) -> Result<()> {
        let counts = self.utterances.lock().unwrap_or_else(|e| e.into_inner()).clone();
        let mut m = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
        let full = m.utterances_per_session();
        let mut changed = false;
        let ids: Vec<String> = m.sessions.iter().map(|s| s.session_id.clone()).collect();
        for id in ids {
            let n = counts.get(&id).copied().unwrap_or(0);
            let status = status_for(n, full);
            let current = m.session(&id).map(|s| s.status).unwrap_or(SessionStatus::Pending);
            if status > current {
                changed |= m.set_status(&id, status)?;
            }
        }
        if changed {
            self.persist_manifest(&m)?;
        }
        Ok(())
    }

    fn persist_manifest(&self, m: &RunManifest) -> Result<()> {
        let bytes = serde_json::to_vec_pretty(m).expect("manifest serializes");
        write_atomically(&self.dir.join(MANIFEST_FILE), &bytes)
    }

    /// Validates and appends one record.
    pub fn append<R: Serialize>(&self, stream: Stream, record: &R) -> Result<()> {
        let value = serde_json::to_value(record).map_err(|e| StoreError::SchemaMismatch {
            stream: stream.name(),
            message: e.to_string(),
        })?;
        self.append_value(stream, &value)
    }

    pub fn append_value(&self, stream: Stream, value: &Value) -> Result<()> {
        validate_record(stream, value)?;
        let mut line = serde_json::to_string(value).expect("JSON value serializes");
        line.push('\n');
        {
            let mut files = self.files.lock().unwrap_or_else(|e| e.into_inner());
            let file = files.get_mut(&stream).expect("all streams are open");
            let n = APPENDS.fetch_add(1, Ordering::SeqCst) + 1;
            if self.fault_after == Some(n) {
                let half = &line.as_bytes()[..line.len() / 2];
                let _ = file.write_all(half);
                let _ = file.sync_all();
                std::process::abort();
            }
            let path = self.dir.join(stream.file_name());
            file.write_all(line.as_bytes()).map_err(storage(&path))?;
        }
        if stream == Stream::Logs {
            let session = value["session_id"].as_str().unwrap_or_default().to_string();
            let n = {
                let mut counts = self.utterances.lock().unwrap_or_else(|e| e.into_inner());
                let c = counts.entry(session.clone()).or_default();
                *c += 1;
                *c
            };
            let mut m = self.manifest.lock().unwrap_or_else(|e| e.into_inner());
            let status = status_for(n, m.utterances_per_session());
            if m.set_status(&session, status)? {
                self.persist_manifest(&m)?;
            }
        }
        Ok(())
    }

    /// Forces appended data to stable storage.
    pub fn sync(&self) -> Result<()> {
        let files = self.files.lock().unwrap_or_else(|e| e.into_inner());
        for (stream, f) in files.iter() {
            f.sync_data()
                .map_err(storage(&self.dir.join(stream.file_name())))?;
        }
        Ok(())
    }

    /// Atomically replaces a derived stream (analyses) with `records`.
    pub fn replace<R: Serialize>(&self, stream: Stream, records: &[R]) -> Result<()> {
        let mut out = header_line(stream);
        for r in records {
            let value = serde_json::to_value(r).map_err(|e| StoreError::SchemaMismatch {
                stream: stream.name(),
                message: e.to_string(),
            })?;
            validate_record(stream, &value)?;
            out.push_str(&serde_json::to_string(&value).expect("JSON value serializes"));
            out.push('\n');
        }
        let mut files = self.files.lock().unwrap_or_else(|e| e.into_inner());
        let path = self.dir.join(stream.file_name());
        write_atomically(&path, out.as_bytes())?;
        files.insert(stream, open_for_append(&self.dir, stream)?);
        Ok(())
    }
}

fn status_for(utterances: usize, full: usize) -> SessionStatus {
    if utterances == 0 {
        SessionStatus::Pending
    } else if utterances >= full {
        SessionStatus::Complete
    } else {
        SessionStatus::Partial
    }
}

fn validate_record(stream: Stream, value: &Value) -> Result<()> {
    let mismatch = |message: String| StoreError::SchemaMismatch {
        stream: stream.name(),
        message,
    };
    let obj = value
        .as_object()
        .ok_or_else(|| mismatch("record is not an object".into()))?;
    for field in stream.required_fields() {
        match obj.get(*field) {
            None | Some(Value::Null) => return Err(mismatch(format!("missing field {field}"))),
            _ => {}
        }
    }
    Ok(())
}

/// Opens a stream for appending, truncating a torn final line and writing
/// the header if the file is new or empty.
fn open_for_append(dir: &Path, stream: Stream) -> Result<File> {
    let path = dir.join(stream.file_name());
    let mut f = OpenOptions::new()
        .read(true)
        .append(true)
        .create(true)
        .open(&path)
        .map_err(storage(&path))?;
    let mut bytes = Vec::new();
    f.read_to_end(&mut bytes).map_err(storage(&path))?;
    let keep = match bytes.iter().rposition(|&b| b == b'\n') {
        Some(i) => i + 1,
        None => 0,
    };
    if keep < bytes.len() {
        tracing::warn!(stream = stream.name(), offset = keep, "truncating torn final record");
        f.set_len(keep as u64).map_err(storage(&path))?;
        f.seek(SeekFrom::End(0)).map_err(storage(&path))?;
    }
    if keep == 0 {
        f.write_all(header_line(stream).as_bytes()).map_err(storage(&path))?;
    }
    Ok(f)
}
