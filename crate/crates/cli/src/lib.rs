//! `convdepth` command-line surface.
//!
//! Settings come from an optional TOML config, then from the manifest of an
//! existing run, then from flags; later sources win.

use std::path::{Path, PathBuf};

use clap::{Args, Parser, Subcommand};
use serde::{Deserialize, Serialize};

use convdepth_core::experiment::{
    analyze_run, count_records, execute, ExperimentSettings, DEFAULT_ALPHA,
    DEFAULT_SESSIONS_PER_MODEL,
};
use convdepth_core::gateway::{Backend, BackendConfig, BackendKind};
use convdepth_core::protocol::{
    default_themes, load_themes, validate_log_with, Theme, DEFAULT_CONVERSATION_TEMPERATURE,
};
use convdepth_core::questionnaire::{
    builtin_questionnaires, load_dir, QuestionnaireSpec, DEFAULT_MAX_REASKS,
    DEFAULT_PROBE_TEMPERATURE, DEFAULT_REPETITIONS,
};
use convdepth_core::report::{
    analyses_csv, render_trend_table, trend_table_csv, AnalysisRecord, ReferenceGrid,
};
use convdepth_core::store::{load_run, RunStore, Stream, MANIFEST_FILE};
use convdepth_core::topics::{
    assignments_csv, build_topic_model, extract_utterances, render_topic_report, topics_csv,
    vectorize, Embedder, TopicSettings, DEFAULT_TOP_N,
};
use convdepth_core::Exec;

pub const EXIT_OK: i32 = 0;
pub const EXIT_DOMAIN: i32 = 1;
pub const EXIT_USAGE: i32 = 2;

pub const TREND_TABLE_TXT: &str = "trend_table.txt";
pub const TREND_TABLE_CSV: &str = "trend_table.csv";
pub const ANALYSES_CSV: &str = "analyses.csv";
pub const TOPICS_TXT: &str = "topics.txt";
pub const TOPICS_CSV: &str = "topics.csv";
pub const ASSIGNMENTS_CSV: &str = "topic_assignments.csv";

#[derive(Debug, Parser)]
#[command(name = "convdepth", version, about = "Psychometric probing of two-agent LLM conversations")]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Generate conversations and administer questionnaires (resumable).
    Run(CommonArgs),
    /// Run the statistical pipeline over a run's samples.
    Analyze(CommonArgs),
    /// Cluster a run's utterances into topics.
    Topics(TopicArgs),
    /// Render the trend table of an analysed run.
    Report(ReportArgs),
    /// Check a configuration and, with --run, the stored data.
    Validate(CommonArgs),
}

#[derive(Debug, Clone, Default, Args)]
pub struct CommonArgs {
    /// TOML configuration file.
    #[arg(long)]
    pub config: Option<PathBuf>,
    /// Run directory.
    #[arg(long)]
    pub run: Option<PathBuf>,
    /// Comma-separated model ids.
    #[arg(long, value_delimiter = ',')]
    pub models: Option<Vec<String>>,
    /// Sessions per model.
    #[arg(long)]
    pub sessions: Option<u32>,
    /// Questionnaire repetitions per snapshot.
    #[arg(long)]
    pub repetitions: Option<u32>,
    /// Master seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Significance level.
    #[arg(long)]
    pub alpha: Option<f64>,
    /// Backend kind: mock or remote.
    #[arg(long)]
    pub backend: Option<BackendKind>,
    /// Mock backend script.
    #[arg(long)]
    pub mock_script: Option<PathBuf>,
    /// Comma-separated questionnaire ids (default: all).
    #[arg(long, value_delimiter = ',')]
    pub questionnaires: Option<Vec<String>>,
    /// Run on the calling thread only.
    #[arg(long)]
    pub sequential: bool,
}

#[derive(Debug, Clone, Args)]
pub struct TopicArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// Number of clusters (default: one per 72 utterances, at least 2).
    #[arg(long)]
    pub k: Option<usize>,
    /// Keywords per topic.
    #[arg(long)]
    pub top_n: Option<usize>,
    /// Topics listed per model.
    #[arg(long)]
    pub top_m: Option<usize>,
    /// tfidf or remote.
    #[arg(long)]
    pub embedder: Option<Embedder>,
}

#[derive(Debug, Clone, Args)]
pub struct ReportArgs {
    #[command(flatten)]
    pub common: CommonArgs,
    /// CSV of reference trends (model_id,questionnaire_id,factor_id,trend);
    /// differing cells are footnoted.
    #[arg(long)]
    pub reference: Option<PathBuf>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TopicConfig {
    #[serde(default)]
    pub k: Option<usize>,
    #[serde(default)]
    pub seed: Option<u64>,
    #[serde(default = "default_top_n")]
    pub top_n: usize,
    #[serde(default = "default_top_n")]
    pub top_m: usize,
    #[serde(default = "default_embedder")]
    pub embedder: Embedder,
    #[serde(default)]
    pub embedding_model: Option<String>,
}

fn default_top_n() -> usize {
    DEFAULT_TOP_N
}

fn default_embedder() -> Embedder {
    Embedder::TfidfFallback
}

impl Default for TopicConfig {
    fn default() -> Self {
        Self {
            k: None,
            seed: None,
            top_n: DEFAULT_TOP_N,
            top_m: DEFAULT_TOP_N,
            embedder: Embedder::TfidfFallback,
            embedding_model: None,
        }
    }
}

/// Experiment configuration file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    pub backend: BackendConfig,
    #[serde(default)]
    pub model_ids: Vec<String>,
    #[serde(default = "default_sessions")]
    pub sessions_per_model: u32,
    #[serde(default = "default_repetitions")]
    pub repetitions: u32,
    #[serde(default = "default_conversation_temperature")]
    pub conversation_temperature: f64,
    #[serde(default)]
    pub probe_temperature: f64,
    #[serde(default = "default_alpha")]
    pub alpha: f64,
    #[serde(default)]
    pub master_seed: u64,
    #[serde(default = "default_max_reasks")]
    pub max_reasks: u32,
    /// One theme per line; the built-in list when absent.
    #[serde(default)]
    pub themes_path: Option<PathBuf>,
    /// Directory of questionnaire JSON files; the built-ins when absent.
    #[serde(default)]
    pub questionnaire_dir: Option<PathBuf>,
    /// Subset of questionnaire ids; all when absent.
    #[serde(default)]
    pub questionnaires: Option<Vec<String>>,
    #[serde(default)]
    pub run_dir: Option<PathBuf>,
    #[serde(default)]
    pub exec: Exec,
    #[serde(default)]
    pub topics: TopicConfig,
}

fn default_sessions() -> u32 {
    DEFAULT_SESSIONS_PER_MODEL
}

fn default_repetitions() -> u32 {
    DEFAULT_REPETITIONS
}

fn default_conversation_temperature() -> f64 {
    DEFAULT_CONVERSATION_TEMPERATURE
}

fn default_alpha() -> f64 {
    DEFAULT_ALPHA
}

fn default_max_reasks() -> u32 {
    DEFAULT_MAX_REASKS
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        Self {
            backend: BackendConfig::mock(None),
            model_ids: Vec::new(),
            sessions_per_model: DEFAULT_SESSIONS_PER_MODEL,
            repetitions: DEFAULT_REPETITIONS,
            conversation_temperature: DEFAULT_CONVERSATION_TEMPERATURE,
            probe_temperature: DEFAULT_PROBE_TEMPERATURE,
            alpha: DEFAULT_ALPHA,
            master_seed: 0,
            max_reasks: DEFAULT_MAX_REASKS,
            themes_path: None,
            questionnaire_dir: None,
            questionnaires: None,
            run_dir: None,
            exec: Exec::default(),
            topics: TopicConfig::default(),
        }
    }
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, String> {
        toml::from_str(text).map_err(|e| e.to_string())
    }

    pub fn load(path: &Path) -> Result<Self, String> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| format!("cannot read config {}: {e}", path.display()))?;
        let mut cfg = Self::from_toml(&text).map_err(|e| format!("{}: {e}", path.display()))?;
        // relative paths in the file are relative to the file
        let base = path.parent().unwrap_or(Path::new("."));
        for p in [
            &mut cfg.themes_path,
            &mut cfg.questionnaire_dir,
            &mut cfg.run_dir,
            &mut cfg.backend.mock_script,
        ] {
            if let Some(rel) = p.as_ref().filter(|p| p.is_relative()) {
                *p = Some(base.join(rel));
            }
        }
        Ok(cfg)
    }

    fn apply_manifest(&mut self, m: &convdepth_core::store::RunManifest) -> Result<(), String> {
        let c = &m.config;
        self.model_ids = c.model_ids.clone();
        self.sessions_per_model = c.sessions_per_model;
        self.repetitions = c.repetitions;
        self.conversation_temperature = c.conversation_temperature;
        self.probe_temperature = c.probe_temperature;
        self.alpha = c.alpha;
        self.master_seed = c.master_seed;
        self.max_reasks = c.max_reasks;
        self.questionnaires = Some(c.questionnaire_ids.clone());
        self.backend = serde_json::from_value(c.backend.clone())
            .map_err(|e| format!("run manifest has an unreadable backend section: {e}"))?;
        Ok(())
    }

    fn apply_flags(&mut self, a: &CommonArgs) {
        if let Some(m) = &a.models {
            self.model_ids = m.clone();
        }
        if let Some(v) = a.sessions {
            self.sessions_per_model = v;
        }
        if let Some(v) = a.repetitions {
            self.repetitions = v;
        }
        if let Some(v) = a.seed {
            self.master_seed = v;
        }
        if let Some(v) = a.alpha {
            self.alpha = v;
        }
        if let Some(kind) = a.backend {
            if kind != self.backend.kind {
                self.backend = match kind {
                    BackendKind::Mock => BackendConfig::mock(None),
                    BackendKind::Remote => BackendConfig {
                        kind,
                        mock_script: None,
                        ..self.backend.clone()
                    },
                };
            }
        }
        if let Some(p) = &a.mock_script {
            self.backend.mock_script = Some(p.clone());
        }
        if let Some(q) = &a.questionnaires {
            self.questionnaires = Some(q.clone());
        }
        if let Some(r) = &a.run {
            self.run_dir = Some(r.clone());
        }
        if a.sequential {
            self.exec = Exec::Sequential;
        }
    }

    pub fn themes(&self) -> Result<Vec<Theme>, String> {
        match &self.themes_path {
            Some(p) => load_themes(p).map_err(|e| e.to_string()),
            None => Ok(default_themes()),
        }
    }

    pub fn questionnaire_specs(&self) -> Result<Vec<QuestionnaireSpec>, String> {
        let all = match &self.questionnaire_dir {
            Some(d) => load_dir(d).map_err(|e| e.to_string())?,
            None => builtin_questionnaires().to_vec(),
        };
        match &self.questionnaires {
            Some(ids) => convdepth_core::questionnaire::select(&all, ids).map_err(|e| e.to_string()),
            None => Ok(all),
        }
    }

    pub fn settings(&self) -> Result<ExperimentSettings, String> {
        let mut s = ExperimentSettings::new(
            self.model_ids.clone(),
            self.themes()?,
            self.questionnaire_specs()?,
        );
        s.sessions_per_model = self.sessions_per_model;
        s.repetitions = self.repetitions;
        s.conversation_temperature = self.conversation_temperature;
        s.probe_temperature = self.probe_temperature;
        s.alpha = self.alpha;
        s.master_seed = self.master_seed;
        s.max_reasks = self.max_reasks;
        s.exec = self.exec;
        s.validate().map_err(|e| e.to_string())?;
        Ok(s)
    }

    pub fn run_dir(&self) -> Result<&Path, String> {
        self.run_dir
            .as_deref()
            .ok_or_else(|| "no run directory: pass --run or set run_dir".to_string())
    }
}

/// Config file, then the run manifest (if the run exists), then flags.
pub fn resolve_config(a: &CommonArgs) -> Result<ExperimentConfig, String> {
    let mut cfg = match &a.config {
        Some(p) => ExperimentConfig::load(p)?,
        None => ExperimentConfig::default(),
    };
    let run_dir = a.run.clone().or_else(|| cfg.run_dir.clone());
    if a.config.is_none() {
        if let Some(dir) = run_dir.as_deref().filter(|d| d.join(MANIFEST_FILE).exists()) {
            let loaded = load_run(dir).map_err(|e| e.to_string())?;
            cfg.apply_manifest(&loaded.manifest)?;
        }
    }
    cfg.apply_flags(a);
    Ok(cfg)
}

#[derive(Debug)]
enum CliError {
    Usage(String),
    Domain(String),
}

impl From<String> for CliError {
    fn from(s: String) -> Self {
        CliError::Domain(s)
    }
}

type CliResult = Result<i32, CliError>;

/// Parses `argv` (including the program name) and runs the subcommand.
/// Output goes to stdout, diagnostics to stderr.
pub fn execute_command<I, T>(argv: I) -> i32
where
    I: IntoIterator<Item = T>,
    T: Into<std::ffi::OsString> + Clone,
{
    let cli = match Cli::try_parse_from(argv) {
        Ok(c) => c,
        Err(e) => {
            let code = if e.use_stderr() { EXIT_USAGE } else { EXIT_OK };
            let _ = e.print();
            return code;
        }
    };
    let result = match cli.command {
        Command::Run(a) => cmd_run(&a),
        Command::Analyze(a) => cmd_analyze(&a),
        Command::Topics(a) => cmd_topics(&a),
        Command::Report(a) => cmd_report(&a),
        Command::Validate(a) => cmd_validate(&a),
    };
    match result {
        Ok(code) => code,
        Err(CliError::Usage(msg)) => {
            eprintln!("error: {msg}\n\n{}", synopsis());
            EXIT_USAGE
        }
        Err(CliError::Domain(msg)) => {
            eprintln!("error: {msg}");
            EXIT_DOMAIN
        }
    }
}

fn synopsis() -> String {
    use clap::CommandFactory;
    Cli::command().render_usage().to_string()
}

fn require_run(cfg: &ExperimentConfig) -> Result<PathBuf, CliError> {
    cfg.run_dir()
        .map(Path::to_path_buf)
        .map_err(|_| CliError::Usage("a run directory is required (--run or run_dir in the config)".into()))
}

fn write_file(path: &Path, contents: &str) -> Result<(), String> {
    std::fs::write(path, contents).map_err(|e| format!("cannot write {}: {e}", path.display()))
}

fn backend_value(cfg: &BackendConfig) -> serde_json::Value {
    serde_json::to_value(cfg).expect("backend config serializes")
}

fn cmd_run(a: &CommonArgs) -> CliResult {
    let cfg = resolve_config(a)?;
    let dir = require_run(&cfg)?;
    if cfg.model_ids.is_empty() {
        return Err(CliError::Usage("no models given (--models or model_ids)".into()));
    }
    let settings = cfg.settings()?;
    cfg.backend.validate().map_err(|e| e.to_string())?;
    let backend = Backend::from_config(&cfg.backend).map_err(|e| e.to_string())?;
    let store = if dir.join(MANIFEST_FILE).exists() {
        RunStore::open(&dir).map_err(|e| e.to_string())?
    } else {
        let run_id = dir
            .file_name()
            .map_or("run".to_string(), |n| n.to_string_lossy().into_owned());
        RunStore::create(&dir, settings.manifest(&run_id, backend_value(&cfg.backend)))
            .map_err(|e| e.to_string())?
    };
    let summary = execute(&store, &settings, &backend).map_err(|e| e.to_string())?;
    println!(
        "utterances written: {}\nresponses: {} answered, {} missing\nsamples written: {} (+{} backfilled)",
        summary.utterances_written,
        summary.responses_ok,
        summary.responses_missing,
        summary.samples_written,
        summary.samples_backfilled
    );
    if summary.failures.is_empty() {
        println!("run complete: {}", dir.display());
        Ok(EXIT_OK)
    } else {
        for (session, reason) in &summary.failures {
            eprintln!("session {session} incomplete: {reason}");
        }
        eprintln!("{} session(s) incomplete; rerun to resume", summary.failures.len());
        Ok(EXIT_DOMAIN)
    }
}

fn cmd_analyze(a: &CommonArgs) -> CliResult {
    let cfg = resolve_config(a)?;
    let dir = require_run(&cfg)?;
    let store = RunStore::open(&dir).map_err(|e| e.to_string())?;
    let run = load_run(&dir).map_err(|e| e.to_string())?;
    let specs = cfg.questionnaire_specs()?;
    if !(cfg.alpha > 0.0 && cfg.alpha < 1.0) {
        return Err(CliError::Domain("alpha must lie in (0, 1)".into()));
    }
    let outcome = analyze_run(&run, &specs, cfg.alpha, cfg.exec);
    store
        .replace(Stream::Analyses, &outcome.records)
        .map_err(|e| e.to_string())?;
    for (model, cell, reason) in &outcome.skipped {
        eprintln!("skipped {model} {cell}: {reason}");
    }
    let models = &run.manifest.config.model_ids;
    write_tables(&dir, &outcome.records, models, None)?;
    println!("{}", render_trend_table(&outcome.records, models, None));
    println!(
        "{} factor analyses written to {}",
        outcome.records.len(),
        dir.display()
    );
    Ok(EXIT_OK)
}

fn write_tables(
    dir: &Path,
    records: &[AnalysisRecord],
    models: &[String],
    reference: Option<&ReferenceGrid>,
) -> Result<(), String> {
    write_file(&dir.join(ANALYSES_CSV), &analyses_csv(records))?;
    write_file(&dir.join(TREND_TABLE_CSV), &trend_table_csv(records, models))?;
    write_file(
        &dir.join(TREND_TABLE_TXT),
        &render_trend_table(records, models, reference),
    )
}

fn cmd_topics(a: &TopicArgs) -> CliResult {
    let cfg = resolve_config(&a.common)?;
    let dir = require_run(&cfg)?;
    let run = load_run(&dir).map_err(|e| e.to_string())?;
    let logs: Vec<_> = run.conversation_logs().into_values().collect();
    let corpus = extract_utterances(&logs);
    if corpus.is_empty() {
        return Err(CliError::Domain("the run has no utterances yet".into()));
    }
    let embedder = a.embedder.unwrap_or(cfg.topics.embedder);
    let backend = match embedder {
        Embedder::RemoteEmbedding => {
            Some(Backend::from_config(&cfg.backend).map_err(|e| e.to_string())?)
        }
        Embedder::TfidfFallback => None,
    };
    let embedding_model = cfg
        .topics
        .embedding_model
        .clone()
        .or_else(|| cfg.model_ids.first().cloned())
        .unwrap_or_default();
    let vectors = vectorize(&corpus, embedder, backend.as_ref(), &embedding_model, cfg.exec)
        .map_err(|e| e.to_string())?;
    let settings = TopicSettings {
        k: a.k.or(cfg.topics.k),
        seed: cfg.topics.seed.unwrap_or(cfg.master_seed),
        top_n: a.top_n.unwrap_or(cfg.topics.top_n),
        embedder,
    };
    let model = build_topic_model(&corpus, &vectors, &settings, cfg.exec).map_err(|e| e.to_string())?;
    let top_m = a.top_m.unwrap_or(cfg.topics.top_m);
    let report = render_topic_report(&model, top_m);
    let models = corpus.model_ids();
    write_file(&dir.join(TOPICS_TXT), &report)?;
    write_file(&dir.join(TOPICS_CSV), &topics_csv(&model, &models))?;
    write_file(&dir.join(ASSIGNMENTS_CSV), &assignments_csv(&corpus, &model))?;
    print!("{report}");
    Ok(EXIT_OK)
}

fn cmd_report(a: &ReportArgs) -> CliResult {
    let cfg = resolve_config(&a.common)?;
    let dir = require_run(&cfg)?;
    let run = load_run(&dir).map_err(|e| e.to_string())?;
    if run.analyses.is_empty() {
        return Err(CliError::Domain(format!(
            "no analyses in {}; run `convdepth analyze` first",
            dir.display()
        )));
    }
    let reference = a
        .reference
        .as_deref()
        .map(ReferenceGrid::load)
        .transpose()?;
    let models = &run.manifest.config.model_ids;
    write_tables(&dir, &run.analyses, models, reference.as_ref())?;
    println!("{}", render_trend_table(&run.analyses, models, reference.as_ref()));
    let topics = dir.join(TOPICS_TXT);
    if topics.exists() {
        let text = std::fs::read_to_string(&topics)
            .map_err(|e| format!("cannot read {}: {e}", topics.display()))?;
        println!("\n{text}");
    }
    Ok(EXIT_OK)
}

fn cmd_validate(a: &CommonArgs) -> CliResult {
    let cfg = resolve_config(a)?;
    let mut problems = Vec::new();
    let themes = cfg.themes();
    match &themes {
        Ok(t) => println!("themes: {} ok", t.len()),
        Err(e) => problems.push(format!("themes: {e}")),
    }
    match cfg.questionnaire_specs() {
        Ok(q) => println!(
            "questionnaires: {} ok ({})",
            q.len(),
            q.iter().map(|s| s.id.as_str()).collect::<Vec<_>>().join(", ")
        ),
        Err(e) => problems.push(format!("questionnaires: {e}")),
    }
    match cfg.backend.validate() {
        Ok(()) => println!("backend: {:?} ok", cfg.backend.kind),
        Err(e) => problems.push(format!("backend: {e}")),
    }
    if let Some(p) = &cfg.backend.mock_script {
        if let Err(e) = convdepth_core::gateway::script_mock(p) {
            problems.push(format!("mock script: {e}"));
        }
    }
    if let Some(dir) = &cfg.run_dir {
        if dir.join(MANIFEST_FILE).exists() {
            validate_run(dir, &mut problems)?;
        } else if a.run.is_some() {
            problems.push(format!("no run at {}", dir.display()));
        }
    }
    if !cfg.model_ids.is_empty() {
        if let Err(e) = cfg.settings() {
            problems.push(e);
        }
    }
    if problems.is_empty() {
        println!("configuration valid");
        Ok(EXIT_OK)
    } else {
        for p in &problems {
            eprintln!("invalid: {p}");
        }
        Ok(EXIT_DOMAIN)
    }
}

fn validate_run(dir: &Path, problems: &mut Vec<String>) -> Result<(), String> {
    let run = load_run(dir).map_err(|e| e.to_string())?;
    let theme_count = run.manifest.config.theme_count;
    let logs = run.conversation_logs();
    let mut complete = 0;
    for log in logs.values() {
        if log.utterances.is_empty() {
            continue;
        }
        let report = validate_log_with(log, theme_count);
        if report.is_ok() {
            complete += 1;
        } else if log.is_complete(theme_count) {
            for v in report.violations {
                problems.push(format!("{}: {v}", log.session_id));
            }
        }
    }
    for c in &run.corrupt {
        problems.push(format!("{} stream: corrupt record at byte {}: {}", c.stream.name(), c.offset, c.reason));
    }
    for d in run.duplicate_keys() {
        problems.push(format!("duplicate record: {d}"));
    }
    let counts = count_records(&run);
    println!(
        "run {}: {}/{} sessions complete, {} utterances, {} missing responses",
        dir.display(),
        complete,
        run.manifest.sessions.len(),
        counts.utterances,
        counts.missing
    );
    for ((qid, stage), n) in &counts.responses {
        println!("  {qid} stage {stage}: {n} responses");
    }
    Ok(())
}
