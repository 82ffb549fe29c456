//! The two-agent conversation procedure and its stage snapshots.
//!
//! Agent A answers each theme first, then agent B answers with A's reply
//! visible. From an agent's point of view its own earlier replies are
//! `assistant` messages, while theme announcements and the partner's replies
//! are `user` messages.

use std::fmt;
use std::path::Path;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::derive_seed;
use crate::gateway::{Backend, ChatMessage, ChatRequest, GatewayError, Role};

pub const THEME_COUNT: usize = 36;
pub const THEMES_PER_STAGE: usize = 12;
pub const STAGES: usize = 3;
pub const STAGE_LABELS: [&str; STAGES] = ["12", "24", "36"];
pub const DEFAULT_CONVERSATION_TEMPERATURE: f64 = 0.7;

pub const CONVERSATION_SYSTEM_PROMPT: &str = "You are now sharing your thoughts on the question with your partner. You only reply briefly to your thoughts only for a given question.";

const SHIPPED_THEMES: &str = include_str!("../data/themes.txt");

#[derive(Debug, Error)]
pub enum ProtocolError {
    #[error("theme list invalid: {0}")]
    InvalidThemes(String),
    #[error("reading themes from {path}: {source}")]
    Io {
        path: String,
        #[source]
        source: std::io::Error,
    },
    #[error("backend failed on theme {theme}, agent {agent}: {source}")]
    BackendFailure {
        theme: usize,
        agent: Agent,
        #[source]
        source: GatewayError,
    },
    #[error("backend returned a blank answer on theme {theme}, agent {agent}")]
    EmptyAnswer { theme: usize, agent: Agent },
    #[error("log is incomplete: stage {stage} needs themes 1..={needed}, log covers {covered}")]
    IncompleteLog {
        stage: u8,
        needed: usize,
        covered: usize,
    },
    #[error("stage {0} outside 1..=3")]
    InvalidStage(u8),
    #[error("log is not a well-formed prefix: {0}")]
    MalformedLog(String),
    #[error("persisting utterance failed: {0}")]
    Sink(String),
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Theme {
    pub index: usize,
    pub text: String,
}

/// Stage a theme belongs to: 1–12 → 1, 13–24 → 2, 25–36 → 3.
pub fn stage_of(index: usize) -> u8 {
    index.div_ceil(THEMES_PER_STAGE) as u8
}

impl Theme {
    pub fn stage(&self) -> u8 {
        stage_of(self.index)
    }

    /// The user-role announcement, byte format `Question <n> : <text>`.
    pub fn prompt(&self) -> String {
        format!("Question {} : {}", self.index, self.text)
    }
}

/// One theme per non-empty line, numbered from 1.
pub fn parse_themes(text: &str) -> Result<Vec<Theme>, ProtocolError> {
    let themes: Vec<Theme> = text
        .lines()
        .map(str::trim_end)
        .filter(|l| !l.trim().is_empty())
        .enumerate()
        .map(|(i, l)| Theme {
            index: i + 1,
            text: l.trim().to_string(),
        })
        .collect();
    validate_themes(&themes)?;
    Ok(themes)
}

pub fn load_themes(path: &Path) -> Result<Vec<Theme>, ProtocolError> {
    let text = std::fs::read_to_string(path).map_err(|source| ProtocolError::Io {
        path: path.display().to_string(),
        source,
    })?;
    parse_themes(&text)
}

/// The 36 shipped themes.
pub fn default_themes() -> Vec<Theme> {
    parse_themes(SHIPPED_THEMES).expect("shipped theme list is valid")
}

pub fn validate_themes(themes: &[Theme]) -> Result<(), ProtocolError> {
    if themes.is_empty() {
        return Err(ProtocolError::InvalidThemes("no themes".into()));
    }
    for (i, t) in themes.iter().enumerate() {
        if t.index != i + 1 {
            return Err(ProtocolError::InvalidThemes(format!(
                "theme at position {} has index {}; indices must be contiguous from 1",
                i + 1,
                t.index
            )));
        }
        if t.text.trim().is_empty() {
            return Err(ProtocolError::InvalidThemes(format!("theme {} is blank", t.index)));
        }
    }
    if themes.len() > THEME_COUNT {
        return Err(ProtocolError::InvalidThemes(format!(
            "{} themes given, at most {THEME_COUNT} supported",
            themes.len()
        )));
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum Agent {
    A,
    B,
}

impl Agent {
    pub const BOTH: [Agent; 2] = [Agent::A, Agent::B];

    pub fn as_str(self) -> &'static str {
        match self {
            Agent::A => "A",
            Agent::B => "B",
        }
    }
}

impl fmt::Display for Agent {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Utterance {
    pub theme_index: usize,
    pub agent: Agent,
    pub text: String,
    pub turn_order: u32,
}

/// Position of a turn within a session, starting at 1.
pub fn turn_order(theme_index: usize, agent: Agent) -> u32 {
    (2 * (theme_index - 1) + if agent == Agent::A { 1 } else { 2 }) as u32
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ConversationLog {
    pub session_id: String,
    pub model_id: String,
    pub seed: u64,
    pub utterances: Vec<Utterance>,
}

impl ConversationLog {
    pub fn new(session_id: impl Into<String>, model_id: impl Into<String>, seed: u64) -> Self {
        Self {
            session_id: session_id.into(),
            model_id: model_id.into(),
            seed,
            utterances: Vec::new(),
        }
    }

    pub fn get(&self, theme_index: usize, agent: Agent) -> Option<&Utterance> {
        self.utterances
            .iter()
            .find(|u| u.theme_index == theme_index && u.agent == agent)
    }

    /// Highest theme `t` such that both agents answered every theme `1..=t`.
    pub fn last_complete_theme(&self) -> usize {
        let mut t = 0;
        while self.get(t + 1, Agent::A).is_some() && self.get(t + 1, Agent::B).is_some() {
            t += 1;
        }
        t
    }

    pub fn is_complete(&self, theme_count: usize) -> bool {
        self.utterances.len() == 2 * theme_count && self.last_complete_theme() == theme_count
    }

    /// The next (theme, agent) to generate, if the log is a well-formed
    /// prefix of the procedure.
    fn next_turn(&self) -> Result<(usize, Agent), ProtocolError> {
        for (pos, u) in self.utterances.iter().enumerate() {
            let theme = pos / 2 + 1;
            let agent = if pos % 2 == 0 { Agent::A } else { Agent::B };
            if u.theme_index != theme || u.agent != agent {
                return Err(ProtocolError::MalformedLog(format!(
                    "position {} holds theme {} agent {}, expected theme {theme} agent {agent}",
                    pos + 1,
                    u.theme_index,
                    u.agent
                )));
            }
        }
        let pos = self.utterances.len();
        Ok((pos / 2 + 1, if pos % 2 == 0 { Agent::A } else { Agent::B }))
    }
}

fn own_role(speaker: Agent, perspective: Agent) -> Role {
    if speaker == perspective {
        Role::Assistant
    } else {
        Role::User
    }
}

/// Transcript of themes `1..=upto` as seen by `perspective`.
fn transcript(
    themes: &[Theme],
    log: &ConversationLog,
    upto: usize,
    perspective: Agent,
) -> Result<Vec<ChatMessage>, ProtocolError> {
    let mut out = Vec::with_capacity(3 * upto);
    for theme in &themes[..upto] {
        out.push(ChatMessage {
            role: Role::User,
            content: theme.prompt(),
        });
        for speaker in Agent::BOTH {
            let u = log.get(theme.index, speaker).ok_or_else(|| {
                ProtocolError::MalformedLog(format!(
                    "missing theme {} agent {speaker}",
                    theme.index
                ))
            })?;
            out.push(ChatMessage {
                role: own_role(speaker, perspective),
                content: u.text.clone(),
            });
        }
    }
    Ok(out)
}

/// Messages sent to the backend for `agent`'s turn on theme `theme_index`.
pub fn turn_messages(
    themes: &[Theme],
    log: &ConversationLog,
    theme_index: usize,
    agent: Agent,
) -> Result<Vec<ChatMessage>, ProtocolError> {
    let mut msgs = vec![ChatMessage {
        role: Role::System,
        content: CONVERSATION_SYSTEM_PROMPT.to_string(),
    }];
    msgs.extend(transcript(themes, log, theme_index - 1, agent)?);
    msgs.push(ChatMessage {
        role: Role::User,
        content: themes[theme_index - 1].prompt(),
    });
    if agent == Agent::B {
        let a = log.get(theme_index, Agent::A).ok_or_else(|| {
            ProtocolError::MalformedLog(format!("agent B before agent A on theme {theme_index}"))
        })?;
        msgs.push(ChatMessage {
            role: Role::User,
            content: a.text.clone(),
        });
    }
    Ok(msgs)
}

/// Runs a fresh session over all `themes`.
pub fn run_conversation(
    model_id: &str,
    session_id: &str,
    themes: &[Theme],
    seed: u64,
    backend: &Backend,
    temperature: f64,
) -> Result<ConversationLog, ProtocolError> {
    let mut log = ConversationLog::new(session_id, model_id, seed);
    continue_conversation(&mut log, themes, backend, temperature, &mut |_| Ok(()))?;
    Ok(log)
}

/// Extends a partial log to completion, handing every new utterance to
/// `sink` before it is added to the log. On error the log holds every
/// utterance accepted so far and can be resumed later.
pub fn continue_conversation(
    log: &mut ConversationLog,
    themes: &[Theme],
    backend: &Backend,
    temperature: f64,
    sink: &mut dyn FnMut(&Utterance) -> Result<(), String>,
) -> Result<(), ProtocolError> {
    validate_themes(themes)?;
    loop {
        let (theme, agent) = log.next_turn()?;
        if theme > themes.len() {
            return Ok(());
        }
        let messages = turn_messages(themes, log, theme, agent)?;
        let request = ChatRequest {
            model_id: log.model_id.clone(),
            messages,
            temperature,
            seed: Some(derive_seed(log.seed, &format!("turn:{theme}:{agent}"))),
        };
        let text = backend
            .complete(&request)
            .map_err(|source| ProtocolError::BackendFailure {
                theme,
                agent,
                source,
            })?;
        let text = text.trim();
        if text.is_empty() {
            return Err(ProtocolError::EmptyAnswer { theme, agent });
        }
        let utterance = Utterance {
            theme_index: theme,
            agent,
            text: text.to_string(),
            turn_order: turn_order(theme, agent),
        };
        sink(&utterance).map_err(ProtocolError::Sink)?;
        log.utterances.push(utterance);
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Snapshot {
    pub session_id: String,
    pub stage: u8,
    pub agent: Agent,
    pub history: Vec<ChatMessage>,
}

/// History through theme `12·stage` from `agent`'s point of view.
pub fn build_snapshot(
    log: &ConversationLog,
    themes: &[Theme],
    stage: u8,
    agent: Agent,
) -> Result<Snapshot, ProtocolError> {
    if !(1..=STAGES as u8).contains(&stage) {
        return Err(ProtocolError::InvalidStage(stage));
    }
    let needed = THEMES_PER_STAGE * usize::from(stage);
    let covered = log.last_complete_theme();
    if covered < needed || themes.len() < needed {
        return Err(ProtocolError::IncompleteLog {
            stage,
            needed,
            covered: covered.min(themes.len()),
        });
    }
    Ok(Snapshot {
        session_id: log.session_id.clone(),
        stage,
        agent,
        history: transcript(themes, log, needed, agent)?,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    Count { expected: usize, actual: usize },
    ThemeOutOfRange { theme: usize },
    Missing { theme: usize, agent: Agent },
    Duplicate { theme: usize, agent: Agent },
    Ordering { theme: usize },
    ThemeOrder { position: usize },
    TurnOrder { position: usize },
    Blank { theme: usize, agent: Agent },
}

impl fmt::Display for Violation {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Violation::Count { expected, actual } => {
                write!(f, "expected {expected} utterances, found {actual}")
            }
            Violation::ThemeOutOfRange { theme } => write!(f, "theme index {theme} out of range"),
            Violation::Missing { theme, agent } => write!(f, "theme {theme}: agent {agent} missing"),
            Violation::Duplicate { theme, agent } => {
                write!(f, "theme {theme}: agent {agent} answered more than once")
            }
            Violation::Ordering { theme } => write!(f, "theme {theme}: agent B precedes agent A"),
            Violation::ThemeOrder { position } => {
                write!(f, "utterance {position}: theme index decreases")
            }
            Violation::TurnOrder { position } => {
                write!(f, "utterance {position}: turn_order not increasing")
            }
            Violation::Blank { theme, agent } => write!(f, "theme {theme}: agent {agent} text is blank"),
        }
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ValidationReport {
    pub violations: Vec<Violation>,
}

impl ValidationReport {
    pub fn is_ok(&self) -> bool {
        self.violations.is_empty()
    }
}

pub fn validate_log(log: &ConversationLog) -> ValidationReport {
    validate_log_with(log, THEME_COUNT)
}

pub fn validate_log_with(log: &ConversationLog, theme_count: usize) -> ValidationReport {
    let mut v = Vec::new();
    let expected = 2 * theme_count;
    if log.utterances.len() != expected {
        v.push(Violation::Count {
            expected,
            actual: log.utterances.len(),
        });
    }
    // first position of each (theme, agent)
    let mut seen = vec![[None::<usize>; 2]; theme_count + 1];
    for (pos, u) in log.utterances.iter().enumerate() {
        if u.theme_index == 0 || u.theme_index > theme_count {
            v.push(Violation::ThemeOutOfRange { theme: u.theme_index });
            continue;
        }
        let slot = &mut seen[u.theme_index][u.agent as usize];
        if slot.is_some() {
            v.push(Violation::Duplicate {
                theme: u.theme_index,
                agent: u.agent,
            });
        } else {
            *slot = Some(pos);
        }
        if u.text.trim().is_empty() {
            v.push(Violation::Blank {
                theme: u.theme_index,
                agent: u.agent,
            });
        }
        if pos > 0 {
            let prev = &log.utterances[pos - 1];
            if u.theme_index < prev.theme_index {
                v.push(Violation::ThemeOrder { position: pos + 1 });
            }
            if u.turn_order <= prev.turn_order {
                v.push(Violation::TurnOrder { position: pos + 1 });
            }
        }
    }
    for (theme, [a, b]) in seen.iter().enumerate().skip(1) {
        match (a, b) {
            (Some(a), Some(b)) if b < a => v.push(Violation::Ordering { theme }),
            _ => {}
        }
        for (agent, slot) in Agent::BOTH.iter().zip([a, b]) {
            if slot.is_none() {
                v.push(Violation::Missing {
                    theme,
                    agent: *agent,
                });
            }
        }
    }
    ValidationReport { violations: v }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::MockBehavior;

    fn mock() -> Backend {
        Backend::from_mock(MockBehavior::default())
    }

    #[test]
    fn shipped_themes() {
        let themes = default_themes();
        assert_eq!(themes.len(), 36);
        assert!(themes[0].text.starts_with("Given the choice of anyone in the world"));
        assert_eq!(themes[11].stage(), 1);
        assert_eq!(themes[12].stage(), 2);
        assert_eq!(themes[35].stage(), 3);
    }

    #[test]
    fn full_session_has_72_utterances() {
        let log = run_conversation("m", "m-s01", &default_themes(), 1, &mock(), 0.7).unwrap();
        assert_eq!(log.utterances.len(), 72);
        assert!(validate_log(&log).is_ok());
        assert_eq!(log.last_complete_theme(), 36);
    }

    #[test]
    fn single_theme_session() {
        let themes = &default_themes()[..1];
        let log = run_conversation("m", "s", themes, 1, &mock(), 0.7).unwrap();
        assert_eq!(log.utterances.len(), 2);
        assert_eq!(log.utterances[0].agent, Agent::A);
        assert_eq!(log.utterances[1].agent, Agent::B);
    }

    #[test]
    fn turn_messages_follow_roles() {
        let themes = default_themes();
        let log = run_conversation("m", "s", &themes[..2], 3, &mock(), 0.7).unwrap();
        let b2 = turn_messages(&themes, &log, 2, Agent::B).unwrap();
        let roles: Vec<Role> = b2.iter().map(|m| m.role).collect();
        use Role::*;
        assert_eq!(roles, vec![System, User, User, Assistant, User, User]);
        assert_eq!(b2[4].content, themes[1].prompt());
        let a2 = turn_messages(&themes, &log, 2, Agent::A).unwrap();
        let roles: Vec<Role> = a2.iter().map(|m| m.role).collect();
        assert_eq!(roles, vec![System, User, Assistant, User, User]);
    }

    #[test]
    fn snapshot_requires_prefix() {
        let themes = default_themes();
        let log = run_conversation("m", "s", &themes[..30], 3, &mock(), 0.7).unwrap();
        let s2 = build_snapshot(&log, &themes, 2, Agent::A).unwrap();
        assert_eq!(s2.history.len(), 24 * 3);
        assert!(matches!(
            build_snapshot(&log, &themes, 3, Agent::A),
            Err(ProtocolError::IncompleteLog { .. })
        ));
    }

    #[test]
    fn validation_findings() {
        let mut log = run_conversation("m", "s", &default_themes(), 1, &mock(), 0.7).unwrap();
        log.utterances.swap(8, 9);
        let report = validate_log(&log);
        assert!(report.violations.contains(&Violation::Ordering { theme: 5 }));
        log.utterances.swap(8, 9);
        log.utterances.pop();
        let report = validate_log(&log);
        assert!(report
            .violations
            .contains(&Violation::Count { expected: 72, actual: 71 }));
    }
}
