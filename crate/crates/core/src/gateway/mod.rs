//! Chat-completion backends.
//!
//! Two kinds exist behind one [`Backend`] handle: a remote HTTP endpoint
//! speaking the common `choices[0].message.content` shape, and a scripted
//! deterministic mock used for offline runs and tests.

mod mock;
mod remote;

use std::fmt;
use std::path::PathBuf;
use std::sync::{Arc, Condvar, Mutex};

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use mock::{script_mock, MockBehavior, MockScript};
pub use remote::{HttpReply, HttpTransport, RemoteBackend, ReqwestTransport, Sleeper};

#[derive(Debug, Error)]
pub enum GatewayError {
    #[error("transport failure after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("authentication rejected with HTTP {status}")]
    Auth { status: u16 },
    #[error("request rejected with HTTP {status}: {body}")]
    Rejected { status: u16, body: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("credential variable {0} is not set")]
    MissingCredential(String),
    #[error("invalid request: {0}")]
    InvalidRequest(String),
    #[error("invalid backend configuration: {0}")]
    Config(String),
    #[error("mock script line {line}: {message}")]
    ScriptParse { line: usize, message: String },
    #[error("reading mock script {path}: {source}")]
    Io {
        path: PathBuf,
        #[source]
        source: std::io::Error,
    },
}

pub type Result<T, E = GatewayError> = std::result::Result<T, E>;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

impl Role {
    pub fn as_str(self) -> &'static str {
        match self {
            Role::System => "system",
            Role::User => "user",
            Role::Assistant => "assistant",
        }
    }
}

impl fmt::Display for Role {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn new(role: Role, content: impl Into<String>) -> Result<Self> {
        let content = content.into();
        if content.trim().is_empty() {
            return Err(GatewayError::InvalidRequest(format!(
                "{role} message content is blank"
            )));
        }
        Ok(Self { role, content })
    }

    pub fn system(content: impl Into<String>) -> Result<Self> {
        Self::new(Role::System, content)
    }

    pub fn user(content: impl Into<String>) -> Result<Self> {
        Self::new(Role::User, content)
    }

    pub fn assistant(content: impl Into<String>) -> Result<Self> {
        Self::new(Role::Assistant, content)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChatRequest {
    pub model_id: String,
    pub messages: Vec<ChatMessage>,
    pub temperature: f64,
    #[serde(default)]
    pub seed: Option<u64>,
}

impl ChatRequest {
    pub fn new(model_id: impl Into<String>, messages: Vec<ChatMessage>, temperature: f64) -> Self {
        Self {
            model_id: model_id.into(),
            messages,
            temperature,
            seed: None,
        }
    }

    pub fn with_seed(mut self, seed: u64) -> Self {
        self.seed = Some(seed);
        self
    }

    pub fn validate(&self) -> Result<()> {
        if self.model_id.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("model id is empty".into()));
        }
        if self.messages.is_empty() {
            return Err(GatewayError::InvalidRequest("no messages".into()));
        }
        if !(0.0..=2.0).contains(&self.temperature) {
            return Err(GatewayError::InvalidRequest(format!(
                "temperature {} outside [0, 2]",
                self.temperature
            )));
        }
        if let Some(m) = self.messages.iter().find(|m| m.content.trim().is_empty()) {
            return Err(GatewayError::InvalidRequest(format!(
                "{} message content is blank",
                m.role
            )));
        }
        if self.messages[1..].iter().any(|m| m.role == Role::System) {
            return Err(GatewayError::InvalidRequest(
                "system prompt must be the first message".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Remote,
    Mock,
}

impl std::str::FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, Self::Err> {
        match s {
            "remote" => Ok(Self::Remote),
            "mock" => Ok(Self::Mock),
            other => Err(format!("unknown backend kind {other:?} (expected remote or mock)")),
        }
    }
}

fn default_max_retries() -> u32 {
    3
}

fn default_backoff_ms() -> u64 {
    500
}

fn default_in_flight() -> usize {
    4
}

fn default_timeout_ms() -> u64 {
    120_000
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub endpoint_url: Option<String>,
    /// Embedding endpoint for the remote vectorizer (remote only).
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub embedding_url: Option<String>,
    /// Name of the environment variable holding the bearer token.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub auth_env_var: Option<String>,
    #[serde(default = "default_max_retries")]
    pub max_retries: u32,
    #[serde(default = "default_backoff_ms")]
    pub backoff_base_ms: u64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mock_script: Option<PathBuf>,
    #[serde(default = "default_in_flight")]
    pub max_in_flight: usize,
    #[serde(default = "default_timeout_ms")]
    pub timeout_ms: u64,
    /// Forward `ChatRequest::seed` to endpoints that accept it.
    #[serde(default)]
    pub send_seed: bool,
}

impl BackendConfig {
    pub fn mock(script: Option<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Mock,
            endpoint_url: None,
            embedding_url: None,
            auth_env_var: None,
            max_retries: default_max_retries(),
            backoff_base_ms: default_backoff_ms(),
            mock_script: script,
            max_in_flight: default_in_flight(),
            timeout_ms: default_timeout_ms(),
            send_seed: false,
        }
    }

    pub fn remote(endpoint_url: impl Into<String>, auth_env_var: Option<String>) -> Self {
        Self {
            kind: BackendKind::Remote,
            endpoint_url: Some(endpoint_url.into()),
            auth_env_var,
            mock_script: None,
            ..Self::mock(None)
        }
    }

    pub fn validate(&self) -> Result<()> {
        match self.kind {
            BackendKind::Remote => {
                if self.endpoint_url.as_deref().map_or(true, |u| u.trim().is_empty()) {
                    return Err(GatewayError::Config("remote backend needs endpoint_url".into()));
                }
                if self.mock_script.is_some() {
                    return Err(GatewayError::Config(
                        "mock_script is only valid for the mock backend".into(),
                    ));
                }
            }
            BackendKind::Mock => {
                if self.endpoint_url.is_some() || self.embedding_url.is_some() {
                    return Err(GatewayError::Config(
                        "endpoint_url is only valid for the remote backend".into(),
                    ));
                }
            }
        }
        if self.max_in_flight == 0 {
            return Err(GatewayError::Config("max_in_flight must be at least 1".into()));
        }
        Ok(())
    }
}

/// Counting semaphore bounding concurrent remote requests.
#[derive(Debug)]
pub(crate) struct InFlight {
    limit: usize,
    active: Mutex<usize>,
    freed: Condvar,
}

pub(crate) struct InFlightGuard<'a>(&'a InFlight);

impl InFlight {
    pub(crate) fn new(limit: usize) -> Self {
        Self {
            limit: limit.max(1),
            active: Mutex::new(0),
            freed: Condvar::new(),
        }
    }

    pub(crate) fn acquire(&self) -> InFlightGuard<'_> {
        let mut active = self.active.lock().unwrap_or_else(|e| e.into_inner());
        while *active >= self.limit {
            active = self.freed.wait(active).unwrap_or_else(|e| e.into_inner());
        }
        *active += 1;
        InFlightGuard(self)
    }
}

impl Drop for InFlightGuard<'_> {
    fn drop(&mut self) {
        let mut active = self.0.active.lock().unwrap_or_else(|e| e.into_inner());
        *active -= 1;
        self.0.freed.notify_one();
    }
}

#[derive(Clone)]
enum Inner {
    Remote(Arc<RemoteBackend>),
    Mock(Arc<MockBehavior>),
}

/// Immutable, shareable backend handle.
#[derive(Clone)]
pub struct Backend {
    inner: Inner,
}

impl fmt::Debug for Backend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match &self.inner {
            Inner::Remote(r) => f.debug_tuple("Backend::Remote").field(r).finish(),
            Inner::Mock(_) => f.write_str("Backend::Mock"),
        }
    }
}

impl Backend {
    pub fn from_config(config: &BackendConfig) -> Result<Self> {
        config.validate()?;
        let inner = match config.kind {
            BackendKind::Remote => Inner::Remote(Arc::new(RemoteBackend::from_config(config)?)),
            BackendKind::Mock => Inner::Mock(Arc::new(match &config.mock_script {
                Some(path) => script_mock(path)?,
                None => MockBehavior::default(),
            })),
        };
        Ok(Self { inner })
    }

    pub fn from_mock(mock: MockBehavior) -> Self {
        Self {
            inner: Inner::Mock(Arc::new(mock)),
        }
    }

    pub fn from_remote(remote: RemoteBackend) -> Self {
        Self {
            inner: Inner::Remote(Arc::new(remote)),
        }
    }

    pub fn is_mock(&self) -> bool {
        matches!(self.inner, Inner::Mock(_))
    }

    /// Returns the assistant text generated for `request`.
    pub fn complete(&self, request: &ChatRequest) -> Result<String> {
        request.validate()?;
        match &self.inner {
            Inner::Remote(r) => r.complete(request),
            Inner::Mock(m) => Ok(m.respond(&request.messages, request.seed)),
        }
    }

    /// One vector per input text.
    pub fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        match &self.inner {
            Inner::Remote(r) => r.embed(model_id, texts),
            Inner::Mock(m) => Ok(texts.iter().map(|t| m.embed(t)).collect()),
        }
    }
}

/// One-shot completion against a freshly constructed backend.
pub fn chat_complete(request: &ChatRequest, config: &BackendConfig) -> Result<String> {
    Backend::from_config(config)?.complete(request)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn blank_content_is_rejected() {
        assert!(ChatMessage::user("   \n").is_err());
        assert!(ChatMessage::user("hi").is_ok());
    }

    #[test]
    fn request_validation() {
        let msg = ChatMessage::user("Question 1 : x").unwrap();
        assert!(ChatRequest::new("m", vec![], 0.7).validate().is_err());
        assert!(ChatRequest::new("m", vec![msg.clone()], 2.5).validate().is_err());
        assert!(ChatRequest::new("m", vec![msg.clone()], 0.0).validate().is_ok());
        let late_system = vec![msg, ChatMessage::system("s").unwrap()];
        assert!(ChatRequest::new("m", late_system, 0.7).validate().is_err());
    }

    #[test]
    fn config_invariants() {
        assert!(BackendConfig::mock(None).validate().is_ok());
        assert!(BackendConfig::remote("http://x", None).validate().is_ok());
        let mut bad = BackendConfig::remote("", None);
        assert!(bad.validate().is_err());
        bad = BackendConfig::mock(None);
        bad.endpoint_url = Some("http://x".into());
        assert!(bad.validate().is_err());
    }

    #[test]
    fn in_flight_limit_blocks_until_release() {
        let sem = Arc::new(InFlight::new(2));
        let peak = Arc::new(Mutex::new((0usize, 0usize)));
        std::thread::scope(|s| {
            for _ in 0..8 {
                let sem = sem.clone();
                let peak = peak.clone();
                s.spawn(move || {
                    let _g = sem.acquire();
                    {
                        let mut p = peak.lock().unwrap();
                        p.0 += 1;
                        p.1 = p.1.max(p.0);
                    }
                    std::thread::sleep(std::time::Duration::from_millis(5));
                    peak.lock().unwrap().0 -= 1;
                });
            }
        });
        assert!(peak.lock().unwrap().1 <= 2);
    }
}
