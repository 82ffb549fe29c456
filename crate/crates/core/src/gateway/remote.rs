//! HTTP chat-completion backend with bounded retries.

use std::fmt;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde_json::{json, Value};

use super::{BackendConfig, ChatRequest, GatewayError, InFlight, Result};

/// Status and body of one HTTP exchange.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct HttpReply {
    pub status: u16,
    pub body: String,
}

/// Minimal JSON-over-HTTP POST. `Err` means no HTTP response was obtained.
pub trait HttpTransport: Send + Sync {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> std::result::Result<HttpReply, String>;
}

/// Blocking reqwest client.
pub struct ReqwestTransport {
    client: reqwest::blocking::Client,
}

impl ReqwestTransport {
    pub fn new(timeout: Duration) -> Result<Self> {
        let client = reqwest::blocking::Client::builder()
            .timeout(timeout)
            .build()
            .map_err(|e| GatewayError::Config(format!("building HTTP client: {e}")))?;
        Ok(Self { client })
    }
}

impl HttpTransport for ReqwestTransport {
    fn post_json(
        &self,
        url: &str,
        bearer: Option<&str>,
        body: &Value,
    ) -> std::result::Result<HttpReply, String> {
        let mut req = self.client.post(url).json(body);
        if let Some(token) = bearer {
            req = req.bearer_auth(token);
        }
        // reqwest errors can embed the URL but never request headers
        let resp = req.send().map_err(|e| e.to_string())?;
        let status = resp.status().as_u16();
        let body = resp.text().map_err(|e| e.to_string())?;
        Ok(HttpReply { status, body })
    }
}

pub type Sleeper = Arc<dyn Fn(Duration) + Send + Sync>;

/// Credential wrapper that never prints its contents.
#[derive(Clone)]
struct Secret(String);

impl fmt::Debug for Secret {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str("Secret(<redacted>)")
    }
}

pub struct RemoteBackend {
    endpoint: String,
    embedding_url: Option<String>,
    token: Option<Secret>,
    max_retries: u32,
    backoff_base: Duration,
    send_seed: bool,
    transport: Arc<dyn HttpTransport>,
    sleeper: Sleeper,
    jitter: Mutex<ChaCha8Rng>,
    in_flight: InFlight,
}

impl fmt::Debug for RemoteBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RemoteBackend")
            .field("endpoint", &self.endpoint)
            .field("embedding_url", &self.embedding_url)
            .field("token", &self.token)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl RemoteBackend {
    /// Builds a backend with the real HTTP transport, resolving the
    /// credential from the configured environment variable.
    pub fn from_config(config: &BackendConfig) -> Result<Self> {
        let transport = ReqwestTransport::new(Duration::from_millis(config.timeout_ms))?;
        Self::with_transport(config, Arc::new(transport))
    }

    pub fn with_transport(config: &BackendConfig, transport: Arc<dyn HttpTransport>) -> Result<Self> {
        config.validate()?;
        let endpoint = config
            .endpoint_url
            .clone()
            .ok_or_else(|| GatewayError::Config("remote backend needs endpoint_url".into()))?;
        let token = match &config.auth_env_var {
            Some(var) => match std::env::var(var) {
                Ok(v) if !v.is_empty() => Some(Secret(v)),
                _ => return Err(GatewayError::MissingCredential(var.clone())),
            },
            None => None,
        };
        Ok(Self {
            endpoint,
            embedding_url: config.embedding_url.clone(),
            token,
            max_retries: config.max_retries,
            backoff_base: Duration::from_millis(config.backoff_base_ms),
            send_seed: config.send_seed,
            transport,
            sleeper: Arc::new(std::thread::sleep),
            jitter: Mutex::new(ChaCha8Rng::from_entropy()),
            in_flight: InFlight::new(config.max_in_flight),
        })
    }

    /// Replaces the sleep function used between retries (tests use a no-op
    /// or a recorder).
    pub fn with_sleeper(mut self, sleeper: Sleeper) -> Self {
        self.sleeper = sleeper;
        self
    }

    /// Full-jitter delay before retry number `attempt` (0-based):
    /// uniform in `[0, base·2^attempt]`.
    fn backoff(&self, attempt: u32) -> Duration {
        let cap = self
            .backoff_base
            .saturating_mul(1u32.checked_shl(attempt.min(16)).unwrap_or(u32::MAX));
        let frac: f64 = self.jitter.lock().unwrap_or_else(|e| e.into_inner()).gen();
        cap.mul_f64(frac)
    }

    fn post_with_retry(&self, url: &str, body: &Value) -> Result<Value> {
        let _slot = self.in_flight.acquire();
        let bearer = self.token.as_ref().map(|s| s.0.as_str());
        let attempts = self.max_retries + 1;
        let mut last = String::new();
        for attempt in 0..attempts {
            if attempt > 0 {
                (self.sleeper)(self.backoff(attempt - 1));
            }
            match self.transport.post_json(url, bearer, body) {
                Err(e) => {
                    tracing::warn!(attempt = attempt + 1, error = %e, "request failed");
                    last = e;
                }
                Ok(reply) if reply.status == 401 || reply.status == 403 => {
                    return Err(GatewayError::Auth {
                        status: reply.status,
                    });
                }
                Ok(reply) if reply.status >= 500 || reply.status == 429 => {
                    tracing::warn!(attempt = attempt + 1, status = reply.status, "retryable status");
                    last = format!("HTTP {}", reply.status);
                }
                Ok(reply) if !(200..300).contains(&reply.status) => {
                    return Err(GatewayError::Rejected {
                        status: reply.status,
                        body: truncate(&reply.body, 500),
                    });
                }
                Ok(reply) => {
                    return serde_json::from_str(&reply.body)
                        .map_err(|e| GatewayError::MalformedResponse(format!("invalid JSON: {e}")));
                }
            }
        }
        Err(GatewayError::Transport {
            attempts,
            message: last,
        })
    }

    pub fn complete(&self, request: &ChatRequest) -> Result<String> {
        let messages: Vec<Value> = request
            .messages
            .iter()
            .map(|m| json!({"role": m.role.as_str(), "content": m.content}))
            .collect();
        let mut body = json!({
            "model": request.model_id,
            "messages": messages,
            "temperature": request.temperature,
        });
        if let (true, Some(seed)) = (self.send_seed, request.seed) {
            body["seed"] = json!(seed);
        }
        let reply = self.post_with_retry(&self.endpoint, &body)?;
        reply
            .pointer("/choices/0/message/content")
            .and_then(Value::as_str)
            .map(str::to_string)
            .ok_or_else(|| {
                GatewayError::MalformedResponse("missing choices[0].message.content".into())
            })
    }

    pub fn embed(&self, model_id: &str, texts: &[String]) -> Result<Vec<Vec<f64>>> {
        let url = self
            .embedding_url
            .as_deref()
            .ok_or_else(|| GatewayError::Config("no embedding_url configured".into()))?;
        let reply = self.post_with_retry(url, &json!({"model": model_id, "input": texts}))?;
        let data = reply
            .get("data")
            .and_then(Value::as_array)
            .ok_or_else(|| GatewayError::MalformedResponse("missing data array".into()))?;
        if data.len() != texts.len() {
            return Err(GatewayError::MalformedResponse(format!(
                "expected {} embeddings, got {}",
                texts.len(),
                data.len()
            )));
        }
        data.iter()
            .map(|d| {
                d.get("embedding")
                    .and_then(Value::as_array)
                    .and_then(|a| a.iter().map(Value::as_f64).collect::<Option<Vec<f64>>>())
                    .ok_or_else(|| GatewayError::MalformedResponse("bad embedding entry".into()))
            })
            .collect()
    }
}

fn truncate(s: &str, max: usize) -> String {
    match s.char_indices().nth(max) {
        Some((i, _)) => format!("{}…", &s[..i]),
        None => s.to_string(),
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::gateway::ChatMessage;
    use std::sync::atomic::{AtomicUsize, Ordering};

    struct Scripted {
        replies: Vec<std::result::Result<HttpReply, String>>,
        calls: AtomicUsize,
        seen: Mutex<Vec<(Option<String>, Value)>>,
    }

    impl Scripted {
        fn new(replies: Vec<std::result::Result<HttpReply, String>>) -> Arc<Self> {
            Arc::new(Self {
                replies,
                calls: AtomicUsize::new(0),
                seen: Mutex::new(Vec::new()),
            })
        }
    }

    impl HttpTransport for Scripted {
        fn post_json(
            &self,
            _url: &str,
            bearer: Option<&str>,
            body: &Value,
        ) -> std::result::Result<HttpReply, String> {
            let i = self.calls.fetch_add(1, Ordering::SeqCst);
            self.seen
                .lock()
                .unwrap()
                .push((bearer.map(str::to_string), body.clone()));
            self.replies[i.min(self.replies.len() - 1)].clone()
        }
    }

    fn ok(body: &str) -> std::result::Result<HttpReply, String> {
        Ok(HttpReply {
            status: 200,
            body: body.into(),
        })
    }

    fn status(code: u16) -> std::result::Result<HttpReply, String> {
        Ok(HttpReply {
            status: code,
            body: String::new(),
        })
    }

    fn backend(t: Arc<Scripted>, retries: u32) -> RemoteBackend {
        let mut cfg = BackendConfig::remote("http://localhost:1/v1/chat", None);
        cfg.max_retries = retries;
        RemoteBackend::with_transport(&cfg, t)
            .unwrap()
            .with_sleeper(Arc::new(|_| {}))
    }

    fn request() -> ChatRequest {
        ChatRequest::new("m", vec![ChatMessage::user("Question 1 : hi").unwrap()], 0.7)
    }

    #[test]
    fn wire_body_shape() {
        let t = Scripted::new(vec![ok(r#"{"choices":[{"message":{"content":"hello"}}]}"#)]);
        let b = backend(t.clone(), 0);
        assert_eq!(b.complete(&request().with_seed(3)).unwrap(), "hello");
        let seen = t.seen.lock().unwrap();
        assert_eq!(
            seen[0].1,
            json!({"model": "m", "messages": [{"role": "user", "content": "Question 1 : hi"}], "temperature": 0.7})
        );
    }

    #[test]
    fn server_errors_exhaust_retries() {
        let t = Scripted::new(vec![status(500)]);
        let err = backend(t.clone(), 3).complete(&request()).unwrap_err();
        assert!(matches!(err, GatewayError::Transport { attempts: 4, .. }));
        assert_eq!(t.calls.load(Ordering::SeqCst), 4);
    }

    #[test]
    fn recovers_after_transient_failures() {
        let t = Scripted::new(vec![
            Err("connection reset".into()),
            status(503),
            ok(r#"{"choices":[{"message":{"content":"fine"}}]}"#),
        ]);
        assert_eq!(backend(t.clone(), 3).complete(&request()).unwrap(), "fine");
        assert_eq!(t.calls.load(Ordering::SeqCst), 3);
    }

    #[test]
    fn auth_errors_are_not_retried() {
        for code in [401, 403] {
            let t = Scripted::new(vec![status(code)]);
            let err = backend(t.clone(), 5).complete(&request()).unwrap_err();
            assert!(matches!(err, GatewayError::Auth { status } if status == code));
            assert_eq!(t.calls.load(Ordering::SeqCst), 1);
        }
    }

    #[test]
    fn missing_content_is_malformed() {
        let t = Scripted::new(vec![ok(r#"{"choices":[{"message":{}}]}"#)]);
        let err = backend(t, 0).complete(&request()).unwrap_err();
        assert!(matches!(err, GatewayError::MalformedResponse(_)));
    }

    #[test]
    fn backoff_is_bounded_by_exponential_cap() {
        let b = backend(Scripted::new(vec![status(500)]), 0);
        for attempt in 0..6 {
            let cap = Duration::from_millis(500 * (1 << attempt));
            for _ in 0..20 {
                assert!(b.backoff(attempt) <= cap);
            }
        }
    }
}
