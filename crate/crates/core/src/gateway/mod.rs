//! Access to a chat-completion model.
//!
//! [`Gateway`] wraps a [`Backend`] with retries, a per-request timeout, a
//! cap on in-flight requests and a per-session call log.

mod http;
mod mock;

use std::collections::HashMap;
use std::fmt;
use std::path::PathBuf;
use std::str::FromStr;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::mpsc;
use std::sync::{Arc, Condvar, Mutex};
use std::time::{Duration, Instant};

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::prompt::{Bindings, TemplateName};
use crate::store::SessionId;

pub use http::HttpBackend;
pub use mock::{fixture_key, MockBackend};

#[derive(Debug, Clone, Error, PartialEq, Eq)]
pub enum GatewayError {
    #[error("request timed out after {0:?}")]
    Timeout(Duration),
    #[error("authentication failed: {0}")]
    AuthFailure(String),
    #[error("rate limited by the backend")]
    RateLimited,
    #[error("backend error: {message}")]
    BackendError { message: String, transient: bool },
    #[error("invalid request: {0}")]
    InvalidRequest(String),
}

impl GatewayError {
    fn is_retryable(&self) -> bool {
        matches!(
            self,
            GatewayError::RateLimited | GatewayError::BackendError { transient: true, .. }
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Http,
    #[default]
    Mock,
}

impl fmt::Display for BackendKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            BackendKind::Http => "http",
            BackendKind::Mock => "mock",
        })
    }
}

impl FromStr for BackendKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s {
            "http" => Ok(BackendKind::Http),
            "mock" => Ok(BackendKind::Mock),
            other => Err(format!("unknown backend `{other}` (expected http or mock)")),
        }
    }
}

/// Gateway configuration, the `[llm]` table of the config file.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct LlmSettings {
    pub backend: BackendKind,
    /// Chat-completions URL for the http backend.
    pub endpoint: Option<String>,
    pub model_name: String,
    /// Name of the environment variable holding the API key.
    pub credential_env: String,
    /// Directory of mock fixture files.
    pub fixture_dir: Option<PathBuf>,
    pub temperature: f64,
    pub max_output_tokens: u32,
    pub retries: u32,
    pub timeout_secs: f64,
    pub backoff_ms: u64,
    pub max_concurrency: usize,
}

impl Default for LlmSettings {
    fn default() -> Self {
        LlmSettings {
            backend: BackendKind::Mock,
            endpoint: None,
            model_name: "gpt-4".to_string(),
            credential_env: "MARGINALIA_API_KEY".to_string(),
            fixture_dir: None,
            temperature: 0.0,
            max_output_tokens: 1024,
            retries: 2,
            timeout_secs: 60.0,
            backoff_ms: 500,
            max_concurrency: 4,
        }
    }
}

impl LlmSettings {
    pub fn timeout(&self) -> Duration {
        Duration::from_secs_f64(self.timeout_secs.max(0.0))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct GatewayRequest {
    pub request_id: String,
    pub session_id: SessionId,
    pub template: TemplateName,
    pub criterion: Option<String>,
    pub prompt: String,
    /// The values the prompt was rendered from.
    pub bindings: Bindings,
    pub max_output_tokens: u32,
    pub temperature: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct GatewayResponse {
    pub text: String,
    pub backend: BackendKind,
    pub latency: Duration,
    pub token_usage: Option<(u64, u64)>,
}

/// What a backend returns for one attempt.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Completion {
    pub text: String,
    pub token_usage: Option<(u64, u64)>,
}

pub trait Backend: Send + Sync + 'static {
    fn kind(&self) -> BackendKind;
    fn complete(&self, request: &GatewayRequest) -> Result<Completion, GatewayError>;
    /// Drop anything kept about a session.
    fn forget(&self, _session: &SessionId) {}
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct CallLogEntry {
    pub request_id: String,
    pub template: TemplateName,
    pub criterion: Option<String>,
    pub timestamp: DateTime<Utc>,
}

/// The parts of a request a caller provides.
#[derive(Debug, Clone)]
pub struct PromptCall {
    pub template: TemplateName,
    pub criterion: Option<String>,
    pub prompt: String,
    pub bindings: Bindings,
}

struct Semaphore {
    free: Mutex<usize>,
    cv: Condvar,
}

struct Permit<'a>(&'a Semaphore);

impl Semaphore {
    fn new(n: usize) -> Self {
        Semaphore {
            free: Mutex::new(n.max(1)),
            cv: Condvar::new(),
        }
    }

    fn acquire(&self) -> Permit<'_> {
        let mut free = self.free.lock().expect("semaphore lock");
        while *free == 0 {
            free = self.cv.wait(free).expect("semaphore lock");
        }
        *free -= 1;
        Permit(self)
    }
}

impl Drop for Permit<'_> {
    fn drop(&mut self) {
        *self.0.free.lock().expect("semaphore lock") += 1;
        self.0.cv.notify_one();
    }
}

pub struct Gateway {
    backend: Arc<dyn Backend>,
    settings: LlmSettings,
    permits: Semaphore,
    logs: Mutex<HashMap<SessionId, Vec<CallLogEntry>>>,
    issued: AtomicU64,
}

impl fmt::Debug for Gateway {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("Gateway")
            .field("backend", &self.backend.kind())
            .field("issued", &self.call_count())
            .finish()
    }
}

impl Gateway {
    pub fn new(backend: Arc<dyn Backend>, settings: LlmSettings) -> Self {
        Gateway {
            permits: Semaphore::new(settings.max_concurrency),
            backend,
            settings,
            logs: Mutex::new(HashMap::new()),
            issued: AtomicU64::new(0),
        }
    }

    /// Build the backend named by the settings.
    pub fn from_settings(settings: LlmSettings) -> Result<Self, GatewayError> {
        let backend: Arc<dyn Backend> = match settings.backend {
            BackendKind::Mock => Arc::new(match &settings.fixture_dir {
                Some(dir) => MockBackend::from_dir(dir)
                    .map_err(|e| GatewayError::InvalidRequest(format!("fixture directory: {e}")))?,
                None => MockBackend::new(),
            }),
            BackendKind::Http => Arc::new(HttpBackend::from_settings(&settings)?),
        };
        Ok(Self::new(backend, settings))
    }

    pub fn settings(&self) -> &LlmSettings {
        &self.settings
    }

    pub fn backend_kind(&self) -> BackendKind {
        self.backend.kind()
    }

    /// Requests issued so far across all sessions.
    pub fn call_count(&self) -> u64 {
        self.issued.load(Ordering::SeqCst)
    }

    pub fn complete(&self, session: &SessionId, call: PromptCall) -> Result<GatewayResponse, GatewayError> {
        if call.prompt.trim().is_empty() {
            return Err(GatewayError::InvalidRequest("prompt is empty".into()));
        }
        let n = self.issued.fetch_add(1, Ordering::SeqCst) + 1;
        let request = GatewayRequest {
            request_id: format!("r{n}"),
            session_id: session.clone(),
            template: call.template,
            criterion: call.criterion,
            prompt: call.prompt,
            bindings: call.bindings,
            max_output_tokens: self.settings.max_output_tokens,
            temperature: self.settings.temperature,
        };
        self.logs
            .lock()
            .expect("log lock")
            .entry(session.clone())
            .or_default()
            .push(CallLogEntry {
                request_id: request.request_id.clone(),
                template: request.template,
                criterion: request.criterion.clone(),
                timestamp: Utc::now(),
            });
        tracing::debug!(request_id = %request.request_id, template = %request.template, "llm request");

        let _permit = self.permits.acquire();
        let request = Arc::new(request);
        let started = Instant::now();
        let mut attempt = 0;
        loop {
            match self.attempt(&request) {
                Ok(c) => {
                    return Ok(GatewayResponse {
                        text: c.text,
                        backend: self.backend.kind(),
                        latency: started.elapsed(),
                        token_usage: c.token_usage,
                    })
                }
                Err(e) if e.is_retryable() && attempt < self.settings.retries => {
                    let wait = Duration::from_millis(self.settings.backoff_ms.saturating_mul(1 << attempt.min(16)));
                    tracing::warn!(request_id = %request.request_id, error = %e, ?wait, "retrying llm request");
                    std::thread::sleep(wait);
                    attempt += 1;
                }
                Err(e) => return Err(e),
            }
        }
    }

    fn attempt(&self, request: &Arc<GatewayRequest>) -> Result<Completion, GatewayError> {
        let timeout = self.settings.timeout();
        let (tx, rx) = mpsc::channel();
        let backend = Arc::clone(&self.backend);
        let req = Arc::clone(request);
        std::thread::spawn(move || {
            let _ = tx.send(backend.complete(&req));
        });
        match rx.recv_timeout(timeout) {
            Ok(result) => result,
            Err(mpsc::RecvTimeoutError::Timeout) => Err(GatewayError::Timeout(timeout)),
            Err(mpsc::RecvTimeoutError::Disconnected) => Err(GatewayError::BackendError {
                message: "backend worker stopped".into(),
                transient: false,
            }),
        }
    }

    pub fn call_log(&self, session: &SessionId) -> Vec<CallLogEntry> {
        self.logs.lock().expect("log lock").get(session).cloned().unwrap_or_default()
    }

    pub fn purge(&self, session: &SessionId) {
        self.logs.lock().expect("log lock").remove(session);
        self.backend.forget(session);
    }
}
