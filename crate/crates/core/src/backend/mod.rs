//! Chat-completion backends.
//!
//! Every agent talks to a model through [`ChatBackend`]: a list of messages
//! in, one assistant reply out. Structured output is parsed by the caller.
//! Requests also carry a routing `tag` (e.g. `issue/initial/Mike/review`)
//! and an optional session id. The HTTP backend ignores both; the scripted
//! backend uses them to pick canned replies.

mod capture;
mod http;
mod retry;
mod scripted;

use std::fmt;
use std::path::{Path, PathBuf};
use std::sync::Arc;
use std::time::Duration;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use capture::{CaptureRecord, CapturingBackend};
pub use http::HttpBackend;
pub use retry::RetryPolicy;
pub use scripted::{glob_match, Script, ScriptedBackend, ScriptedExchange};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Role {
    System,
    User,
    Assistant,
}

#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct ChatMessage {
    pub role: Role,
    pub content: String,
}

impl ChatMessage {
    pub fn system(content: impl Into<String>) -> Self {
        Self {
            role: Role::System,
            content: content.into(),
        }
    }

    pub fn user(content: impl Into<String>) -> Self {
        Self {
            role: Role::User,
            content: content.into(),
        }
    }

    pub fn assistant(content: impl Into<String>) -> Self {
        Self {
            role: Role::Assistant,
            content: content.into(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChatRequest {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    pub tag: String,
    #[serde(default)]
    pub attempt: u32,
    pub messages: Vec<ChatMessage>,
}

impl ChatRequest {
    pub fn new(tag: impl Into<String>, messages: Vec<ChatMessage>) -> Self {
        Self {
            session: None,
            tag: tag.into(),
            attempt: 0,
            messages,
        }
    }

    pub fn with_session(mut self, session: Option<&str>) -> Self {
        self.session = session.map(str::to_string);
        self
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if self.messages.is_empty() {
            return Err(BackendError::EmptyRequest);
        }
        for (i, m) in self.messages.iter().enumerate() {
            if m.role != Role::System && m.content.trim().is_empty() {
                return Err(BackendError::InvalidMessage(format!(
                    "message {i} ({:?}) has empty content",
                    m.role
                )));
            }
        }
        Ok(())
    }

    /// Concatenated message contents, used for substring matching.
    pub fn text(&self) -> String {
        self.messages
            .iter()
            .map(|m| m.content.as_str())
            .collect::<Vec<_>>()
            .join("\n")
    }
}

pub trait ChatBackend: Send + Sync {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError>;
}

impl<T: ChatBackend + ?Sized> ChatBackend for Arc<T> {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        (**self).complete(request)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum BackendError {
    #[error("request has no messages")]
    EmptyRequest,
    #[error("invalid message: {0}")]
    InvalidMessage(String),
    #[error("no scripted reply for tag `{tag}` (session {session:?}, attempt {attempt})")]
    NoScriptMatch {
        tag: String,
        session: Option<String>,
        attempt: u32,
    },
    #[error("{count} scripted replies match tag `{tag}` (session {session:?})")]
    AmbiguousScript {
        tag: String,
        session: Option<String>,
        count: usize,
    },
    #[error("transport error after {attempts} attempt(s): {message}")]
    Transport { attempts: u32, message: String },
    #[error("request timed out after {attempts} attempt(s)")]
    Timeout { attempts: u32 },
    #[error("rate limited after {attempts} attempt(s)")]
    RateLimited {
        attempts: u32,
        retry_after: Option<Duration>,
    },
    #[error("server error {status} after {attempts} attempt(s)")]
    Server { status: u16, attempts: u32 },
    #[error("authentication rejected (status {status}); check the credentials variable `{credentials_env}`")]
    Auth {
        status: u16,
        credentials_env: String,
    },
    #[error("HTTP {status}: {message}")]
    Http { status: u16, message: String },
    #[error("malformed response: {0}")]
    MalformedResponse(String),
    #[error("backend configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl BackendError {
    /// Transport-level failures worth another attempt.
    pub fn is_retryable(&self) -> bool {
        matches!(
            self,
            BackendError::Transport { .. }
                | BackendError::Timeout { .. }
                | BackendError::RateLimited { .. }
                | BackendError::Server { .. }
        )
    }

    pub fn is_rate_limit(&self) -> bool {
        matches!(self, BackendError::RateLimited { .. })
    }

    pub(crate) fn with_attempts(self, n: u32) -> Self {
        match self {
            BackendError::Transport { message, .. } => BackendError::Transport {
                attempts: n,
                message,
            },
            BackendError::Timeout { .. } => BackendError::Timeout { attempts: n },
            BackendError::RateLimited { retry_after, .. } => BackendError::RateLimited {
                attempts: n,
                retry_after,
            },
            BackendError::Server { status, .. } => BackendError::Server {
                status,
                attempts: n,
            },
            other => other,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum BackendKind {
    Scripted,
    Http,
}

fn default_model() -> String {
    "gpt-4o-mini".into()
}
fn default_temperature() -> f64 {
    0.2
}
fn default_timeout() -> f64 {
    60.0
}
fn default_retries() -> u32 {
    3
}
fn default_retry_base() -> u64 {
    500
}
fn default_retry_max() -> u64 {
    30_000
}

/// Upper bound on `max_retries`.
pub const MAX_RETRIES_LIMIT: u32 = 10;

/// Backend configuration file (TOML). Relative paths are resolved against
/// the directory holding the file.
#[derive(Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct BackendConfig {
    pub kind: BackendKind,
    #[serde(default = "default_model")]
    pub model: String,
    #[serde(default = "default_temperature")]
    pub temperature: f64,
    #[serde(default)]
    pub endpoint: Option<String>,
    /// Name of the environment variable holding the API key. The key itself
    /// never appears in configuration, logs or errors.
    #[serde(default)]
    pub credentials_env: Option<String>,
    #[serde(default = "default_timeout")]
    pub request_timeout_secs: f64,
    #[serde(default = "default_retries")]
    pub max_retries: u32,
    #[serde(default = "default_retry_base")]
    pub retry_base_ms: u64,
    #[serde(default = "default_retry_max")]
    pub retry_max_ms: u64,
    /// Script files for the scripted backend, merged in order.
    #[serde(default)]
    pub scripts: Vec<PathBuf>,
    /// Optional JSONL file receiving every request/response pair.
    #[serde(default)]
    pub capture: Option<PathBuf>,
}

impl fmt::Debug for BackendConfig {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("BackendConfig")
            .field("kind", &self.kind)
            .field("model", &self.model)
            .field("temperature", &self.temperature)
            .field("endpoint", &self.endpoint)
            .field("credentials_env", &self.credentials_env)
            .field("max_retries", &self.max_retries)
            .finish_non_exhaustive()
    }
}

impl BackendConfig {
    pub fn scripted(scripts: Vec<PathBuf>) -> Self {
        Self {
            kind: BackendKind::Scripted,
            model: default_model(),
            temperature: default_temperature(),
            endpoint: None,
            credentials_env: None,
            request_timeout_secs: default_timeout(),
            max_retries: default_retries(),
            retry_base_ms: default_retry_base(),
            retry_max_ms: default_retry_max(),
            scripts,
            capture: None,
        }
    }

    pub fn http(endpoint: impl Into<String>, credentials_env: Option<String>) -> Self {
        Self {
            kind: BackendKind::Http,
            endpoint: Some(endpoint.into()),
            credentials_env,
            scripts: Vec::new(),
            ..Self::scripted(Vec::new())
        }
    }

    pub fn parse(text: &str, base_dir: &Path) -> Result<Self, BackendError> {
        let mut config: Self =
            toml::from_str(text).map_err(|e| BackendError::Config(e.to_string()))?;
        config.resolve_paths(base_dir);
        config.validate()?;
        Ok(config)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text, path.parent().unwrap_or(Path::new(".")))
    }

    fn resolve_paths(&mut self, base_dir: &Path) {
        for script in &mut self.scripts {
            if script.is_relative() {
                *script = base_dir.join(&*script);
            }
        }
        if let Some(capture) = &mut self.capture {
            if capture.is_relative() {
                *capture = base_dir.join(&*capture);
            }
        }
    }

    pub fn validate(&self) -> Result<(), BackendError> {
        if !(0.0..=1.0).contains(&self.temperature) {
            return Err(BackendError::Config(format!(
                "temperature {} is outside [0, 1]",
                self.temperature
            )));
        }
        if self.max_retries > MAX_RETRIES_LIMIT {
            return Err(BackendError::Config(format!(
                "max_retries {} exceeds {MAX_RETRIES_LIMIT}",
                self.max_retries
            )));
        }
        if self.request_timeout_secs.is_nan() || self.request_timeout_secs <= 0.0 {
            return Err(BackendError::Config(
                "request_timeout_secs must be positive".into(),
            ));
        }
        match self.kind {
            BackendKind::Http if self.endpoint.is_none() => Err(BackendError::Config(
                "http backend needs an `endpoint`".into(),
            )),
            BackendKind::Scripted if self.scripts.is_empty() => Err(BackendError::Config(
                "scripted backend needs at least one script".into(),
            )),
            _ => Ok(()),
        }
    }

    pub fn retry_policy(&self) -> RetryPolicy {
        RetryPolicy {
            max_retries: self.max_retries,
            base_delay: Duration::from_millis(self.retry_base_ms),
            max_delay: Duration::from_millis(self.retry_max_ms),
        }
    }

    pub fn build(&self) -> Result<Arc<dyn ChatBackend>, BackendError> {
        self.validate()?;
        let inner: Arc<dyn ChatBackend> = match self.kind {
            BackendKind::Scripted => Arc::new(ScriptedBackend::from_files(&self.scripts)?),
            BackendKind::Http => Arc::new(HttpBackend::new(self)?),
        };
        match &self.capture {
            Some(path) => Ok(Arc::new(CapturingBackend::create(inner, path)?)),
            None => Ok(inner),
        }
    }
}
