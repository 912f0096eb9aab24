//! OpenAI-compatible chat-completions client.

use std::fmt;
use std::time::Duration;

use reqwest::blocking::Client;
use reqwest::StatusCode;
use serde::{Deserialize, Serialize};

use super::{BackendConfig, BackendError, ChatBackend, ChatMessage, ChatRequest, RetryPolicy};

const MAX_ERROR_BODY_CHARS: usize = 300;

#[derive(Serialize)]
struct WireRequest<'a> {
    model: &'a str,
    temperature: f64,
    messages: &'a [ChatMessage],
}

#[derive(Deserialize)]
struct WireResponse {
    choices: Vec<WireChoice>,
}

#[derive(Deserialize)]
struct WireChoice {
    message: WireMessage,
}

#[derive(Deserialize)]
struct WireMessage {
    content: Option<String>,
}

pub struct HttpBackend {
    client: Client,
    endpoint: String,
    model: String,
    temperature: f64,
    credentials_env: Option<String>,
    api_key: Option<String>,
    retry: RetryPolicy,
}

impl fmt::Debug for HttpBackend {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("HttpBackend")
            .field("endpoint", &self.endpoint)
            .field("model", &self.model)
            .field("credentials_env", &self.credentials_env)
            .field("has_api_key", &self.api_key.is_some())
            .finish()
    }
}

impl HttpBackend {
    pub fn new(config: &BackendConfig) -> Result<Self, BackendError> {
        let endpoint = config
            .endpoint
            .clone()
            .ok_or_else(|| BackendError::Config("http backend needs an `endpoint`".into()))?;
        let api_key = match &config.credentials_env {
            Some(var) => Some(std::env::var(var).map_err(|_| {
                BackendError::Config(format!("environment variable `{var}` is not set"))
            })?),
            None => None,
        };
        let client = Client::builder()
            .timeout(Duration::from_secs_f64(config.request_timeout_secs))
            .build()
            .map_err(|e| BackendError::Config(format!("cannot build HTTP client: {e}")))?;
        Ok(Self {
            client,
            endpoint,
            model: config.model.clone(),
            temperature: config.temperature,
            credentials_env: config.credentials_env.clone(),
            api_key,
            retry: config.retry_policy(),
        })
    }

    fn send_once(&self, request: &ChatRequest) -> Result<String, BackendError> {
        let body = WireRequest {
            model: &self.model,
            temperature: self.temperature,
            messages: &request.messages,
        };
        let mut builder = self.client.post(&self.endpoint).json(&body);
        if let Some(key) = &self.api_key {
            builder = builder.bearer_auth(key);
        }
        let response = builder.send().map_err(|e| self.transport_error(e))?;
        let status = response.status();
        if status.is_success() {
            let text = response.text().map_err(|e| self.transport_error(e))?;
            return parse_reply(&text);
        }

        let retry_after = response
            .headers()
            .get(reqwest::header::RETRY_AFTER)
            .and_then(|v| v.to_str().ok())
            .and_then(|v| v.trim().parse::<f64>().ok())
            .map(Duration::from_secs_f64);
        let body = response.text().unwrap_or_default();
        Err(match status {
            StatusCode::TOO_MANY_REQUESTS => BackendError::RateLimited {
                attempts: 1,
                retry_after,
            },
            StatusCode::UNAUTHORIZED | StatusCode::FORBIDDEN => BackendError::Auth {
                status: status.as_u16(),
                credentials_env: self.credentials_env.clone().unwrap_or_default(),
            },
            s if s.is_server_error() => BackendError::Server {
                status: s.as_u16(),
                attempts: 1,
            },
            s => BackendError::Http {
                status: s.as_u16(),
                message: self.scrub(&truncate(&body, MAX_ERROR_BODY_CHARS)),
            },
        })
    }

    fn transport_error(&self, e: reqwest::Error) -> BackendError {
        if e.is_timeout() {
            BackendError::Timeout { attempts: 1 }
        } else {
            BackendError::Transport {
                attempts: 1,
                message: self.scrub(&e.without_url().to_string()),
            }
        }
    }

    /// Servers sometimes echo the bearer token back; never pass it on.
    fn scrub(&self, text: &str) -> String {
        match &self.api_key {
            Some(key) if !key.is_empty() => text.replace(key.as_str(), "[redacted]"),
            _ => text.to_string(),
        }
    }
}

fn truncate(text: &str, max_chars: usize) -> String {
    match text.char_indices().nth(max_chars) {
        Some((idx, _)) => format!("{}...", &text[..idx]),
        None => text.to_string(),
    }
}

fn parse_reply(body: &str) -> Result<String, BackendError> {
    let parsed: WireResponse = serde_json::from_str(body)
        .map_err(|e| BackendError::MalformedResponse(format!("invalid JSON body: {e}")))?;
    parsed
        .choices
        .into_iter()
        .next()
        .and_then(|c| c.message.content)
        .ok_or_else(|| BackendError::MalformedResponse("no message content in first choice".into()))
}

impl ChatBackend for HttpBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        self.retry.run(|_| self.send_once(request))
    }
}
