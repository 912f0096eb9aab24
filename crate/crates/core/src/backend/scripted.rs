//! Deterministic test double.
//!
//! A script is a JSON document:
//!
//! ```json
//! { "exchanges": [
//!     { "tag": "issue/initial/Mike/review", "response": "level: 1 ..." },
//!     { "tag": "*/challenger/rebuttal", "session": "e01-issue", "response": "..." },
//!     { "messages": [{"role": "user", "content": "hi"}], "response": "hello" }
//! ] }
//! ```
//!
//! Tagged exchanges match on the request tag (with `*` wildcards), and
//! optionally on the session id (also globbed), the retry attempt, and a
//! substring of the concatenated message text. Exact exchanges match the
//! full message list and are what a capture file replays into. Exactly one
//! exchange may match a request; zero or several is an error.

use std::path::Path;
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{BackendError, CaptureRecord, ChatBackend, ChatMessage, ChatRequest};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScriptedExchange {
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub tag: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub session: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub attempt: Option<u32>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub contains: Option<String>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub messages: Option<Vec<ChatMessage>>,
    pub response: String,
}

impl ScriptedExchange {
    pub fn tagged(tag: impl Into<String>, response: impl Into<String>) -> Self {
        Self {
            tag: Some(tag.into()),
            session: None,
            attempt: None,
            contains: None,
            messages: None,
            response: response.into(),
        }
    }

    pub fn exact(messages: Vec<ChatMessage>, response: impl Into<String>) -> Self {
        Self {
            tag: None,
            session: None,
            attempt: None,
            contains: None,
            messages: Some(messages),
            response: response.into(),
        }
    }

    pub fn in_session(mut self, session: impl Into<String>) -> Self {
        self.session = Some(session.into());
        self
    }

    pub fn on_attempt(mut self, attempt: u32) -> Self {
        self.attempt = Some(attempt);
        self
    }

    pub fn containing(mut self, needle: impl Into<String>) -> Self {
        self.contains = Some(needle.into());
        self
    }

    fn check(&self, index: usize) -> Result<(), BackendError> {
        match (&self.tag, &self.messages) {
            (Some(_), None) | (None, Some(_)) => Ok(()),
            _ => Err(BackendError::Config(format!(
                "exchange {index}: set exactly one of `tag` or `messages`"
            ))),
        }
    }

    fn matches(&self, request: &ChatRequest, text: &str) -> bool {
        if let Some(messages) = &self.messages {
            return *messages == request.messages;
        }
        let Some(tag) = &self.tag else { return false };
        if !glob_match(tag, &request.tag) {
            return false;
        }
        if let Some(session) = &self.session {
            match &request.session {
                Some(s) if glob_match(session, s) => {}
                _ => return false,
            }
        }
        if self.attempt.is_some_and(|a| a != request.attempt) {
            return false;
        }
        if let Some(needle) = &self.contains {
            if !text.contains(needle.as_str()) {
                return false;
            }
        }
        true
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct Script {
    pub exchanges: Vec<ScriptedExchange>,
}

impl Script {
    pub fn parse(text: &str) -> Result<Self, BackendError> {
        let script: Self =
            serde_json::from_str(text).map_err(|e| BackendError::Config(format!("script: {e}")))?;
        for (i, ex) in script.exchanges.iter().enumerate() {
            ex.check(i)?;
        }
        Ok(script)
    }

    pub fn load(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        Self::parse(&text).map_err(|e| match e {
            BackendError::Config(m) => BackendError::Config(format!("{}: {m}", path.display())),
            other => other,
        })
    }
}

/// `*` matches any run of characters, everything else matches literally.
pub fn glob_match(pattern: &str, text: &str) -> bool {
    let p: Vec<char> = pattern.chars().collect();
    let t: Vec<char> = text.chars().collect();
    let (mut pi, mut ti) = (0, 0);
    let mut star: Option<(usize, usize)> = None;
    while ti < t.len() {
        if pi < p.len() && p[pi] == '*' {
            star = Some((pi, ti));
            pi += 1;
        } else if pi < p.len() && p[pi] == t[ti] {
            pi += 1;
            ti += 1;
        } else if let Some((sp, st)) = star {
            pi = sp + 1;
            ti = st + 1;
            star = Some((sp, st + 1));
        } else {
            return false;
        }
    }
    p[pi..].iter().all(|&c| c == '*')
}

/// Replays canned replies. The exchange table is read-only after
/// construction; received requests are logged for inspection.
#[derive(Debug, Default)]
pub struct ScriptedBackend {
    exchanges: Vec<ScriptedExchange>,
    received: Mutex<Vec<ChatRequest>>,
}

impl ScriptedBackend {
    pub fn new(exchanges: Vec<ScriptedExchange>) -> Self {
        Self {
            exchanges,
            received: Mutex::new(Vec::new()),
        }
    }

    pub fn from_script(script: Script) -> Self {
        Self::new(script.exchanges)
    }

    /// Merges several script files, in order.
    pub fn from_files(paths: &[impl AsRef<Path>]) -> Result<Self, BackendError> {
        let mut exchanges = Vec::new();
        for path in paths {
            exchanges.extend(Script::load(path.as_ref())?.exchanges);
        }
        Ok(Self::new(exchanges))
    }

    /// Exact-match exchanges for every successful call in a capture file.
    pub fn from_capture(path: &Path) -> Result<Self, BackendError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BackendError::Io(format!("{}: {e}", path.display())))?;
        let mut exchanges: Vec<ScriptedExchange> = Vec::new();
        for (i, line) in text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
        {
            let record: CaptureRecord = serde_json::from_str(line).map_err(|e| {
                BackendError::Config(format!("{} line {}: {e}", path.display(), i + 1))
            })?;
            if let Some(response) = record.response {
                if !exchanges
                    .iter()
                    .any(|ex| ex.messages.as_ref() == Some(&record.request.messages))
                {
                    exchanges.push(ScriptedExchange::exact(record.request.messages, response));
                }
            }
        }
        Ok(Self::new(exchanges))
    }

    pub fn received(&self) -> Vec<ChatRequest> {
        self.received
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .clone()
    }

    pub fn exchanges(&self) -> &[ScriptedExchange] {
        &self.exchanges
    }
}

impl ChatBackend for ScriptedBackend {
    fn complete(&self, request: &ChatRequest) -> Result<String, BackendError> {
        request.validate()?;
        self.received
            .lock()
            .unwrap_or_else(|e| e.into_inner())
            .push(request.clone());
        let text = request.text();
        let mut hits = self
            .exchanges
            .iter()
            .filter(|ex| ex.matches(request, &text));
        let first = hits.next();
        let extra = hits.count();
        match (first, extra) {
            (Some(ex), 0) => Ok(ex.response.clone()),
            (Some(_), n) => Err(BackendError::AmbiguousScript {
                tag: request.tag.clone(),
                session: request.session.clone(),
                count: n + 1,
            }),
            (None, _) => Err(BackendError::NoScriptMatch {
                tag: request.tag.clone(),
                session: request.session.clone(),
                attempt: request.attempt,
            }),
        }
    }
}
