//! Event-sourced grading sessions.
//!
//! A session's only source of truth is its event list. Every change goes
//! through [`Session::apply`], so replaying a persisted log rebuilds exactly
//! the session that wrote it.
//!
//! ```text
//! created -> evaluating -> feedback_ready -> (challenge_in_progress -> evaluating -> feedback_ready)* -> closed
//! ```
//!
//! The in-progress states only exist while an engine call is running; a
//! failed call records `evaluation_failed` and falls back to the last
//! stable state.

mod clock;
mod engine;
mod store;

use std::fmt;

use chrono::{DateTime, Utc};
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::agents::{AgentError, Phase, Transcript, TranscriptEntry};
use crate::backend::BackendError;
use crate::rubric::{validate_rubric, RubricDimension, RubricError};
use crate::teacher::{DimensionReport, FeedbackReport, TeacherError};

pub use clock::{Clock, SteppingClock, SystemClock};
pub use engine::{Engine, EngineConfig};
pub use store::{IndexEntry, SessionStore};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionState {
    Created,
    Evaluating,
    FeedbackReady,
    ChallengeInProgress,
    Closed,
}

impl fmt::Display for SessionState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            SessionState::Created => "created",
            SessionState::Evaluating => "evaluating",
            SessionState::FeedbackReady => "feedback_ready",
            SessionState::ChallengeInProgress => "challenge_in_progress",
            SessionState::Closed => "closed",
        })
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "payload", rename_all = "snake_case")]
#[allow(clippy::large_enum_variant)]
pub enum EventBody {
    EssaySubmitted {
        session_id: String,
        essay: String,
        rubric: Vec<RubricDimension>,
    },
    DiscussionEntry {
        dimension_key: String,
        phase: Phase,
        #[serde(flatten)]
        entry: TranscriptEntry,
    },
    ReportIssued {
        report: FeedbackReport,
    },
    ChallengeSubmitted {
        dimension_key: String,
        challenge: u32,
        text: String,
    },
    ReportRevised {
        dimension_key: String,
        challenge: u32,
        entry: DimensionReport,
    },
    EvaluationFailed {
        phase: Phase,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        dimension_key: Option<String>,
        #[serde(default, skip_serializing_if = "Option::is_none")]
        student_text: Option<String>,
        error: String,
    },
    Closed {},
}

impl EventBody {
    pub fn kind(&self) -> &'static str {
        match self {
            EventBody::EssaySubmitted { .. } => "essay_submitted",
            EventBody::DiscussionEntry { .. } => "discussion_entry",
            EventBody::ReportIssued { .. } => "report_issued",
            EventBody::ChallengeSubmitted { .. } => "challenge_submitted",
            EventBody::ReportRevised { .. } => "report_revised",
            EventBody::EvaluationFailed { .. } => "evaluation_failed",
            EventBody::Closed {} => "closed",
        }
    }
}

/// One line of a session log.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct SessionEvent {
    pub sequence: u64,
    pub timestamp: DateTime<Utc>,
    #[serde(flatten)]
    pub body: EventBody,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum SessionError {
    #[error("essay is empty")]
    EmptyEssay,
    #[error("challenge text is empty")]
    EmptyChallenge,
    #[error("invalid session id `{0}`: use 1-128 letters, digits, `-` or `_`")]
    InvalidId(String),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error("session is {actual}; this needs {expected}")]
    WrongState {
        expected: SessionState,
        actual: SessionState,
    },
    #[error("{dimension}: {source}")]
    Agent {
        dimension: String,
        #[source]
        source: AgentError,
    },
    #[error("{dimension}: {source}")]
    Teacher {
        dimension: String,
        #[source]
        source: TeacherError,
    },
    #[error("event log is empty")]
    EmptyLog,
    #[error("event log corrupt at sequence {sequence}: {message}")]
    Corrupt { sequence: u64, message: String },
    #[error("session `{0}` not found")]
    NotFound(String),
    #[error("session `{0}` already exists")]
    AlreadyExists(String),
    #[error("engine configuration: {0}")]
    Config(String),
    #[error("{0}")]
    Io(String),
}

impl SessionError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            SessionError::Agent { source, .. } => source.backend_error(),
            SessionError::Teacher { source, .. } => source.backend_error(),
            _ => None,
        }
    }

    pub fn is_size_limit(&self) -> bool {
        matches!(
            self,
            SessionError::Teacher {
                source: TeacherError::Framework(crate::af::AfError::SizeLimit { .. }),
                ..
            }
        )
    }
}

pub fn validate_session_id(id: &str) -> Result<(), SessionError> {
    let ok = !id.is_empty()
        && id.len() <= 128
        && id
            .chars()
            .all(|c| c.is_ascii_alphanumeric() || c == '-' || c == '_');
    if ok {
        Ok(())
    } else {
        Err(SessionError::InvalidId(id.to_string()))
    }
}

/// A fresh random session id.
pub fn new_session_id() -> String {
    uuid::Uuid::new_v4().simple().to_string()
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize)]
pub struct Session {
    id: String,
    essay: String,
    rubric: Vec<RubricDimension>,
    state: SessionState,
    history: Vec<SessionEvent>,
    current_report: Option<FeedbackReport>,
}

impl Session {
    pub fn id(&self) -> &str {
        &self.id
    }

    pub fn essay(&self) -> &str {
        &self.essay
    }

    pub fn rubric(&self) -> &[RubricDimension] {
        &self.rubric
    }

    pub fn state(&self) -> SessionState {
        self.state
    }

    pub fn history(&self) -> &[SessionEvent] {
        &self.history
    }

    pub fn current_report(&self) -> Option<&FeedbackReport> {
        self.current_report.as_ref()
    }

    /// Challenges submitted so far for one dimension.
    pub fn challenge_count(&self, dimension_key: &str) -> u32 {
        self.history
            .iter()
            .filter(|e| matches!(&e.body, EventBody::ChallengeSubmitted { dimension_key: d, .. } if d == dimension_key))
            .count() as u32
    }

    /// The discussion of one dimension in one phase, rebuilt from the log.
    pub fn transcript(&self, dimension_key: &str, phase: Phase) -> Transcript {
        let mut t = Transcript::new();
        for e in &self.history {
            if let EventBody::DiscussionEntry {
                dimension_key: d,
                phase: p,
                entry,
            } = &e.body
            {
                if d == dimension_key && *p == phase {
                    // Entries were validated when first appended.
                    let _ = t.push(entry.clone());
                }
            }
        }
        t
    }

    /// Starts a session: validates inputs and records `essay_submitted`.
    pub fn start(
        id: impl Into<String>,
        essay: &str,
        rubric: Vec<RubricDimension>,
        timestamp: DateTime<Utc>,
    ) -> Result<Self, SessionError> {
        let id = id.into();
        validate_session_id(&id)?;
        if essay.trim().is_empty() {
            return Err(SessionError::EmptyEssay);
        }
        validate_rubric(&rubric)?;
        Session::from_first(SessionEvent {
            sequence: 0,
            timestamp,
            body: EventBody::EssaySubmitted {
                session_id: id,
                essay: essay.to_string(),
                rubric,
            },
        })
    }

    fn from_first(event: SessionEvent) -> Result<Self, SessionError> {
        let corrupt = |message: &str| SessionError::Corrupt {
            sequence: event.sequence,
            message: message.to_string(),
        };
        if event.sequence != 0 {
            return Err(SessionError::Corrupt {
                sequence: event.sequence,
                message: "log does not start at sequence 0".into(),
            });
        }
        let EventBody::EssaySubmitted {
            session_id,
            essay,
            rubric,
        } = &event.body
        else {
            return Err(corrupt("first event must be essay_submitted"));
        };
        validate_session_id(session_id).map_err(|e| corrupt(&e.to_string()))?;
        validate_rubric(rubric).map_err(|e| corrupt(&e.to_string()))?;
        if essay.trim().is_empty() {
            return Err(corrupt("essay is empty"));
        }
        Ok(Self {
            id: session_id.clone(),
            essay: essay.clone(),
            rubric: rubric.clone(),
            state: SessionState::Created,
            history: vec![event],
            current_report: None,
        })
    }

    /// State to return to when an operation fails or finishes.
    fn stable_state(&self) -> SessionState {
        if self.current_report.is_some() {
            SessionState::FeedbackReady
        } else {
            SessionState::Created
        }
    }

    pub(crate) fn require(&self, expected: SessionState) -> Result<(), SessionError> {
        if self.state != expected {
            return Err(SessionError::WrongState {
                expected,
                actual: self.state,
            });
        }
        Ok(())
    }

    /// Marks an engine call as running. Not an event: logs only ever hold
    /// finished operations.
    pub(crate) fn set_transient(&mut self, state: SessionState) {
        self.state = state;
    }

    pub(crate) fn record(
        &mut self,
        clock: &dyn Clock,
        body: EventBody,
    ) -> Result<(), SessionError> {
        let event = SessionEvent {
            sequence: self.next_sequence(),
            timestamp: clock.now(),
            body,
        };
        self.apply(event)
    }

    pub(crate) fn next_sequence(&self) -> u64 {
        self.history.len() as u64
    }

    /// Applies the next event, checking it is legal in the current state.
    pub fn apply(&mut self, event: SessionEvent) -> Result<(), SessionError> {
        let sequence = event.sequence;
        let corrupt = |message: String| SessionError::Corrupt { sequence, message };
        if sequence != self.next_sequence() {
            return Err(corrupt(format!(
                "expected sequence {}",
                self.next_sequence()
            )));
        }
        if let Some(prev) = self.history.last() {
            if event.timestamp < prev.timestamp {
                return Err(corrupt("timestamp goes backwards".into()));
            }
        }
        let in_progress = matches!(
            self.state,
            SessionState::Evaluating | SessionState::ChallengeInProgress
        );
        match &event.body {
            EventBody::EssaySubmitted { .. } => {
                return Err(corrupt("duplicate essay_submitted".into()))
            }
            EventBody::DiscussionEntry {
                dimension_key,
                phase,
                entry,
            } => {
                self.dimension(dimension_key)
                    .map_err(|e| corrupt(e.to_string()))?;
                match (phase, self.state) {
                    (Phase::Initial, SessionState::Created | SessionState::Evaluating)
                        if self.current_report.is_none() =>
                    {
                        self.state = SessionState::Evaluating
                    }
                    (
                        Phase::Challenge(k),
                        SessionState::ChallengeInProgress | SessionState::Evaluating,
                    ) if self.pending_challenge() == Some((dimension_key.as_str(), *k)) => {
                        self.state = SessionState::Evaluating
                    }
                    _ => {
                        return Err(corrupt(format!(
                            "discussion entry for {dimension_key}/{phase} in state {}",
                            self.state
                        )))
                    }
                }
                let mut t = self.transcript(dimension_key, *phase);
                t.push(entry.clone()).map_err(|e| corrupt(e.to_string()))?;
            }
            EventBody::ReportIssued { report } => {
                if !matches!(self.state, SessionState::Created | SessionState::Evaluating)
                    || self.current_report.is_some()
                {
                    return Err(corrupt(format!("report_issued in state {}", self.state)));
                }
                let keys: Vec<&str> = report
                    .entries
                    .iter()
                    .map(|e| e.dimension_key.as_str())
                    .collect();
                let expected: Vec<&str> = self.rubric.iter().map(|d| d.key.as_str()).collect();
                if keys != expected {
                    return Err(corrupt("report dimensions do not match the rubric".into()));
                }
                for entry in &report.entries {
                    entry
                        .framework
                        .verify()
                        .map_err(|e| corrupt(e.to_string()))?;
                }
                self.current_report = Some(report.clone());
                self.state = SessionState::FeedbackReady;
            }
            EventBody::ChallengeSubmitted {
                dimension_key,
                challenge,
                text,
            } => {
                if self.state != SessionState::FeedbackReady {
                    return Err(corrupt(format!(
                        "challenge_submitted in state {}",
                        self.state
                    )));
                }
                self.dimension(dimension_key)
                    .map_err(|e| corrupt(e.to_string()))?;
                if *challenge != self.challenge_count(dimension_key) + 1 {
                    return Err(corrupt(format!(
                        "challenge number {challenge} out of order"
                    )));
                }
                if text.trim().is_empty() {
                    return Err(corrupt("empty challenge text".into()));
                }
                self.state = SessionState::ChallengeInProgress;
            }
            EventBody::ReportRevised {
                dimension_key,
                challenge,
                entry,
            } => {
                if !in_progress
                    || self.pending_challenge() != Some((dimension_key.as_str(), *challenge))
                {
                    return Err(corrupt(
                        "report_revised without a matching challenge".into(),
                    ));
                }
                if &entry.dimension_key != dimension_key {
                    return Err(corrupt("revised entry is for another dimension".into()));
                }
                entry
                    .framework
                    .verify()
                    .map_err(|e| corrupt(e.to_string()))?;
                let report = self
                    .current_report
                    .as_mut()
                    .ok_or_else(|| corrupt("no report to revise".into()))?;
                report
                    .replace(entry.clone())
                    .map_err(|e| corrupt(e.to_string()))?;
                self.state = SessionState::FeedbackReady;
            }
            EventBody::EvaluationFailed { .. } => {
                if self.state == SessionState::Closed {
                    return Err(corrupt("evaluation_failed after close".into()));
                }
                self.state = self.stable_state();
            }
            EventBody::Closed {} => {
                if self.state == SessionState::Closed || in_progress {
                    return Err(corrupt(format!("closed in state {}", self.state)));
                }
                self.state = SessionState::Closed;
            }
        }
        self.history.push(event);
        Ok(())
    }

    /// The most recent challenge if no revision has answered it yet.
    fn pending_challenge(&self) -> Option<(&str, u32)> {
        for e in self.history.iter().rev() {
            match &e.body {
                EventBody::ChallengeSubmitted {
                    dimension_key,
                    challenge,
                    ..
                } => return Some((dimension_key, *challenge)),
                EventBody::ReportRevised { .. }
                | EventBody::EvaluationFailed { .. }
                | EventBody::ReportIssued { .. } => return None,
                _ => {}
            }
        }
        None
    }

    pub fn dimension(&self, key: &str) -> Result<&RubricDimension, SessionError> {
        Ok(crate::rubric::find_dimension(&self.rubric, key)?)
    }

    /// Full check of every report entry against its framework snapshot.
    pub fn audit(&self) -> Result<(), SessionError> {
        let Some(report) = &self.current_report else {
            return Ok(());
        };
        for entry in &report.entries {
            let dim = self.dimension(&entry.dimension_key)?;
            let n = entry.framework.arguments.len().max(1);
            entry
                .verify(dim, n)
                .map_err(|source| SessionError::Teacher {
                    dimension: entry.dimension_key.clone(),
                    source,
                })?;
        }
        Ok(())
    }
}

/// Rebuilds a session from its log.
pub fn replay(events: impl IntoIterator<Item = SessionEvent>) -> Result<Session, SessionError> {
    let mut events = events.into_iter();
    let first = events.next().ok_or(SessionError::EmptyLog)?;
    let mut session = Session::from_first(first)?;
    for e in events {
        session.apply(e)?;
    }
    if matches!(
        session.state,
        SessionState::Evaluating | SessionState::ChallengeInProgress
    ) {
        // A log written by the engine never stops mid-operation.
        return Err(SessionError::Corrupt {
            sequence: session.next_sequence(),
            message: format!("log ends while {}", session.state),
        });
    }
    Ok(session)
}
