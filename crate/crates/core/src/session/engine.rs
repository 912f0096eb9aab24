use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::{Clock, EventBody, Session, SessionError, SessionState, SystemClock};
use crate::agents::{
    default_personas, run_discussion, AgentContext, AgentPersona, DiscussionConfig, Phase,
    Transcript,
};
use crate::backend::ChatBackend;
use crate::prompts::Templates;
use crate::rubric::RubricDimension;
use crate::teacher::{
    evaluate_dimension, reevaluate_dimension, DimensionReport, FeedbackReport, TeacherConfig,
};

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EngineConfig {
    #[serde(default)]
    pub discussion: DiscussionConfig,
    #[serde(default)]
    pub teacher: TeacherConfig,
    /// Empty means the default personas for `discussion.num_agents`.
    #[serde(default)]
    pub personas: Vec<AgentPersona>,
    /// Run dimensions one after another instead of in parallel.
    #[serde(default)]
    pub sequential: bool,
}

impl EngineConfig {
    pub fn personas(&self) -> Vec<AgentPersona> {
        if self.personas.is_empty() {
            default_personas(self.discussion.num_agents)
        } else {
            self.personas.clone()
        }
    }

    pub fn validate(&self) -> Result<(), SessionError> {
        self.discussion
            .validate()
            .map_err(|e| SessionError::Config(e.to_string()))?;
        if !self.personas.is_empty() && self.personas.len() != self.discussion.num_agents {
            return Err(SessionError::Config(format!(
                "{} personas configured for num_agents = {}",
                self.personas.len(),
                self.discussion.num_agents
            )));
        }
        if self.teacher.max_arguments == 0
            || self.teacher.max_arguments > crate::af::HARD_MAX_ARGUMENTS
        {
            return Err(SessionError::Config(format!(
                "max_arguments must be in 1..={}",
                crate::af::HARD_MAX_ARGUMENTS
            )));
        }
        Ok(())
    }
}

/// Runs the discussion, reasoning and challenge steps for sessions.
pub struct Engine {
    backend: Arc<dyn ChatBackend>,
    templates: Arc<Templates>,
    config: EngineConfig,
    clock: Arc<dyn Clock>,
}

impl Engine {
    pub fn new(backend: Arc<dyn ChatBackend>, config: EngineConfig) -> Result<Self, SessionError> {
        config.validate()?;
        Ok(Self {
            backend,
            templates: Arc::new(Templates::builtin()),
            config,
            clock: Arc::new(SystemClock),
        })
    }

    pub fn with_templates(mut self, templates: Templates) -> Self {
        self.templates = Arc::new(templates);
        self
    }

    pub fn with_template_dir(self, dir: &Path) -> Result<Self, SessionError> {
        let t = Templates::load_dir(dir).map_err(|e| SessionError::Config(e.to_string()))?;
        Ok(self.with_templates(t))
    }

    pub fn with_clock(mut self, clock: Arc<dyn Clock>) -> Self {
        self.clock = clock;
        self
    }

    pub fn config(&self) -> &EngineConfig {
        &self.config
    }

    pub fn backend(&self) -> &Arc<dyn ChatBackend> {
        &self.backend
    }

    pub fn start_session(
        &self,
        id: impl Into<String>,
        essay: &str,
        rubric: Vec<RubricDimension>,
    ) -> Result<Session, SessionError> {
        Session::start(id, essay, rubric, self.clock.now())
    }

    fn discuss_and_grade(
        &self,
        session_id: &str,
        essay: &str,
        dimension: &RubricDimension,
        phase: Phase,
        student_text: Option<&str>,
        prior: Option<&DimensionReport>,
    ) -> Result<(Transcript, DimensionReport), SessionError> {
        let ctx = AgentContext::new(self.backend.as_ref(), &self.templates)
            .in_session(Some(session_id))
            .in_phase(phase);
        let ctx = AgentContext {
            parse_retries: self.config.teacher.parse_retries,
            ..ctx
        };
        let personas = self.config.personas();
        let transcript = run_discussion(
            &ctx,
            essay,
            dimension,
            &self.config.discussion,
            &personas,
            student_text,
        )
        .map_err(|source| SessionError::Agent {
            dimension: dimension.key.clone(),
            source,
        })?;
        let report = match prior {
            None => evaluate_dimension(&ctx, &self.config.teacher, dimension, &transcript),
            Some(p) => reevaluate_dimension(&ctx, &self.config.teacher, dimension, &transcript, p),
        }
        .map_err(|source| SessionError::Teacher {
            dimension: dimension.key.clone(),
            source,
        })?;
        Ok((transcript, report))
    }

    /// Discusses and grades every dimension. Nothing but a failure event
    /// is recorded unless all dimensions succeed.
    pub fn run_initial_evaluation(
        &self,
        session: &mut Session,
    ) -> Result<FeedbackReport, SessionError> {
        session.require(SessionState::Created)?;
        session.set_transient(SessionState::Evaluating);
        let id = session.id().to_string();
        let essay = session.essay().to_string();
        let rubric = session.rubric().to_vec();

        let results: Vec<Result<(Transcript, DimensionReport), SessionError>> =
            if self.config.sequential {
                rubric
                    .iter()
                    .map(|d| self.discuss_and_grade(&id, &essay, d, Phase::Initial, None, None))
                    .collect()
            } else {
                std::thread::scope(|scope| {
                    let handles: Vec<_> = rubric
                        .iter()
                        .map(|d| {
                            let (id, essay) = (&id, &essay);
                            scope.spawn(move || {
                                self.discuss_and_grade(id, essay, d, Phase::Initial, None, None)
                            })
                        })
                        .collect();
                    handles
                        .into_iter()
                        .map(|h| h.join().expect("dimension worker panicked"))
                        .collect()
                })
            };

        session.set_transient(SessionState::Created);
        let mut done = Vec::with_capacity(results.len());
        for r in results {
            match r {
                Ok(v) => done.push(v),
                Err(e) => {
                    let dimension = match &e {
                        SessionError::Agent { dimension, .. }
                        | SessionError::Teacher { dimension, .. } => Some(dimension.clone()),
                        _ => None,
                    };
                    session.record(
                        self.clock.as_ref(),
                        EventBody::EvaluationFailed {
                            phase: Phase::Initial,
                            dimension_key: dimension,
                            student_text: None,
                            error: e.to_string(),
                        },
                    )?;
                    return Err(e);
                }
            }
        }

        let mut report = FeedbackReport::default();
        for (dimension, (transcript, entry)) in rubric.iter().zip(done) {
            for e in transcript.entries() {
                session.record(
                    self.clock.as_ref(),
                    EventBody::DiscussionEntry {
                        dimension_key: dimension.key.clone(),
                        phase: Phase::Initial,
                        entry: e.clone(),
                    },
                )?;
            }
            report.entries.push(entry);
        }
        session.record(
            self.clock.as_ref(),
            EventBody::ReportIssued {
                report: report.clone(),
            },
        )?;
        Ok(report)
    }

    /// Re-discusses one dimension around the student's argument and merges
    /// the new arguments into that dimension's framework.
    pub fn submit_challenge(
        &self,
        session: &mut Session,
        dimension_key: &str,
        student_text: &str,
    ) -> Result<FeedbackReport, SessionError> {
        session.require(SessionState::FeedbackReady)?;
        let dimension = session.dimension(dimension_key)?.clone();
        if student_text.trim().is_empty() {
            return Err(SessionError::EmptyChallenge);
        }
        let prior = session
            .current_report()
            .and_then(|r| r.entry(dimension_key))
            .cloned()
            .ok_or_else(|| {
                SessionError::Config(format!("no report entry for `{dimension_key}`"))
            })?;
        let challenge = session.challenge_count(dimension_key) + 1;
        let phase = Phase::Challenge(challenge);
        let id = session.id().to_string();
        let essay = session.essay().to_string();

        session.set_transient(SessionState::ChallengeInProgress);
        let result = self.discuss_and_grade(
            &id,
            &essay,
            &dimension,
            phase,
            Some(student_text),
            Some(&prior),
        );
        session.set_transient(SessionState::FeedbackReady);

        let (transcript, entry) = match result {
            Ok(v) => v,
            Err(e) => {
                session.record(
                    self.clock.as_ref(),
                    EventBody::EvaluationFailed {
                        phase,
                        dimension_key: Some(dimension_key.to_string()),
                        student_text: Some(student_text.to_string()),
                        error: e.to_string(),
                    },
                )?;
                return Err(e);
            }
        };
        session.record(
            self.clock.as_ref(),
            EventBody::ChallengeSubmitted {
                dimension_key: dimension_key.to_string(),
                challenge,
                text: student_text.to_string(),
            },
        )?;
        for e in transcript.entries() {
            session.record(
                self.clock.as_ref(),
                EventBody::DiscussionEntry {
                    dimension_key: dimension_key.to_string(),
                    phase,
                    entry: e.clone(),
                },
            )?;
        }
        session.record(
            self.clock.as_ref(),
            EventBody::ReportRevised {
                dimension_key: dimension_key.to_string(),
                challenge,
                entry,
            },
        )?;
        Ok(session
            .current_report()
            .cloned()
            .expect("revised report present"))
    }

    pub fn close(&self, session: &mut Session) -> Result<(), SessionError> {
        if session.state() == SessionState::Closed {
            return Err(SessionError::WrongState {
                expected: SessionState::FeedbackReady,
                actual: SessionState::Closed,
            });
        }
        session.record(self.clock.as_ref(), EventBody::Closed {})
    }
}
