//! Offline evaluation: grade a labelled corpus, challenge every grade once
//! with a simulated student, and measure how the grades moved.
//!
//! The simulated student never sees the ground truth. It is told to refute
//! whatever feedback it received, so a correct grade is challenged as hard
//! as a wrong one.

mod metrics;

use std::collections::{BTreeMap, HashSet};
use std::path::Path;
use std::sync::Arc;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use crate::prompts::{PromptError, TemplateName, Templates};
use crate::rubric::{Level, RubricDimension};
use crate::session::{validate_session_id, Engine, Session, SessionError};
use crate::teacher::DimensionReport;

pub use metrics::{
    compute_metrics, emit_report, format_cell, parse_structured_report, standard_error,
    DimensionMetrics, Metric, MetricsError, MetricsSummary, ReportFormat,
};

/// Request tag step used for simulated rebuttals: `{dimension}/challenger/rebuttal`.
pub const CHALLENGER_STEP: &str = "challenger/rebuttal";

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LabeledEssay {
    pub id: String,
    pub text: String,
    pub labels: BTreeMap<String, Level>,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EvaluationRecord {
    pub essay_id: String,
    pub dimension_key: String,
    pub initial_level: Level,
    pub post_interaction_level: Level,
    pub truth_level: Level,
}

impl EvaluationRecord {
    pub fn initial_correct(&self) -> bool {
        self.initial_level == self.truth_level
    }

    pub fn post_correct(&self) -> bool {
        self.post_interaction_level == self.truth_level
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum HarnessError {
    #[error("dataset record {record}: {message}")]
    Schema { record: usize, message: String },
    #[error("essay `{essay_id}` has no label for dimension `{dimension}`")]
    MissingLabel { essay_id: String, dimension: String },
    #[error("essay `{essay_id}`: level {level} is not valid for dimension `{dimension}`")]
    InvalidLabel {
        essay_id: String,
        dimension: String,
        level: Level,
    },
    #[error("duplicate essay id `{0}`")]
    DuplicateId(String),
    #[error("{0}")]
    Io(String),
    #[error("report entry for `{0}` has no feedback to refute")]
    EmptyFeedback(String),
    #[error("challenger returned an empty rebuttal")]
    EmptyRebuttal,
    #[error("challenger: {0}")]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Session(#[from] SessionError),
    #[error("unknown dimension `{0}` in filter")]
    UnknownDimension(String),
    #[error("parallelism must be at least 1")]
    Parallelism,
    #[error(transparent)]
    Metrics(#[from] MetricsError),
}

impl HarnessError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            HarnessError::Backend(e) => Some(e),
            HarnessError::Session(e) => e.backend_error(),
            _ => None,
        }
    }
}

/// Parses a JSONL corpus. Record numbers in errors are 1-based line numbers.
pub fn parse_dataset(
    text: &str,
    rubric: &[RubricDimension],
) -> Result<Vec<LabeledEssay>, HarnessError> {
    let mut essays = Vec::new();
    let mut seen = HashSet::new();
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let record = i + 1;
        let essay: LabeledEssay = serde_json::from_str(line).map_err(|e| HarnessError::Schema {
            record,
            message: e.to_string(),
        })?;
        validate_session_id(&essay.id).map_err(|e| HarnessError::Schema {
            record,
            message: e.to_string(),
        })?;
        if essay.text.trim().is_empty() {
            return Err(HarnessError::Schema {
                record,
                message: format!("essay `{}` has no text", essay.id),
            });
        }
        for key in essay.labels.keys() {
            if !rubric.iter().any(|d| &d.key == key) {
                return Err(HarnessError::Schema {
                    record,
                    message: format!("label for unknown dimension `{key}`"),
                });
            }
        }
        for d in rubric {
            let level = *essay
                .labels
                .get(&d.key)
                .ok_or_else(|| HarnessError::MissingLabel {
                    essay_id: essay.id.clone(),
                    dimension: d.key.clone(),
                })?;
            if !d.has_level(level) {
                return Err(HarnessError::InvalidLabel {
                    essay_id: essay.id.clone(),
                    dimension: d.key.clone(),
                    level,
                });
            }
        }
        if !seen.insert(essay.id.clone()) {
            return Err(HarnessError::DuplicateId(essay.id));
        }
        essays.push(essay);
    }
    Ok(essays)
}

pub fn load_dataset(
    path: &Path,
    rubric: &[RubricDimension],
) -> Result<Vec<LabeledEssay>, HarnessError> {
    let text = std::fs::read_to_string(path)
        .map_err(|e| HarnessError::Io(format!("{}: {e}", path.display())))?;
    parse_dataset(&text, rubric)
}

/// What the harness needs from a grader: start a one-dimension session,
/// grade it, and take one challenge.
pub trait GradingSystem: Sync {
    type Session: Send;

    fn start(
        &self,
        session_id: &str,
        essay: &str,
        dimension: &RubricDimension,
    ) -> Result<Self::Session, SessionError>;

    fn evaluate(
        &self,
        session: &mut Self::Session,
        dimension_key: &str,
    ) -> Result<DimensionReport, SessionError>;

    fn challenge(
        &self,
        session: &mut Self::Session,
        dimension_key: &str,
        text: &str,
    ) -> Result<DimensionReport, SessionError>;
}

fn entry_of(
    report: crate::teacher::FeedbackReport,
    key: &str,
) -> Result<DimensionReport, SessionError> {
    report
        .entries
        .into_iter()
        .find(|e| e.dimension_key == key)
        .ok_or_else(|| SessionError::Config(format!("report has no entry for `{key}`")))
}

impl GradingSystem for Engine {
    type Session = Session;

    fn start(
        &self,
        session_id: &str,
        essay: &str,
        dimension: &RubricDimension,
    ) -> Result<Session, SessionError> {
        self.start_session(session_id, essay, vec![dimension.clone()])
    }

    fn evaluate(
        &self,
        session: &mut Session,
        dimension_key: &str,
    ) -> Result<DimensionReport, SessionError> {
        entry_of(self.run_initial_evaluation(session)?, dimension_key)
    }

    fn challenge(
        &self,
        session: &mut Session,
        dimension_key: &str,
        text: &str,
    ) -> Result<DimensionReport, SessionError> {
        entry_of(
            self.submit_challenge(session, dimension_key, text)?,
            dimension_key,
        )
    }
}

/// The simulated student.
#[derive(Clone)]
pub struct Challenger {
    pub backend: Arc<dyn ChatBackend>,
    pub templates: Arc<Templates>,
}

impl Challenger {
    pub fn new(backend: Arc<dyn ChatBackend>) -> Self {
        Self {
            backend,
            templates: Arc::new(Templates::builtin()),
        }
    }

    pub fn with_templates(mut self, templates: Arc<Templates>) -> Self {
        self.templates = templates;
        self
    }
}

/// Asks the challenger to refute one report entry. The prompt carries the
/// essay, the rubric dimension, the grade and the feedback, never the
/// ground truth.
pub fn simulate_challenge(
    challenger: &Challenger,
    session_id: Option<&str>,
    essay: &str,
    dimension: &RubricDimension,
    entry: &DimensionReport,
) -> Result<String, HarnessError> {
    if entry.feedback_text.trim().is_empty() {
        return Err(HarnessError::EmptyFeedback(entry.dimension_key.clone()));
    }
    let t = &challenger.templates;
    let system = t.render(TemplateName::ChallengerSystem, &[])?;
    let grade = entry.grade.level.to_string();
    let user = t.render(
        TemplateName::Challenger,
        &[
            ("rubric_dimension", &dimension.render()),
            ("essay", essay),
            ("grade", &grade),
            ("feedback", &entry.feedback_text),
        ],
    )?;
    let request = ChatRequest::new(
        format!("{}/{CHALLENGER_STEP}", dimension.key),
        vec![ChatMessage::system(system), ChatMessage::user(user)],
    )
    .with_session(session_id);
    let reply = challenger.backend.complete(&request)?;
    if reply.trim().is_empty() {
        return Err(HarnessError::EmptyRebuttal);
    }
    Ok(reply)
}

/// Session id used for one trial: `{essay_id}-{dimension_key}`.
pub fn trial_session_id(essay_id: &str, dimension_key: &str) -> String {
    format!("{essay_id}-{dimension_key}")
}

/// Grades one essay on one dimension, challenges the grade exactly once,
/// and records both levels.
pub fn run_trial<S: GradingSystem>(
    system: &S,
    challenger: &Challenger,
    essay: &LabeledEssay,
    dimension: &RubricDimension,
) -> Result<EvaluationRecord, HarnessError> {
    let truth_level =
        *essay
            .labels
            .get(&dimension.key)
            .ok_or_else(|| HarnessError::MissingLabel {
                essay_id: essay.id.clone(),
                dimension: dimension.key.clone(),
            })?;
    let id = trial_session_id(&essay.id, &dimension.key);
    let mut session = system.start(&id, &essay.text, dimension)?;
    let initial = system.evaluate(&mut session, &dimension.key)?;
    let rebuttal = simulate_challenge(challenger, Some(&id), &essay.text, dimension, &initial)?;
    let revised = system.challenge(&mut session, &dimension.key, &rebuttal)?;
    Ok(EvaluationRecord {
        essay_id: essay.id.clone(),
        dimension_key: dimension.key.clone(),
        initial_level: initial.grade.level,
        post_interaction_level: revised.grade.level,
        truth_level,
    })
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessConfig {
    /// Trials in flight at once.
    pub parallelism: usize,
    /// Dimension keys to evaluate; empty means the whole rubric.
    #[serde(default)]
    pub dimensions: Vec<String>,
    #[serde(default = "default_method")]
    pub method: String,
}

fn default_method() -> String {
    "engine".to_string()
}

impl Default for HarnessConfig {
    fn default() -> Self {
        Self {
            parallelism: 4,
            dimensions: Vec::new(),
            method: default_method(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialFailure {
    pub essay_id: String,
    pub dimension_key: String,
    pub error: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct HarnessRun {
    /// Essay-major, dimensions in rubric order.
    pub records: Vec<EvaluationRecord>,
    pub failures: Vec<TrialFailure>,
}

impl HarnessRun {
    pub fn summary(&self, method: &str) -> Result<MetricsSummary, MetricsError> {
        let mut summary = compute_metrics(&self.records)?;
        summary.method = method.to_string();
        summary.failed_trials = self.failures.len() as u64;
        Ok(summary)
    }
}

fn selected<'a>(
    rubric: &'a [RubricDimension],
    filter: &[String],
) -> Result<Vec<&'a RubricDimension>, HarnessError> {
    if filter.is_empty() {
        return Ok(rubric.iter().collect());
    }
    for key in filter {
        if !rubric.iter().any(|d| &d.key == key) {
            return Err(HarnessError::UnknownDimension(key.clone()));
        }
    }
    Ok(rubric.iter().filter(|d| filter.contains(&d.key)).collect())
}

/// Runs every essay × dimension trial on a pool of `config.parallelism`
/// threads. Failed trials are logged and returned separately.
pub fn run_harness<S: GradingSystem>(
    system: &S,
    challenger: &Challenger,
    dataset: &[LabeledEssay],
    rubric: &[RubricDimension],
    config: &HarnessConfig,
) -> Result<HarnessRun, HarnessError> {
    if config.parallelism == 0 {
        return Err(HarnessError::Parallelism);
    }
    let dimensions = selected(rubric, &config.dimensions)?;
    let trials: Vec<(&LabeledEssay, &RubricDimension)> = dataset
        .iter()
        .flat_map(|e| dimensions.iter().map(move |d| (e, *d)))
        .collect();
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(config.parallelism)
        .build()
        .map_err(|e| HarnessError::Io(format!("thread pool: {e}")))?;
    let results: Vec<Result<EvaluationRecord, TrialFailure>> = pool.install(|| {
        trials
            .par_iter()
            .map(|(essay, dim)| {
                run_trial(system, challenger, essay, dim).map_err(|e| {
                    tracing::warn!(essay = %essay.id, dimension = %dim.key, error = %e, "trial failed");
                    TrialFailure {
                        essay_id: essay.id.clone(),
                        dimension_key: dim.key.clone(),
                        error: e.to_string(),
                    }
                })
            })
            .collect()
    });
    let mut run = HarnessRun {
        records: Vec::new(),
        failures: Vec::new(),
    };
    for r in results {
        match r {
            Ok(rec) => run.records.push(rec),
            Err(f) => run.failures.push(f),
        }
    }
    Ok(run)
}
