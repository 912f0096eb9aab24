//! JSON-over-HTTP API for sessions, reports, challenges and argument graphs.
//!
//! Evaluations and challenges run as background jobs that clients poll.
//! Sessions live only in the event-log store; the job registry is the only
//! in-memory state, so a restarted server picks up every stored session.

mod config;
mod graph;
mod jobs;

use std::collections::HashMap;
use std::sync::{Arc, Mutex};

use axum::extract::{Path, State};
use axum::http::StatusCode;
use axum::response::{IntoResponse, Response};
use axum::routing::{get, post};
use axum::{Json, Router};
use serde::{Deserialize, Serialize};
use tokio::sync::{OwnedMutexGuard, Semaphore};

use crate::rubric::{validate_rubric, RubricDimension, RubricError};
use crate::session::{new_session_id, Engine, Session, SessionError, SessionState, SessionStore};

pub use config::{BusyPolicy, ServiceConfig};
pub use graph::{graph_view, GraphEdge, GraphNode, GraphView};
pub use jobs::{JobHandle, JobKind, JobStatus};

use jobs::JobRegistry;

/// Error body shared by every endpoint.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ErrorBody {
    pub code: String,
    pub message: String,
    pub detail: Option<String>,
}

#[derive(Debug)]
pub struct ApiError {
    status: StatusCode,
    body: ErrorBody,
}

impl ApiError {
    fn new(status: StatusCode, code: &str, message: impl Into<String>) -> Self {
        Self {
            status,
            body: ErrorBody {
                code: code.to_string(),
                message: message.into(),
                detail: None,
            },
        }
    }

    fn with_detail(mut self, detail: impl Into<String>) -> Self {
        self.body.detail = Some(detail.into());
        self
    }

    fn bad_request(message: impl Into<String>) -> Self {
        Self::new(StatusCode::BAD_REQUEST, "bad_request", message)
    }

    fn not_found(message: impl Into<String>) -> Self {
        Self::new(StatusCode::NOT_FOUND, "not_found", message)
    }

    fn conflict(message: impl Into<String>) -> Self {
        Self::new(StatusCode::CONFLICT, "conflict", message)
    }
}

impl From<SessionError> for ApiError {
    fn from(e: SessionError) -> Self {
        let message = e.to_string();
        match e {
            SessionError::NotFound(_) => Self::not_found(message),
            SessionError::Rubric(RubricError::UnknownDimension(_)) => Self::not_found(message),
            SessionError::WrongState { .. } | SessionError::AlreadyExists(_) => {
                Self::conflict(message)
            }
            SessionError::EmptyEssay
            | SessionError::EmptyChallenge
            | SessionError::InvalidId(_)
            | SessionError::Rubric(_)
            | SessionError::Config(_) => Self::bad_request(message),
            SessionError::Agent { .. } | SessionError::Teacher { .. } => {
                Self::new(StatusCode::BAD_GATEWAY, "backend_error", message)
            }
            SessionError::EmptyLog | SessionError::Corrupt { .. } | SessionError::Io(_) => {
                tracing::error!(error = %message, "storage failure");
                Self::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "internal",
                    "session storage failure",
                )
            }
        }
    }
}

impl IntoResponse for ApiError {
    fn into_response(self) -> Response {
        (self.status, Json(self.body)).into_response()
    }
}

type ApiResult<T> = Result<T, ApiError>;

enum SessionLock {
    Held(OwnedMutexGuard<()>),
    Wait(Arc<tokio::sync::Mutex<()>>),
}

/// Everything the handlers share.
pub struct AppState {
    engine: Arc<Engine>,
    store: SessionStore,
    default_rubric: Vec<RubricDimension>,
    busy: BusyPolicy,
    jobs: JobRegistry,
    permits: Arc<Semaphore>,
    locks: Mutex<HashMap<String, Arc<tokio::sync::Mutex<()>>>>,
}

impl AppState {
    pub fn new(
        engine: Engine,
        store: SessionStore,
        default_rubric: Vec<RubricDimension>,
        parallelism: usize,
        busy: BusyPolicy,
    ) -> Self {
        Self {
            engine: Arc::new(engine),
            store,
            default_rubric,
            busy,
            jobs: JobRegistry::default(),
            permits: Arc::new(Semaphore::new(parallelism.max(1))),
            locks: Mutex::new(HashMap::new()),
        }
    }

    pub fn store(&self) -> &SessionStore {
        &self.store
    }

    pub fn job(&self, job_id: &str) -> Option<JobHandle> {
        self.jobs.get(job_id)
    }

    /// Marks every unfinished job failed. Called on shutdown.
    pub fn fail_unfinished_jobs(&self, reason: &str) -> usize {
        self.jobs.fail_unfinished(reason)
    }

    fn session_lock(&self, id: &str) -> Arc<tokio::sync::Mutex<()>> {
        self.locks
            .lock()
            .expect("lock table poisoned")
            .entry(id.to_string())
            .or_default()
            .clone()
    }

    /// One writer per session. Under `Reject` a busy session is refused
    /// here; under `Queue` the job waits for the lock when it runs.
    fn acquire(&self, id: &str) -> ApiResult<SessionLock> {
        let lock = self.session_lock(id);
        match self.busy {
            BusyPolicy::Reject => lock.try_lock_owned().map(SessionLock::Held).map_err(|_| {
                ApiError::conflict(format!("session `{id}` already has a job in progress"))
            }),
            BusyPolicy::Queue => Ok(SessionLock::Wait(lock)),
        }
    }

    async fn load(&self, id: &str) -> ApiResult<Session> {
        let store = self.store.clone();
        let id = id.to_string();
        tokio::task::spawn_blocking(move || store.load(&id))
            .await
            .map_err(|_| {
                ApiError::new(
                    StatusCode::INTERNAL_SERVER_ERROR,
                    "internal",
                    "worker failed",
                )
            })?
            .map_err(ApiError::from)
    }
}

pub fn router(state: Arc<AppState>) -> Router {
    Router::new()
        .route("/health", get(health))
        .route("/sessions", post(create_session))
        .route("/sessions/{id}", get(session_summary))
        .route("/sessions/{id}/evaluate", post(evaluate))
        .route("/sessions/{id}/report", get(report))
        .route("/sessions/{id}/challenge", post(challenge))
        .route("/sessions/{id}/graph/{dimension}", get(graph))
        .route("/jobs/{job_id}", get(job))
        .with_state(state)
}

async fn health() -> Json<serde_json::Value> {
    Json(serde_json::json!({"status": "ok"}))
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CreateSession {
    pub essay: String,
    #[serde(default)]
    pub rubric: Option<Vec<RubricDimension>>,
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Created {
    pub session_id: String,
}

async fn create_session(
    State(state): State<Arc<AppState>>,
    body: Result<Json<CreateSession>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<Created>)> {
    let Json(body) =
        body.map_err(|e| ApiError::bad_request("invalid request body").with_detail(e.body_text()))?;
    let rubric = body.rubric.unwrap_or_else(|| state.default_rubric.clone());
    validate_rubric(&rubric).map_err(|e| ApiError::bad_request(e.to_string()))?;
    let id = new_session_id();
    let session = state.engine.start_session(&id, &body.essay, rubric)?;
    let store = state.store.clone();
    tokio::task::spawn_blocking(move || store.sync(&session))
        .await
        .map_err(|_| {
            ApiError::new(
                StatusCode::INTERNAL_SERVER_ERROR,
                "internal",
                "worker failed",
            )
        })??;
    Ok((StatusCode::CREATED, Json(Created { session_id: id })))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct SessionSummary {
    pub session_id: String,
    pub state: SessionState,
    pub dimensions: Vec<String>,
    pub challenges: HashMap<String, u32>,
}

async fn session_summary(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<Json<SessionSummary>> {
    let s = state.load(&id).await?;
    let dimensions: Vec<String> = s.rubric().iter().map(|d| d.key.clone()).collect();
    let challenges = dimensions
        .iter()
        .map(|k| (k.clone(), s.challenge_count(k)))
        .collect();
    Ok(Json(SessionSummary {
        session_id: id,
        state: s.state(),
        dimensions,
        challenges,
    }))
}

#[derive(Debug, Serialize, Deserialize)]
pub struct Accepted {
    pub job_id: String,
}

fn spawn_job(
    state: &Arc<AppState>,
    session_id: String,
    kind: JobKind,
    lock: SessionLock,
    work: impl FnOnce(&Engine, &mut Session) -> Result<(), SessionError> + Send + 'static,
) -> String {
    let job_id = state.jobs.create(&session_id, kind);
    let (state, id) = (state.clone(), job_id.clone());
    tokio::spawn(async move {
        let _guard = match lock {
            SessionLock::Held(g) => g,
            SessionLock::Wait(m) => m.lock_owned().await,
        };
        let Ok(_permit) = state.permits.clone().acquire_owned().await else {
            state.jobs.finish(&id, Err("job pool closed".into()));
            return;
        };
        state.jobs.start(&id);
        let worker = state.clone();
        let sid = session_id.clone();
        let outcome = tokio::task::spawn_blocking(move || -> Result<(), SessionError> {
            let mut session = worker.store.load(&sid)?;
            let result = work(&worker.engine, &mut session);
            // Failure events are part of the log too.
            worker.store.sync(&session)?;
            result
        })
        .await;
        let result = match outcome {
            Ok(Ok(())) => Ok(format!("/sessions/{session_id}/report")),
            Ok(Err(e)) => {
                tracing::warn!(job = %id, session = %session_id, error = %e, "job failed");
                Err(e.to_string())
            }
            Err(_) => Err("worker panicked".to_string()),
        };
        state.jobs.finish(&id, result);
    });
    job_id
}

async fn evaluate(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let lock = state.acquire(&id)?;
    let session = state.load(&id).await?;
    if session.state() != SessionState::Created {
        return Err(SessionError::WrongState {
            expected: SessionState::Created,
            actual: session.state(),
        }
        .into());
    }
    let job_id = spawn_job(&state, id, JobKind::Evaluate, lock, |engine, s| {
        engine.run_initial_evaluation(s).map(|_| ())
    });
    Ok((StatusCode::ACCEPTED, Json(Accepted { job_id })))
}

async fn report(State(state): State<Arc<AppState>>, Path(id): Path<String>) -> ApiResult<Response> {
    let s = state.load(&id).await?;
    match s.current_report() {
        Some(r) => Ok(Json(r).into_response()),
        None => Err(
            ApiError::conflict(format!("session `{id}` has not been evaluated"))
                .with_detail(s.state().to_string()),
        ),
    }
}

#[derive(Debug, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ChallengeBody {
    pub dimension: String,
    pub text: String,
}

async fn challenge(
    State(state): State<Arc<AppState>>,
    Path(id): Path<String>,
    body: Result<Json<ChallengeBody>, axum::extract::rejection::JsonRejection>,
) -> ApiResult<(StatusCode, Json<Accepted>)> {
    let Json(body) =
        body.map_err(|e| ApiError::bad_request("invalid request body").with_detail(e.body_text()))?;
    let lock = state.acquire(&id)?;
    let session = state.load(&id).await?;
    if session.state() != SessionState::FeedbackReady {
        return Err(SessionError::WrongState {
            expected: SessionState::FeedbackReady,
            actual: session.state(),
        }
        .into());
    }
    session.dimension(&body.dimension)?;
    if body.text.trim().is_empty() {
        return Err(SessionError::EmptyChallenge.into());
    }
    let ChallengeBody { dimension, text } = body;
    let job_id = spawn_job(&state, id, JobKind::Challenge, lock, move |engine, s| {
        engine.submit_challenge(s, &dimension, &text).map(|_| ())
    });
    Ok((StatusCode::ACCEPTED, Json(Accepted { job_id })))
}

async fn graph(
    State(state): State<Arc<AppState>>,
    Path((id, dimension)): Path<(String, String)>,
) -> ApiResult<Json<GraphView>> {
    let s = state.load(&id).await?;
    s.dimension(&dimension)?;
    let report = s
        .current_report()
        .ok_or_else(|| ApiError::conflict(format!("session `{id}` has not been evaluated")))?;
    let entry = report
        .entry(&dimension)
        .ok_or_else(|| ApiError::not_found(format!("no report entry for `{dimension}`")))?;
    let max = state.engine.config().teacher.max_arguments;
    graph_view(entry, max).map(Json).map_err(|e| {
        tracing::error!(error = %e, "graph view");
        ApiError::new(
            StatusCode::INTERNAL_SERVER_ERROR,
            "internal",
            "stored framework is inconsistent",
        )
    })
}

async fn job(
    State(state): State<Arc<AppState>>,
    Path(job_id): Path<String>,
) -> ApiResult<Json<JobHandle>> {
    state
        .job(&job_id)
        .map(Json)
        .ok_or_else(|| ApiError::not_found(format!("unknown job `{job_id}`")))
}

/// Serves until `shutdown` resolves, then fails whatever jobs are still
/// queued or running.
pub async fn serve(
    listener: tokio::net::TcpListener,
    state: Arc<AppState>,
    shutdown: impl std::future::Future<Output = ()> + Send + 'static,
) -> std::io::Result<()> {
    let app = router(state.clone());
    let result = axum::serve(listener, app)
        .with_graceful_shutdown(shutdown)
        .await;
    let failed = state.fail_unfinished_jobs("server shut down before the job finished");
    if failed > 0 {
        tracing::warn!(failed, "unfinished jobs marked failed");
    }
    result
}
