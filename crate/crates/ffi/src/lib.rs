//! C ABI for the engine.
//!
//! Conventions:
//! - every function returns a [`CfeStatus`]; results come back through
//!   out-pointers, which are left untouched on failure;
//! - objects are opaque handles released with their `_free` function;
//! - strings returned to C are NUL-terminated UTF-8 owned by the caller and
//!   released with [`cfe_string_free`];
//! - after a failure, [`cfe_last_error`] returns a description of the most
//!   recent error on the calling thread.
//!
//! Handles are not synchronised: a `CfeSession` must not be used from two
//! threads at once. A `CfeEngine` may be shared.

use std::cell::RefCell;
use std::collections::BTreeSet;
use std::ffi::{c_char, CStr, CString};
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::Path;

use contestable::af::text::{format_extensions, parse_framework};
use contestable::af::{
    enumerate_complete_with_limit, grounded, is_complete, select_final, AfError, ArgumentId,
    ArgumentationFramework,
};
use contestable::backend::BackendConfig;
use contestable::evalharness::{
    compute_metrics, emit_report, standard_error, EvaluationRecord, ReportFormat,
};
use contestable::rubric::{default_rubric, parse_rubric};
use contestable::session::{
    new_session_id, replay, Engine, EngineConfig, Session, SessionError, SessionEvent,
};

/// Result of every call.
#[repr(C)]
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum CfeStatus {
    Ok = 0,
    NullArgument = 1,
    InvalidUtf8 = 2,
    Parse = 3,
    SizeLimit = 4,
    Backend = 5,
    WrongState = 6,
    InvalidInput = 7,
    Io = 8,
    Internal = 9,
}

/// A parsed argumentation framework.
pub struct CfeFramework {
    af: ArgumentationFramework,
}

/// A configured grading engine.
pub struct CfeEngine {
    engine: Engine,
}

/// One grading session.
pub struct CfeSession {
    session: Session,
}

thread_local! {
    static LAST_ERROR: RefCell<Option<String>> = const { RefCell::new(None) };
}

struct Failure(CfeStatus, String);

impl Failure {
    fn null(name: &str) -> Self {
        Failure(CfeStatus::NullArgument, format!("`{name}` is null"))
    }
}

impl From<AfError> for Failure {
    fn from(e: AfError) -> Self {
        let status = match e {
            AfError::Parse { .. } => CfeStatus::Parse,
            AfError::SizeLimit { .. } => CfeStatus::SizeLimit,
            _ => CfeStatus::InvalidInput,
        };
        Failure(status, e.to_string())
    }
}

impl From<SessionError> for Failure {
    fn from(e: SessionError) -> Self {
        let status = if e.is_size_limit() {
            CfeStatus::SizeLimit
        } else {
            match &e {
                SessionError::Agent { .. } | SessionError::Teacher { .. } => CfeStatus::Backend,
                SessionError::WrongState { .. } => CfeStatus::WrongState,
                SessionError::Corrupt { .. } | SessionError::EmptyLog => CfeStatus::Parse,
                SessionError::Io(_) => CfeStatus::Io,
                _ => CfeStatus::InvalidInput,
            }
        };
        Failure(status, e.to_string())
    }
}

/// Runs `f`, records any failure or panic for [`cfe_last_error`], and
/// turns the outcome into a status.
fn guard(f: impl FnOnce() -> Result<(), Failure>) -> CfeStatus {
    let outcome = catch_unwind(AssertUnwindSafe(f))
        .unwrap_or_else(|_| Err(Failure(CfeStatus::Internal, "panic".into())));
    match outcome {
        Ok(()) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = None);
            CfeStatus::Ok
        }
        Err(Failure(status, message)) => {
            LAST_ERROR.with(|e| *e.borrow_mut() = Some(message));
            status
        }
    }
}

/// # Safety
/// `ptr` must be null or a valid NUL-terminated string.
unsafe fn str_arg<'a>(ptr: *const c_char, name: &str) -> Result<&'a str, Failure> {
    if ptr.is_null() {
        return Err(Failure::null(name));
    }
    CStr::from_ptr(ptr).to_str().map_err(|_| {
        Failure(
            CfeStatus::InvalidUtf8,
            format!("`{name}` is not valid UTF-8"),
        )
    })
}

/// # Safety
/// As [`str_arg`]; null maps to `None`.
unsafe fn opt_str_arg<'a>(ptr: *const c_char, name: &str) -> Result<Option<&'a str>, Failure> {
    if ptr.is_null() {
        Ok(None)
    } else {
        str_arg(ptr, name).map(Some)
    }
}

fn to_c(text: String) -> Result<*mut c_char, Failure> {
    CString::new(text)
        .map(CString::into_raw)
        .map_err(|_| Failure(CfeStatus::Internal, "result contains a NUL byte".into()))
}

/// # Safety
/// `out` must be null or valid for writes.
unsafe fn put<T>(out: *mut T, value: T, name: &str) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null(name));
    }
    out.write(value);
    Ok(())
}

unsafe fn put_string(out: *mut *mut c_char, text: String) -> Result<(), Failure> {
    if out.is_null() {
        return Err(Failure::null("out"));
    }
    out.write(to_c(text)?);
    Ok(())
}

unsafe fn handle<'a, T>(ptr: *const T, name: &str) -> Result<&'a T, Failure> {
    ptr.as_ref().ok_or_else(|| Failure::null(name))
}

unsafe fn handle_mut<'a, T>(ptr: *mut T, name: &str) -> Result<&'a mut T, Failure> {
    ptr.as_mut().ok_or_else(|| Failure::null(name))
}

/// Description of the last failure on this thread, or null if the last
/// call succeeded. Free with `cfe_string_free`.
#[no_mangle]
pub extern "C" fn cfe_last_error() -> *mut c_char {
    LAST_ERROR.with(|e| match e.borrow().as_deref() {
        Some(m) => CString::new(m.replace('\0', " "))
            .map(CString::into_raw)
            .unwrap_or(std::ptr::null_mut()),
        None => std::ptr::null_mut(),
    })
}

/// # Safety
/// `s` must be null or a string returned by this library, freed once.
#[no_mangle]
pub unsafe extern "C" fn cfe_string_free(s: *mut c_char) {
    if !s.is_null() {
        drop(CString::from_raw(s));
    }
}

/// Parses a framework in the `p af <n>` / `<i> <j>` line format.
///
/// # Safety
/// `text` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_af_parse(
    text: *const c_char,
    out: *mut *mut CfeFramework,
) -> CfeStatus {
    guard(|| {
        let af = parse_framework(str_arg(text, "text")?)?;
        put(out, Box::into_raw(Box::new(CfeFramework { af })), "out")
    })
}

/// # Safety
/// `af` must be null or a handle from `cfe_af_parse`, freed once.
#[no_mangle]
pub unsafe extern "C" fn cfe_af_free(af: *mut CfeFramework) {
    if !af.is_null() {
        drop(Box::from_raw(af));
    }
}

/// # Safety
/// `af` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_af_num_arguments(af: *const CfeFramework, out: *mut u32) -> CfeStatus {
    guard(|| put(out, handle(af, "af")?.af.len() as u32, "out"))
}

/// All complete extensions, one per line, members ascending and separated
/// by spaces; largest first, then lexicographic.
///
/// # Safety
/// `af` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_af_complete(
    af: *const CfeFramework,
    max_arguments: usize,
    out: *mut *mut c_char,
) -> CfeStatus {
    guard(|| {
        let all = enumerate_complete_with_limit(&handle(af, "af")?.af, max_arguments)?;
        put_string(out, format_extensions(&all))
    })
}

/// The extension a grade is read from: the largest complete extension,
/// ties broken lexicographically. One line.
///
/// # Safety
/// `af` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_af_select_final(
    af: *const CfeFramework,
    max_arguments: usize,
    out: *mut *mut c_char,
) -> CfeStatus {
    guard(|| {
        let all = enumerate_complete_with_limit(&handle(af, "af")?.af, max_arguments)?;
        put_string(out, format_extensions(&[select_final(&all)?]))
    })
}

/// # Safety
/// `af` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_af_grounded(
    af: *const CfeFramework,
    out: *mut *mut c_char,
) -> CfeStatus {
    guard(|| put_string(out, format_extensions(&[grounded(&handle(af, "af")?.af)])))
}

/// Whether the `len` 1-based argument ids at `members` form a complete
/// extension.
///
/// # Safety
/// `members` must point to `len` readable values (or be null when `len`
/// is 0); `af` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_af_is_complete(
    af: *const CfeFramework,
    members: *const u32,
    len: usize,
    out: *mut bool,
) -> CfeStatus {
    guard(|| {
        let af = &handle(af, "af")?.af;
        let ids: &[u32] = if len == 0 {
            &[]
        } else if members.is_null() {
            return Err(Failure::null("members"));
        } else {
            std::slice::from_raw_parts(members, len)
        };
        let set: BTreeSet<ArgumentId> = ids.iter().map(|&i| ArgumentId::new(i)).collect();
        put(out, is_complete(af, &set)?, "out")
    })
}

/// `sqrt(p (1 - p) / n)`.
///
/// # Safety
/// `out` must be valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_standard_error(p: f64, n: u64, out: *mut f64) -> CfeStatus {
    guard(|| {
        let se =
            standard_error(p, n).map_err(|e| Failure(CfeStatus::InvalidInput, e.to_string()))?;
        put(out, se, "out")
    })
}

/// Metrics summary (JSON) for evaluation records given as JSONL.
///
/// # Safety
/// `records_jsonl` must be a NUL-terminated string; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_metrics_from_records(
    records_jsonl: *const c_char,
    out: *mut *mut c_char,
) -> CfeStatus {
    guard(|| {
        let text = str_arg(records_jsonl, "records_jsonl")?;
        let records = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<EvaluationRecord>(l)
                    .map_err(|e| Failure(CfeStatus::Parse, format!("record {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let summary = compute_metrics(&records)
            .map_err(|e| Failure(CfeStatus::InvalidInput, e.to_string()))?;
        put_string(out, emit_report(&summary, ReportFormat::Structured))
    })
}

/// Builds an engine from a backend configuration file and an optional
/// engine configuration (TOML text, null for defaults).
///
/// # Safety
/// `backend_config_path` must be a NUL-terminated string, `engine_toml`
/// null or NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_engine_new(
    backend_config_path: *const c_char,
    engine_toml: *const c_char,
    out: *mut *mut CfeEngine,
) -> CfeStatus {
    guard(|| {
        let path = Path::new(str_arg(backend_config_path, "backend_config_path")?);
        let config: EngineConfig = match opt_str_arg(engine_toml, "engine_toml")? {
            Some(t) => toml::from_str(t).map_err(|e| Failure(CfeStatus::Parse, e.to_string()))?,
            None => EngineConfig::default(),
        };
        let backend = BackendConfig::load(path)
            .and_then(|c| c.build())
            .map_err(|e| Failure(CfeStatus::InvalidInput, e.to_string()))?;
        let engine = Engine::new(backend, config)?;
        put(out, Box::into_raw(Box::new(CfeEngine { engine })), "out")
    })
}

/// # Safety
/// `engine` must be null or a handle from `cfe_engine_new`, freed once.
#[no_mangle]
pub unsafe extern "C" fn cfe_engine_free(engine: *mut CfeEngine) {
    if !engine.is_null() {
        drop(Box::from_raw(engine));
    }
}

/// Starts a session. `session_id` null picks a random id; `rubric_toml`
/// null uses the built-in rubric.
///
/// # Safety
/// `engine` must be a live handle; string arguments null or
/// NUL-terminated as documented; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_session_start(
    engine: *const CfeEngine,
    session_id: *const c_char,
    essay: *const c_char,
    rubric_toml: *const c_char,
    out: *mut *mut CfeSession,
) -> CfeStatus {
    guard(|| {
        let engine = &handle(engine, "engine")?.engine;
        let id = opt_str_arg(session_id, "session_id")?.map_or_else(new_session_id, str::to_string);
        let rubric = match opt_str_arg(rubric_toml, "rubric_toml")? {
            Some(t) => parse_rubric(t).map_err(|e| Failure(CfeStatus::Parse, e.to_string()))?,
            None => default_rubric(),
        };
        let session = engine.start_session(id, str_arg(essay, "essay")?, rubric)?;
        put(out, Box::into_raw(Box::new(CfeSession { session })), "out")
    })
}

/// # Safety
/// `session` must be null or a session handle, freed once.
#[no_mangle]
pub unsafe extern "C" fn cfe_session_free(session: *mut CfeSession) {
    if !session.is_null() {
        drop(Box::from_raw(session));
    }
}

/// Runs the initial evaluation; `out` receives the report as JSON.
///
/// # Safety
/// `engine` and `session` must be live handles; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_session_evaluate(
    engine: *const CfeEngine,
    session: *mut CfeSession,
    out: *mut *mut c_char,
) -> CfeStatus {
    guard(|| {
        let engine = &handle(engine, "engine")?.engine;
        let s = handle_mut(session, "session")?;
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let report = engine.run_initial_evaluation(&mut s.session)?;
        put_string(
            out,
            serde_json::to_string(&report).expect("report serialises"),
        )
    })
}

/// Challenges one dimension; `out` receives the revised report as JSON.
///
/// # Safety
/// `engine` and `session` must be live handles; strings NUL-terminated;
/// `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_session_challenge(
    engine: *const CfeEngine,
    session: *mut CfeSession,
    dimension: *const c_char,
    text: *const c_char,
    out: *mut *mut c_char,
) -> CfeStatus {
    guard(|| {
        let engine = &handle(engine, "engine")?.engine;
        let s = handle_mut(session, "session")?;
        let (dimension, text) = (str_arg(dimension, "dimension")?, str_arg(text, "text")?);
        if out.is_null() {
            return Err(Failure::null("out"));
        }
        let report = engine.submit_challenge(&mut s.session, dimension, text)?;
        put_string(
            out,
            serde_json::to_string(&report).expect("report serialises"),
        )
    })
}

/// Current state name, e.g. `feedback_ready`.
///
/// # Safety
/// `session` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_session_state(
    session: *const CfeSession,
    out: *mut *mut c_char,
) -> CfeStatus {
    guard(|| put_string(out, handle(session, "session")?.session.state().to_string()))
}

/// The session's event log as JSONL.
///
/// # Safety
/// `session` must be a live handle; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_session_log(
    session: *const CfeSession,
    out: *mut *mut c_char,
) -> CfeStatus {
    guard(|| {
        let s = &handle(session, "session")?.session;
        let text: String = s
            .history()
            .iter()
            .map(|e| serde_json::to_string(e).expect("event serialises") + "\n")
            .collect();
        put_string(out, text)
    })
}

/// Rebuilds a session from a JSONL event log.
///
/// # Safety
/// `log_jsonl` must be NUL-terminated; `out` valid for writes.
#[no_mangle]
pub unsafe extern "C" fn cfe_session_replay(
    log_jsonl: *const c_char,
    out: *mut *mut CfeSession,
) -> CfeStatus {
    guard(|| {
        let text = str_arg(log_jsonl, "log_jsonl")?;
        let events = text
            .lines()
            .enumerate()
            .filter(|(_, l)| !l.trim().is_empty())
            .map(|(i, l)| {
                serde_json::from_str::<SessionEvent>(l)
                    .map_err(|e| Failure(CfeStatus::Parse, format!("line {}: {e}", i + 1)))
            })
            .collect::<Result<Vec<_>, _>>()?;
        let session = replay(events)?;
        put(out, Box::into_raw(Box::new(CfeSession { session })), "out")
    })
}
