//! Command-line entry points.
//!
//! Exit codes:
//!
//! | code | meaning |
//! |------|---------|
//! | 0 | success |
//! | 1 | other failure |
//! | 2 | bad input: unreadable file, parse or schema error, bad config |
//! | 3 | framework larger than the argument cap |
//! | 4 | backend failure (transport, rate limit, unusable model replies) |
//! | 5 | listen address already in use |
//!
//! Results go to stdout; diagnostics go to stderr.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::sync::Arc;

use clap::{Args, Parser, Subcommand, ValueEnum};

use crate::af::text::{format_extensions, parse_framework};
use crate::af::{
    enumerate_complete_with_limit, grounded, select_final, AfError, DEFAULT_MAX_ARGUMENTS,
};
use crate::backend::{BackendConfig, ChatBackend};
use crate::evalharness::{
    emit_report, load_dataset, run_harness, Challenger, HarnessConfig, HarnessError, ReportFormat,
};
use crate::prompts::Templates;
use crate::rubric::{default_rubric, parse_rubric, RubricDimension};
use crate::service::{AppState, ServiceConfig};
use crate::session::{
    new_session_id, Engine, EngineConfig, SessionError, SessionStore, SteppingClock,
};

pub const EXIT_OK: u8 = 0;
pub const EXIT_OTHER: u8 = 1;
pub const EXIT_INPUT: u8 = 2;
pub const EXIT_SIZE: u8 = 3;
pub const EXIT_BACKEND: u8 = 4;
pub const EXIT_PORT: u8 = 5;

#[derive(Debug)]
pub struct CliError {
    pub code: u8,
    pub message: String,
}

impl CliError {
    fn new(code: u8, message: impl Into<String>) -> Self {
        Self {
            code,
            message: message.into(),
        }
    }

    fn input(message: impl Into<String>) -> Self {
        Self::new(EXIT_INPUT, message)
    }
}

impl From<SessionError> for CliError {
    fn from(e: SessionError) -> Self {
        let code = if e.is_size_limit() {
            EXIT_SIZE
        } else {
            match &e {
                SessionError::Agent { .. } | SessionError::Teacher { .. } => EXIT_BACKEND,
                SessionError::EmptyEssay
                | SessionError::InvalidId(_)
                | SessionError::Rubric(_)
                | SessionError::Config(_)
                | SessionError::AlreadyExists(_) => EXIT_INPUT,
                _ => EXIT_OTHER,
            }
        };
        Self::new(code, e.to_string())
    }
}

impl From<HarnessError> for CliError {
    fn from(e: HarnessError) -> Self {
        let code = match &e {
            HarnessError::Schema { .. }
            | HarnessError::MissingLabel { .. }
            | HarnessError::InvalidLabel { .. }
            | HarnessError::DuplicateId(_)
            | HarnessError::Io(_)
            | HarnessError::UnknownDimension(_)
            | HarnessError::Parallelism => EXIT_INPUT,
            _ => EXIT_OTHER,
        };
        Self::new(code, e.to_string())
    }
}

type CliResult = Result<(), CliError>;

#[derive(Debug, Parser)]
#[command(
    name = "contestable",
    version,
    about = "Contestable essay feedback: grade, challenge, evaluate, serve"
)]
pub struct Cli {
    #[command(subcommand)]
    pub command: Command,
}

#[derive(Debug, Subcommand)]
pub enum Command {
    /// Print the extensions of an argumentation framework file.
    Solve(SolveArgs),
    /// Grade one essay end to end and write its report and event log.
    Grade(GradeArgs),
    /// Run the evaluation harness over a labelled corpus.
    Eval(EvalArgs),
    /// Serve the HTTP API.
    Serve(ServeArgs),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, ValueEnum)]
pub enum Semantics {
    Complete,
    Grounded,
}

#[derive(Debug, Args)]
pub struct SolveArgs {
    /// Framework file (`p af n` header, then `i j` attack lines).
    pub af_file: PathBuf,
    #[arg(long, value_enum, default_value = "complete")]
    pub semantics: Semantics,
    /// Print only the extension the grader would use.
    #[arg(long)]
    pub select_final: bool,
    #[arg(long, default_value_t = DEFAULT_MAX_ARGUMENTS)]
    pub max_arguments: usize,
}

#[derive(Debug, Args)]
pub struct EngineArgs {
    /// Backend configuration (TOML).
    #[arg(long)]
    pub backend: PathBuf,
    /// Engine configuration (TOML): discussion, teacher, personas.
    #[arg(long)]
    pub engine: Option<PathBuf>,
    /// Rubric file (TOML); the built-in critical-thinking rubric otherwise.
    #[arg(long)]
    pub rubric: Option<PathBuf>,
    /// Directory of prompt-template overrides.
    #[arg(long)]
    pub templates: Option<PathBuf>,
}

#[derive(Debug, Args)]
pub struct GradeArgs {
    pub essay_file: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Output directory for `<session>.jsonl` and `<session>.report.json`.
    #[arg(long)]
    pub out: PathBuf,
    #[arg(long)]
    pub session_id: Option<String>,
    /// Start a one-second stepping clock at this Unix time instead of the
    /// system clock, for reproducible logs.
    #[arg(long)]
    pub epoch: Option<i64>,
}

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// JSONL corpus: one `{id, text, labels}` record per line.
    #[arg(long)]
    pub dataset: PathBuf,
    #[command(flatten)]
    pub engine: EngineArgs,
    /// Backend for the simulated student; defaults to `--backend`.
    #[arg(long)]
    pub challenger: Option<PathBuf>,
    /// Comma-separated dimension keys.
    #[arg(long, value_delimiter = ',')]
    pub dimensions: Vec<String>,
    #[arg(long, default_value_t = 4)]
    pub parallelism: usize,
    /// Directory for `summary.json`, `records.jsonl`, `failures.jsonl` and `table.txt`.
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Method name shown in the table.
    #[arg(long, default_value = "engine")]
    pub method: String,
    /// Print standard errors over each metric's own denominator.
    #[arg(long)]
    pub conditional_se: bool,
}

#[derive(Debug, Args)]
pub struct ServeArgs {
    /// Service configuration (TOML).
    #[arg(long)]
    pub config: PathBuf,
    /// Overrides `listen` from the config.
    #[arg(long)]
    pub listen: Option<String>,
}

pub fn run(cli: Cli) -> CliResult {
    match cli.command {
        Command::Solve(a) => solve(&a),
        Command::Grade(a) => grade(&a),
        Command::Eval(a) => eval(&a),
        Command::Serve(a) => serve(&a),
    }
}

fn read(path: &Path) -> Result<String, CliError> {
    std::fs::read_to_string(path).map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn print(text: &str) -> CliResult {
    let mut out = std::io::stdout().lock();
    out.write_all(text.as_bytes())
        .and_then(|_| out.flush())
        .map_err(|e| CliError::new(EXIT_OTHER, format!("stdout: {e}")))
}

fn af_error(path: &Path, e: AfError) -> CliError {
    let code = match e {
        AfError::SizeLimit { .. } => EXIT_SIZE,
        AfError::Parse { .. } => EXIT_INPUT,
        _ => EXIT_OTHER,
    };
    CliError::new(code, format!("{}: {e}", path.display()))
}

fn solve(a: &SolveArgs) -> CliResult {
    let text = read(&a.af_file)?;
    let af = parse_framework(&text).map_err(|e| af_error(&a.af_file, e))?;
    let extensions = match a.semantics {
        Semantics::Grounded => vec![grounded(&af)],
        Semantics::Complete => {
            let all = enumerate_complete_with_limit(&af, a.max_arguments)
                .map_err(|e| af_error(&a.af_file, e))?;
            if a.select_final {
                vec![select_final(&all).map_err(|e| af_error(&a.af_file, e))?]
            } else {
                all
            }
        }
    };
    print(&format_extensions(&extensions))
}

fn load_rubric(path: Option<&Path>) -> Result<Vec<RubricDimension>, CliError> {
    match path {
        None => Ok(default_rubric()),
        Some(p) => {
            parse_rubric(&read(p)?).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
        }
    }
}

fn load_engine_config(path: Option<&Path>) -> Result<EngineConfig, CliError> {
    match path {
        None => Ok(EngineConfig::default()),
        Some(p) => {
            toml::from_str(&read(p)?).map_err(|e| CliError::input(format!("{}: {e}", p.display())))
        }
    }
}

fn load_backend(path: &Path) -> Result<Arc<dyn ChatBackend>, CliError> {
    BackendConfig::load(path)
        .and_then(|c| c.build())
        .map_err(|e| CliError::input(format!("{}: {e}", path.display())))
}

fn load_templates(dir: Option<&Path>) -> Result<Templates, CliError> {
    match dir {
        None => Ok(Templates::builtin()),
        Some(d) => Templates::load_dir(d).map_err(|e| CliError::input(e.to_string())),
    }
}

fn build_engine(a: &EngineArgs) -> Result<(Engine, Vec<RubricDimension>), CliError> {
    let rubric = load_rubric(a.rubric.as_deref())?;
    let config = load_engine_config(a.engine.as_deref())?;
    let backend = load_backend(&a.backend)?;
    let templates = load_templates(a.templates.as_deref())?;
    let engine = Engine::new(backend, config)
        .map_err(|e| CliError::input(e.to_string()))?
        .with_templates(templates);
    Ok((engine, rubric))
}

fn io_error(path: &Path, e: std::io::Error) -> CliError {
    CliError::new(EXIT_OTHER, format!("{}: {e}", path.display()))
}

fn write_file(path: &Path, text: &str) -> CliResult {
    std::fs::write(path, text).map_err(|e| io_error(path, e))
}

fn grade(a: &GradeArgs) -> CliResult {
    let essay = read(&a.essay_file)?;
    let (mut engine, rubric) = build_engine(&a.engine)?;
    if let Some(epoch) = a.epoch {
        engine = engine.with_clock(Arc::new(SteppingClock::from_epoch(epoch)));
    }
    let store = SessionStore::open(&a.out).map_err(|e| CliError::new(EXIT_OTHER, e.to_string()))?;
    let id = a.session_id.clone().unwrap_or_else(new_session_id);
    if store.exists(&id) {
        return Err(SessionError::AlreadyExists(id).into());
    }
    let mut session = engine.start_session(&id, &essay, rubric)?;
    let outcome = engine.run_initial_evaluation(&mut session);
    // The log is kept even when the run failed.
    store.sync(&session)?;
    let report = outcome?;
    let report_path = a.out.join(format!("{id}.report.json"));
    let json = serde_json::to_string_pretty(&report).expect("report serialises");
    write_file(&report_path, &(json + "\n"))?;
    let grades: serde_json::Map<String, serde_json::Value> = report
        .entries
        .iter()
        .map(|e| (e.dimension_key.clone(), e.grade.level.into()))
        .collect();
    let line = serde_json::json!({
        "session_id": id,
        "report": report_path,
        "log": store.log_path(&id)?,
        "grades": grades,
    });
    print(&format!("{line}\n"))
}

fn eval(a: &EvalArgs) -> CliResult {
    let (engine, rubric) = build_engine(&a.engine)?;
    let dataset = load_dataset(&a.dataset, &rubric)?;
    if dataset.is_empty() {
        return Err(CliError::input(format!(
            "{}: dataset is empty",
            a.dataset.display()
        )));
    }
    let challenger_backend = match &a.challenger {
        Some(p) => load_backend(p)?,
        None => engine.backend().clone(),
    };
    let templates = Arc::new(load_templates(a.engine.templates.as_deref())?);
    let challenger = Challenger::new(challenger_backend).with_templates(templates);
    let config = HarnessConfig {
        parallelism: a.parallelism,
        dimensions: a.dimensions.clone(),
        method: a.method.clone(),
    };
    let run = run_harness(&engine, &challenger, &dataset, &rubric, &config)?;
    for f in &run.failures {
        eprintln!(
            "trial {}/{} failed: {}",
            f.essay_id, f.dimension_key, f.error
        );
    }
    let summary = run
        .summary(&a.method)
        .map_err(|e| CliError::new(EXIT_BACKEND, format!("every trial failed: {e}")))?;
    let table = emit_report(
        &summary,
        if a.conditional_se {
            ReportFormat::TableConditional
        } else {
            ReportFormat::Table
        },
    );
    if let Some(dir) = &a.out {
        std::fs::create_dir_all(dir).map_err(|e| io_error(dir, e))?;
        write_file(
            &dir.join("summary.json"),
            &emit_report(&summary, ReportFormat::Structured),
        )?;
        write_file(&dir.join("table.txt"), &table)?;
        let jsonl = |items: Vec<String>| items.into_iter().map(|l| l + "\n").collect::<String>();
        write_file(
            &dir.join("records.jsonl"),
            &jsonl(
                run.records
                    .iter()
                    .map(|r| serde_json::to_string(r).expect("record"))
                    .collect(),
            ),
        )?;
        write_file(
            &dir.join("failures.jsonl"),
            &jsonl(
                run.failures
                    .iter()
                    .map(|f| serde_json::to_string(f).expect("failure"))
                    .collect(),
            ),
        )?;
    }
    print(&table)
}

fn serve(a: &ServeArgs) -> CliResult {
    let mut config = ServiceConfig::load(&a.config).map_err(CliError::input)?;
    if let Some(listen) = &a.listen {
        config.listen = listen.clone();
    }
    let addr: std::net::SocketAddr = config
        .listen
        .parse()
        .map_err(|e| CliError::input(format!("listen `{}`: {e}", config.listen)))?;
    let rubric = load_rubric(config.rubric.as_deref())?;
    let backend = load_backend(&config.backend)?;
    let templates = load_templates(config.templates.as_deref())?;
    let engine = Engine::new(backend, config.engine.clone())
        .map_err(|e| CliError::input(e.to_string()))?
        .with_templates(templates);
    let store = SessionStore::open(&config.data_dir).map_err(|e| CliError::input(e.to_string()))?;

    let listener = std::net::TcpListener::bind(addr).map_err(|e| match e.kind() {
        std::io::ErrorKind::AddrInUse => {
            CliError::new(EXIT_PORT, format!("{addr} is already in use"))
        }
        _ => CliError::new(EXIT_OTHER, format!("bind {addr}: {e}")),
    })?;
    listener
        .set_nonblocking(true)
        .map_err(|e| CliError::new(EXIT_OTHER, e.to_string()))?;
    let state = Arc::new(AppState::new(
        engine,
        store,
        rubric,
        config.parallelism,
        config.busy,
    ));

    let runtime = tokio::runtime::Builder::new_multi_thread()
        .enable_all()
        .build()
        .map_err(|e| CliError::new(EXIT_OTHER, e.to_string()))?;
    let result = runtime.block_on(async {
        let listener = tokio::net::TcpListener::from_std(listener)?;
        eprintln!("listening on {}", listener.local_addr()?);
        crate::service::serve(listener, state, shutdown_signal()).await
    });
    // Workers still inside a model call get a grace period to write their log.
    runtime.shutdown_timeout(std::time::Duration::from_secs(30));
    result.map_err(|e| CliError::new(EXIT_OTHER, e.to_string()))
}

async fn shutdown_signal() {
    let ctrl_c = async {
        let _ = tokio::signal::ctrl_c().await;
    };
    #[cfg(unix)]
    let term = async {
        match tokio::signal::unix::signal(tokio::signal::unix::SignalKind::terminate()) {
            Ok(mut s) => {
                s.recv().await;
            }
            Err(_) => std::future::pending().await,
        }
    };
    #[cfg(not(unix))]
    let term = std::future::pending::<()>();
    tokio::select! {
        _ = ctrl_c => {}
        _ = term => {}
    }
    eprintln!("shutting down");
}
