//! Acceptance suite. Prints one `PASS`/`FAIL` line per criterion and exits
//! non-zero if any criterion fails. Run with
//! `cargo test -p contestable --test acceptance`.

use std::collections::BTreeSet;
use std::panic::{catch_unwind, AssertUnwindSafe};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::sync::Arc;
use std::time::{Duration, Instant};

use num_rational::Ratio;
use rand::rngs::StdRng;
use rand::{Rng, SeedableRng};

use contestable::af::text::parse_framework;
use contestable::af::{
    enumerate_complete, grounded, is_complete, ArgumentId, ArgumentationFramework,
};
use contestable::backend::{Script, ScriptedBackend};
use contestable::evalharness::{compute_metrics, standard_error, EvaluationRecord};
use contestable::session::{replay, Engine, EngineConfig, Session, SessionStore, SteppingClock};
use contestable::teacher::DimensionReport;

type Outcome = Result<String, String>;

macro_rules! ensure {
    ($cond:expr, $($msg:tt)+) => {
        let ok: bool = $cond;
        if !ok {
            return Err(format!($($msg)+));
        }
    };
}

fn root() -> PathBuf {
    PathBuf::from(env!("CARGO_MANIFEST_DIR"))
}

fn ids(set: &BTreeSet<ArgumentId>) -> Vec<u32> {
    set.iter().map(|a| a.get()).collect()
}

/// Complete extensions by direct subset filtering, written from the
/// definitions without the library's predicates.
fn brute_complete(n: u32, attacks: &[(u32, u32)]) -> Vec<Vec<u32>> {
    let attacks_of = |x: u32, y: u32| attacks.contains(&(x, y));
    let mut out = Vec::new();
    for mask in 0u32..(1 << n) {
        let set: Vec<u32> = (1..=n).filter(|i| mask & (1 << (i - 1)) != 0).collect();
        let conflict_free = set.iter().all(|&a| set.iter().all(|&b| !attacks_of(a, b)));
        let defended = |a: u32| {
            (1..=n)
                .filter(|&b| attacks_of(b, a))
                .all(|b| set.iter().any(|&c| attacks_of(c, b)))
        };
        let admissible = conflict_free && set.iter().all(|&a| defended(a));
        let complete = admissible && (1..=n).all(|a| set.contains(&a) || !defended(a));
        if complete {
            out.push(set);
        }
    }
    out.sort();
    out
}

fn framework(n: u32, attacks: &[(u32, u32)]) -> ArgumentationFramework {
    let mut af = ArgumentationFramework::with_arguments(n);
    for &(a, b) in attacks {
        af.add_attack(ArgumentId::new(a), ArgumentId::new(b))
            .unwrap();
    }
    af
}

/// Every framework with at most three arguments, then 1,000 random ones at
/// four and five arguments.
fn corpus() -> Vec<(u32, Vec<(u32, u32)>)> {
    let mut out = Vec::new();
    for n in 1..=3u32 {
        let pairs: Vec<(u32, u32)> = (1..=n).flat_map(|a| (1..=n).map(move |b| (a, b))).collect();
        for mask in 0u64..(1 << pairs.len()) {
            let attacks = pairs
                .iter()
                .enumerate()
                .filter(|(i, _)| mask & (1 << i) != 0)
                .map(|(_, p)| *p)
                .collect();
            out.push((n, attacks));
        }
    }
    let mut rng = StdRng::seed_from_u64(0x5eed);
    for n in [4u32, 5] {
        for _ in 0..1000 {
            let density: f64 = rng.random_range(0.05..0.6);
            let attacks = (1..=n)
                .flat_map(|a| (1..=n).map(move |b| (a, b)))
                .filter(|_| rng.random_bool(density))
                .collect::<Vec<_>>();
            out.push((n, attacks));
        }
    }
    out
}

fn oracle_equivalence() -> Outcome {
    let start = Instant::now();
    let corpus = corpus();
    let mut mismatches = 0;
    for (n, attacks) in &corpus {
        let af = framework(*n, attacks);
        let mut solved: Vec<Vec<u32>> = enumerate_complete(&af)
            .unwrap()
            .iter()
            .map(|e| ids(e.members()))
            .collect();
        solved.sort();
        let mut filtered = Vec::new();
        for mask in 0u32..(1 << n) {
            let set: BTreeSet<ArgumentId> = (1..=*n)
                .filter(|i| mask & (1 << (i - 1)) != 0)
                .map(ArgumentId::new)
                .collect();
            if is_complete(&af, &set).unwrap() {
                filtered.push(ids(&set));
            }
        }
        filtered.sort();
        if solved != filtered || solved != brute_complete(*n, attacks) {
            mismatches += 1;
        }
    }
    let elapsed = start.elapsed();
    ensure!(
        mismatches == 0,
        "{mismatches} mismatches over {} frameworks",
        corpus.len()
    );
    ensure!(elapsed < Duration::from_secs(60), "took {elapsed:?}");
    Ok(format!(
        "{} frameworks, 0 mismatches, {elapsed:.2?}",
        corpus.len()
    ))
}

fn grounded_cross_check() -> Outcome {
    let corpus = corpus();
    let mut mismatches = 0;
    for (n, attacks) in &corpus {
        let all = brute_complete(*n, attacks);
        let meet: Vec<u32> = (1..=*n)
            .filter(|a| all.iter().all(|e| e.contains(a)))
            .collect();
        if ids(grounded(&framework(*n, attacks)).members()) != meet {
            mismatches += 1;
        }
    }
    ensure!(
        mismatches == 0,
        "{mismatches} mismatches over {} frameworks",
        corpus.len()
    );
    Ok(format!("{} frameworks, 0 mismatches", corpus.len()))
}

/// (percentage, printed standard error) for every cell of the published
/// results table, row by row.
const TABLE: [(f64, f64); 64] = [
    (48.40, 2.23),
    (51.00, 2.24),
    (80.17, 1.78),
    (57.55, 2.21),
    (55.00, 2.22),
    (43.20, 2.21),
    (39.27, 2.18),
    (35.18, 2.14),
    (53.80, 2.23),
    (47.20, 2.23),
    (49.07, 2.23),
    (42.45, 2.21),
    (53.20, 2.23),
    (42.20, 2.21),
    (31.58, 2.08),
    (36.49, 2.15),
    (79.00, 1.82),
    (77.00, 1.88),
    (91.90, 1.22),
    (39.29, 2.18),
    (66.20, 2.11),
    (32.40, 2.09),
    (33.23, 2.11),
    (18.37, 1.73),
    (78.60, 1.83),
    (44.20, 2.22),
    (47.58, 2.23),
    (14.41, 1.57),
    (55.40, 2.22),
    (32.60, 2.10),
    (23.10, 1.88),
    (27.37, 1.99),
    (67.20, 2.09),
    (68.20, 2.08),
    (88.10, 1.44),
    (51.14, 2.23),
    (63.40, 2.15),
    (43.80, 2.22),
    (20.50, 1.81),
    (41.62, 2.20),
    (69.60, 2.06),
    (55.20, 2.22),
    (61.78, 2.17),
    (31.28, 2.07),
    (47.40, 2.23),
    (42.20, 2.21),
    (14.77, 1.59),
    (40.65, 2.20),
    (75.80, 1.92),
    (62.80, 2.16),
    (75.72, 1.92),
    (22.88, 1.88),
    (69.60, 2.06),
    (25.00, 1.94),
    (13.21, 1.51),
    (20.31, 1.80),
    (79.80, 1.80),
    (40.20, 2.19),
    (29.07, 2.03),
    (23.35, 1.89),
    (36.00, 2.15),
    (28.60, 2.02),
    (20.56, 1.81),
    (29.28, 2.04),
];

fn se_percent(p: f64) -> f64 {
    standard_error(p / 100.0, 500).unwrap() * 100.0
}

fn table_standard_errors() -> Outcome {
    let start = Instant::now();
    let misses: Vec<String> = TABLE
        .iter()
        .filter(|(p, printed)| (se_percent(*p) - printed).abs() > 0.005 + 1e-9)
        .map(|(p, printed)| format!("{p:.2}: {:.4} vs {printed:.2}", se_percent(*p)))
        .collect();
    let elapsed = start.elapsed();
    ensure!(
        misses.is_empty(),
        "{}/64 outside 0.005: {}",
        misses.len(),
        misses.join("; ")
    );
    ensure!(elapsed < Duration::from_secs(1), "took {elapsed:?}");
    Ok(format!("64 pairs within 0.005, {elapsed:.2?}"))
}

/// Diagnostic only: how the printed values compare with rounding and
/// truncation of the computed standard error to two decimals.
fn table_rounding_note() -> String {
    let close = |a: f64, b: f64| (a - b).abs() < 1e-9;
    let (mut rounded, mut truncated, mut either) = (0, 0, 0);
    for (p, printed) in TABLE {
        let hundredths = se_percent(p) * 100.0;
        let r = close(hundredths.round() / 100.0, printed);
        let t = close((hundredths + 1e-9).floor() / 100.0, printed);
        rounded += r as usize;
        truncated += t as usize;
        either += (r || t) as usize;
    }
    format!("{rounded}/64 equal the rounded value, {truncated}/64 the truncated one, {either}/64 either")
}

fn metric_identity() -> Outcome {
    let mut rng = StdRng::seed_from_u64(7);
    let mut checked = 0;
    for set in 0..10_000 {
        let n = rng.random_range(1..=40);
        let records: Vec<EvaluationRecord> = (0..n)
            .map(|i| EvaluationRecord {
                essay_id: format!("e{i}"),
                dimension_key: "d".into(),
                truth_level: rng.random_range(0..3),
                initial_level: rng.random_range(0..3),
                post_interaction_level: rng.random_range(0..3),
            })
            .collect();
        let big_n = records.len() as i64;
        let c = records.iter().filter(|r| r.initial_correct()).count() as i64;
        let m = compute_metrics(&records).unwrap();
        let d = m.dimension("d").unwrap();
        // Independent counts from the records themselves.
        let post = records.iter().filter(|r| r.post_correct()).count() as u64;
        let kept = records
            .iter()
            .filter(|r| r.initial_correct() && r.post_correct())
            .count() as u64;
        ensure!(
            d.interaction_acc.count == post && d.maintain_truth.count == kept,
            "set {set}: counts differ"
        );
        if c == 0 || c == big_n {
            continue;
        }
        let ratio = |count: u64, den: i64| Ratio::new(count as i64, den);
        let lhs = ratio(d.interaction_acc.count, big_n) * big_n;
        let rhs = ratio(d.maintain_truth.count, c) * c
            + ratio(d.admit_mistake.count, big_n - c) * (big_n - c);
        ensure!(lhs == rhs, "set {set}: {lhs} != {rhs}");
        let float = d.maintain_truth.value.unwrap() * c as f64
            + d.admit_mistake.value.unwrap() * (big_n - c) as f64;
        ensure!(
            (d.interaction_acc.value.unwrap() * big_n as f64 - float).abs() < 1e-9,
            "set {set}: float identity"
        );
        checked += 1;
    }
    Ok(format!(
        "10000 sets, identity exact on {checked} with 0 < C < N"
    ))
}

fn scripted_engine(scripts: &[&str]) -> Engine {
    let mut exchanges = Vec::new();
    for s in scripts {
        let text = std::fs::read_to_string(root().join("fixtures").join(s)).unwrap();
        exchanges.extend(Script::parse(&text).unwrap().exchanges);
    }
    Engine::new(
        Arc::new(ScriptedBackend::new(exchanges)),
        EngineConfig::default(),
    )
    .unwrap()
    // Later than the graded run's clock so persisted timestamps stay ordered.
    .with_clock(Arc::new(SteppingClock::from_epoch(1_800_000_000)))
}

fn labels(ids: &[ArgumentId]) -> Vec<String> {
    ids.iter().map(|i| i.label()).collect()
}

/// Re-solves a persisted snapshot with the brute-force oracle and checks the
/// stored extension is the largest complete one, ties lexicographic.
fn check_snapshot(entry: &DimensionReport) -> Result<(), String> {
    let af = parse_framework(&entry.framework.af).map_err(|e| e.to_string())?;
    let attacks: Vec<(u32, u32)> = af
        .attacks()
        .iter()
        .map(|(a, b)| (a.get(), b.get()))
        .collect();
    let all = brute_complete(af.len() as u32, &attacks);
    let best = all
        .iter()
        .max_by(|x, y| x.len().cmp(&y.len()).then_with(|| y.cmp(x)))
        .ok_or("no complete extension")?;
    let stored: Vec<u32> = entry
        .accepted_argument_ids
        .iter()
        .map(|a| a.get())
        .collect();
    ensure!(
        &stored == best,
        "{}: stored {stored:?}, oracle {best:?}",
        entry.dimension_key
    );
    Ok(())
}

fn grade_once(dir: &Path) -> Result<(Vec<u8>, serde_json::Value), String> {
    let out = Command::new(env!("CARGO_BIN_EXE_contestable"))
        .current_dir(root())
        .args([
            "grade",
            "fixtures/essay_attendance.txt",
            "--backend",
            "config/scripted_essay.toml",
        ])
        .args(["--session-id", "golden", "--epoch", "1700000000", "--out"])
        .arg(dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "grade exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let log = std::fs::read(dir.join("golden.jsonl")).map_err(|e| e.to_string())?;
    let report =
        std::fs::read_to_string(dir.join("golden.report.json")).map_err(|e| e.to_string())?;
    Ok((
        log,
        serde_json::from_str(&report).map_err(|e| e.to_string())?,
    ))
}

struct Workspace {
    _tmp: tempfile::TempDir,
    stores: Vec<PathBuf>,
}

fn golden_run(ws: &mut Workspace) -> Outcome {
    let mut logs = Vec::new();
    for i in 0..5 {
        let dir = ws._tmp.path().join(format!("golden-{i}"));
        let (log, report) = grade_once(&dir)?;
        let issue = &report["entries"][0];
        ensure!(
            issue["dimension_key"] == "issue",
            "first entry is {}",
            issue["dimension_key"]
        );
        ensure!(
            issue["accepted_argument_ids"] == serde_json::json!([1, 3]),
            "accepted {}",
            issue["accepted_argument_ids"]
        );
        ensure!(
            issue["grade"]["level"] == 1,
            "issue grade {}",
            issue["grade"]["level"]
        );
        logs.push(log);
        ws.stores.push(dir);
    }
    ensure!(
        logs.windows(2).all(|w| w[0] == w[1]),
        "event logs differ across runs"
    );

    let store = SessionStore::open(&ws.stores[0]).map_err(|e| e.to_string())?;
    let session = store.load("golden").map_err(|e| e.to_string())?;
    let initial = session.current_report().unwrap().clone();
    let issue = initial.entry("issue").unwrap();
    ensure!(
        labels(&issue.accepted_argument_ids) == ["A", "C"],
        "accepted {:?}",
        labels(&issue.accepted_argument_ids)
    );
    for entry in &initial.entries {
        check_snapshot(entry)?;
    }

    // Defeated student argument: grade unchanged.
    let defeated_dir = ws._tmp.path().join("defeated");
    std::fs::create_dir_all(&defeated_dir).unwrap();
    let engine = scripted_engine(&[
        "attendance_issue.json",
        "other_dimensions.json",
        "challenge_defeated.json",
    ]);
    let text = std::fs::read_to_string(root().join("fixtures/challenge_defeated.txt")).unwrap();
    let after = challenge_and_persist(&engine, session.clone(), &text, &defeated_dir)?;
    let entry = after.entry("issue").unwrap();
    check_snapshot(entry)?;
    ensure!(
        entry.grade == issue.grade,
        "defeated challenge moved the grade to {}",
        entry.grade.level
    );
    let student = entry
        .framework
        .arguments
        .iter()
        .find(|a| !issue.framework.arguments.iter().any(|b| b.id == a.id));
    let student = student.ok_or("no new argument after the challenge")?;
    ensure!(
        !entry.accepted_argument_ids.contains(&student.id),
        "student argument accepted"
    );
    ws.stores.push(defeated_dir);

    // Undefended attacker of the sole supporting argument: grade changes.
    let upheld_dir = ws._tmp.path().join("upheld");
    std::fs::create_dir_all(&upheld_dir).unwrap();
    let engine = scripted_engine(&[
        "attendance_issue.json",
        "other_dimensions.json",
        "challenge_upheld.json",
    ]);
    let text = std::fs::read_to_string(root().join("fixtures/challenge_upheld.txt")).unwrap();
    let after = challenge_and_persist(&engine, session, &text, &upheld_dir)?;
    let entry = after.entry("issue").unwrap();
    check_snapshot(entry)?;
    ensure!(
        entry.grade != issue.grade,
        "upheld challenge kept the grade"
    );
    ensure!(
        !entry.accepted_argument_ids.contains(&ArgumentId::new(1)),
        "A still accepted"
    );
    ws.stores.push(upheld_dir);

    Ok(format!(
        "accepted {{A,C}}, grade 1, 5 identical logs; defeated keeps 1, upheld moves to {}",
        entry.grade.level
    ))
}

fn challenge_and_persist(
    engine: &Engine,
    mut session: Session,
    text: &str,
    dir: &Path,
) -> Result<contestable::teacher::FeedbackReport, String> {
    let report = engine
        .submit_challenge(&mut session, "issue", text.trim())
        .map_err(|e| e.to_string())?;
    let store = SessionStore::open(dir).map_err(|e| e.to_string())?;
    store.sync(&session).map_err(|e| e.to_string())?;
    // Persisted snapshot, not the in-memory one.
    let persisted = store.load(session.id()).map_err(|e| e.to_string())?;
    ensure!(
        persisted.current_report() == Some(&report),
        "persisted report differs"
    );
    Ok(report)
}

/// Hand-counted from the fixture plan: (count, n) for initial accuracy,
/// interaction accuracy, maintain truth and admit mistake.
const HARNESS_EXPECTED: [(&str, [(u64, u64); 4]); 4] = [
    ("issue", [(7, 12), (9, 12), (6, 7), (3, 5)]),
    ("evidence", [(10, 12), (9, 12), (8, 10), (1, 2)]),
    ("position", [(5, 12), (9, 12), (5, 5), (4, 7)]),
    ("conclusion", [(12, 12), (10, 12), (10, 12), (0, 0)]),
];

fn harness_smoke(ws: &Workspace) -> Outcome {
    let out_dir = ws._tmp.path().join("eval");
    let out = Command::new(env!("CARGO_BIN_EXE_contestable"))
        .current_dir(root())
        .args([
            "eval",
            "--dataset",
            "data/sample_essays.jsonl",
            "--backend",
            "config/scripted_harness.toml",
            "--out",
        ])
        .arg(&out_dir)
        .output()
        .map_err(|e| e.to_string())?;
    ensure!(
        out.status.success(),
        "eval exited {:?}: {}",
        out.status.code(),
        String::from_utf8_lossy(&out.stderr)
    );
    let records =
        std::fs::read_to_string(out_dir.join("records.jsonl")).map_err(|e| e.to_string())?;
    ensure!(
        records.lines().count() == 48,
        "{} records",
        records.lines().count()
    );
    let summary: serde_json::Value = serde_json::from_str(
        &std::fs::read_to_string(out_dir.join("summary.json")).map_err(|e| e.to_string())?,
    )
    .map_err(|e| e.to_string())?;
    let dims = summary["dimensions"].as_array().ok_or("no dimensions")?;
    ensure!(dims.len() == 4, "{} dimensions", dims.len());
    for (dim, (key, expected)) in dims.iter().zip(HARNESS_EXPECTED) {
        ensure!(
            dim["dimension_key"] == key,
            "order: {} for {key}",
            dim["dimension_key"]
        );
        for (name, (count, n)) in [
            "initial_acc",
            "interaction_acc",
            "maintain_truth",
            "admit_mistake",
        ]
        .iter()
        .zip(expected)
        {
            let m = &dim[*name];
            ensure!(
                m["count"] == count && m["n"] == n,
                "{key}.{name}: {}/{} vs {count}/{n}",
                m["count"],
                m["n"]
            );
            let value = (n > 0).then(|| count as f64 / n as f64);
            ensure!(
                m["value"].as_f64() == value,
                "{key}.{name}: value {}",
                m["value"]
            );
        }
    }
    Ok("48 records, 16 metrics match hand counts".into())
}

fn session_replay(ws: &Workspace) -> Outcome {
    let mut checked = 0;
    for dir in &ws.stores {
        let store = SessionStore::open(dir).map_err(|e| e.to_string())?;
        for entry in store.list().map_err(|e| e.to_string())? {
            let id = &entry.session_id;
            let events = store.events(id).map_err(|e| e.to_string())?;
            let rebuilt = replay(events.clone()).map_err(|e| e.to_string())?;
            // Stepwise application from the raw log text, independently of the store.
            let text =
                std::fs::read_to_string(store.log_path(id).unwrap()).map_err(|e| e.to_string())?;
            let parsed: Vec<_> = text
                .lines()
                .map(|l| serde_json::from_str(l).unwrap())
                .collect();
            let again = replay(parsed).map_err(|e| e.to_string())?;
            ensure!(rebuilt == again, "{id}: replays disagree");
            ensure!(
                rebuilt.history() == events.as_slice(),
                "{id}: history differs"
            );
            let report = rebuilt.current_report().ok_or("no report")?;
            for e in &report.entries {
                check_snapshot(e)?;
            }
            ensure!(rebuilt.state() == again.state(), "{id}: state");
            checked += 1;
        }
    }
    ensure!(
        checked == ws.stores.len(),
        "replayed {checked} of {} logs",
        ws.stores.len()
    );
    Ok(format!("{checked} persisted logs replay to equal sessions"))
}

fn run(name: &str, failed: &mut Vec<String>, f: impl FnOnce() -> Outcome) {
    let outcome = catch_unwind(AssertUnwindSafe(f)).unwrap_or_else(|p| {
        Err(p
            .downcast_ref::<String>()
            .cloned()
            .or_else(|| p.downcast_ref::<&str>().map(|s| s.to_string()))
            .unwrap_or_default())
    });
    match outcome {
        Ok(detail) => println!("PASS {name}: {detail}"),
        Err(detail) => {
            println!("FAIL {name}: {detail}");
            failed.push(name.to_string());
        }
    }
}

fn main() {
    // `cargo test` passes harness flags; listing must not run the suite.
    if std::env::args().any(|a| a == "--list") {
        println!("acceptance: test");
        return;
    }
    let mut ws = Workspace {
        _tmp: tempfile::tempdir().unwrap(),
        stores: Vec::new(),
    };
    let mut failed = Vec::new();
    run("solver oracle equivalence", &mut failed, oracle_equivalence);
    run("grounded cross-check", &mut failed, grounded_cross_check);
    run("table standard errors", &mut failed, table_standard_errors);
    println!("note table standard errors: {}", table_rounding_note());
    run("metric identity", &mut failed, metric_identity);
    run("golden run and challenges", &mut failed, || {
        golden_run(&mut ws)
    });
    run("harness smoke", &mut failed, || harness_smoke(&ws));
    run("session replay", &mut failed, || session_replay(&ws));
    println!("{} of 7 criteria passed", 7 - failed.len());
    if !failed.is_empty() {
        std::process::exit(1);
    }
}
