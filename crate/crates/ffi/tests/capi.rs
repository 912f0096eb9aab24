use std::ffi::{c_char, CStr, CString};
use std::path::{Path, PathBuf};
use std::process::Command;
use std::ptr;

use contestable_ffi::*;

fn core_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../core")
}

fn take(s: *mut c_char) -> String {
    assert!(!s.is_null());
    let out = unsafe { CStr::from_ptr(s) }.to_str().unwrap().to_string();
    unsafe { cfe_string_free(s) };
    out
}

fn last_error() -> Option<String> {
    let p = cfe_last_error();
    (!p.is_null()).then(|| take(p))
}

/// Backend config replaying the attendance essay plus one defeated challenge.
fn backend_config(dir: &Path) -> PathBuf {
    let f = core_dir().join("fixtures").canonicalize().unwrap();
    let path = dir.join("backend.toml");
    let scripts: Vec<String> = [
        "attendance_issue.json",
        "other_dimensions.json",
        "challenge_defeated.json",
    ]
    .iter()
    .map(|n| format!("{:?}", f.join(n).display().to_string()))
    .collect();
    std::fs::write(
        &path,
        format!("kind = \"scripted\"\nscripts = [{}]\n", scripts.join(", ")),
    )
    .unwrap();
    path
}

#[test]
fn framework_calls() {
    let text = CString::new("p af 3\n1 2\n2 3\n").unwrap();
    let mut af = ptr::null_mut();
    assert_eq!(
        unsafe { cfe_af_parse(text.as_ptr(), &mut af) },
        CfeStatus::Ok
    );
    assert!(last_error().is_none());

    let mut n = 0u32;
    assert_eq!(unsafe { cfe_af_num_arguments(af, &mut n) }, CfeStatus::Ok);
    assert_eq!(n, 3);

    // Chain 1 -> 2 -> 3: the only complete extension is {1, 3}.
    let mut out = ptr::null_mut();
    assert_eq!(unsafe { cfe_af_complete(af, 20, &mut out) }, CfeStatus::Ok);
    assert_eq!(take(out), "1 3\n");
    assert_eq!(unsafe { cfe_af_grounded(af, &mut out) }, CfeStatus::Ok);
    assert_eq!(take(out), "1 3\n");
    assert_eq!(
        unsafe { cfe_af_select_final(af, 20, &mut out) },
        CfeStatus::Ok
    );
    assert_eq!(take(out), "1 3\n");

    let mut yes = false;
    assert_eq!(
        unsafe { cfe_af_is_complete(af, [1u32, 3].as_ptr(), 2, &mut yes) },
        CfeStatus::Ok
    );
    assert!(yes);
    assert_eq!(
        unsafe { cfe_af_is_complete(af, [1u32].as_ptr(), 1, &mut yes) },
        CfeStatus::Ok
    );
    assert!(!yes);
    assert_eq!(
        unsafe { cfe_af_is_complete(af, ptr::null(), 0, &mut yes) },
        CfeStatus::Ok
    );
    assert!(!yes);
    assert_eq!(
        unsafe { cfe_af_is_complete(af, [9u32].as_ptr(), 1, &mut yes) },
        CfeStatus::InvalidInput
    );

    assert_eq!(
        unsafe { cfe_af_complete(af, 2, &mut out) },
        CfeStatus::SizeLimit
    );
    assert!(last_error().unwrap().contains("limit of 2"));
    unsafe { cfe_af_free(af) };
}

#[test]
fn argument_errors() {
    let mut af = ptr::null_mut();
    assert_eq!(
        unsafe { cfe_af_parse(ptr::null(), &mut af) },
        CfeStatus::NullArgument
    );
    assert!(af.is_null());
    let bad = CString::new("p af 2\n1 5\n").unwrap();
    assert_eq!(
        unsafe { cfe_af_parse(bad.as_ptr(), &mut af) },
        CfeStatus::Parse
    );
    assert!(last_error().unwrap().starts_with("line 2"));
    let invalid = [0xffu8, 0];
    assert_eq!(
        unsafe { cfe_af_parse(invalid.as_ptr().cast(), &mut af) },
        CfeStatus::InvalidUtf8
    );
    let ok = CString::new("p af 1\n").unwrap();
    assert_eq!(
        unsafe { cfe_af_parse(ok.as_ptr(), ptr::null_mut()) },
        CfeStatus::NullArgument
    );
    let mut n = 0;
    assert_eq!(
        unsafe { cfe_af_num_arguments(ptr::null(), &mut n) },
        CfeStatus::NullArgument
    );
    // Freeing null is a no-op.
    unsafe {
        cfe_af_free(ptr::null_mut());
        cfe_engine_free(ptr::null_mut());
        cfe_session_free(ptr::null_mut());
        cfe_string_free(ptr::null_mut());
    }
}

#[test]
fn standard_error_and_metrics() {
    let mut se = 0.0;
    assert_eq!(
        unsafe { cfe_standard_error(0.5, 100, &mut se) },
        CfeStatus::Ok
    );
    assert!((se - 0.05).abs() < 1e-12);
    assert_eq!(
        unsafe { cfe_standard_error(1.5, 100, &mut se) },
        CfeStatus::InvalidInput
    );
    assert_eq!(
        unsafe { cfe_standard_error(0.5, 0, &mut se) },
        CfeStatus::InvalidInput
    );

    let records = [
        (2, 2, 2),
        (2, 2, 1),
        (2, 1, 2),
        (2, 1, 1),
    ]
    .iter()
    .enumerate()
    .map(|(i, (t, a, b))| {
        format!(
            "{{\"essay_id\":\"e{i}\",\"dimension_key\":\"issue\",\"truth_level\":{t},\"initial_level\":{a},\"post_interaction_level\":{b}}}\n"
        )
    })
    .collect::<String>();
    let records = CString::new(records).unwrap();
    let mut out = ptr::null_mut();
    let status = unsafe { cfe_metrics_from_records(records.as_ptr(), &mut out) };
    assert_eq!(status, CfeStatus::Ok, "{:?}", last_error());
    let summary: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    let issue = &summary["dimensions"][0];
    assert_eq!(issue["initial_acc"]["count"], 2);
    assert_eq!(issue["interaction_acc"]["count"], 2);
    assert_eq!(issue["maintain_truth"]["count"], 1);
    assert_eq!(issue["admit_mistake"]["count"], 1);

    let bad = CString::new("{}\n").unwrap();
    assert_eq!(
        unsafe { cfe_metrics_from_records(bad.as_ptr(), &mut out) },
        CfeStatus::Parse
    );
    let empty = CString::new("").unwrap();
    assert_eq!(
        unsafe { cfe_metrics_from_records(empty.as_ptr(), &mut out) },
        CfeStatus::InvalidInput
    );
}

#[test]
fn session_lifecycle_and_replay() {
    let dir = tempfile::tempdir().unwrap();
    let cfg = CString::new(backend_config(dir.path()).display().to_string()).unwrap();
    let mut engine = ptr::null_mut();
    let status = unsafe { cfe_engine_new(cfg.as_ptr(), ptr::null(), &mut engine) };
    assert_eq!(status, CfeStatus::Ok, "{:?}", last_error());

    let essay = CString::new(
        std::fs::read_to_string(core_dir().join("fixtures/essay_attendance.txt")).unwrap(),
    )
    .unwrap();
    let id = CString::new("ffi-1").unwrap();
    let mut session = ptr::null_mut();
    assert_eq!(
        unsafe {
            cfe_session_start(
                engine,
                id.as_ptr(),
                essay.as_ptr(),
                ptr::null(),
                &mut session,
            )
        },
        CfeStatus::Ok
    );
    let mut out = ptr::null_mut();
    assert_eq!(
        unsafe { cfe_session_state(session, &mut out) },
        CfeStatus::Ok
    );
    assert_eq!(take(out), "created");

    let dim = CString::new("issue").unwrap();
    let text = CString::new("I disagree").unwrap();
    assert_eq!(
        unsafe { cfe_session_challenge(engine, session, dim.as_ptr(), text.as_ptr(), &mut out) },
        CfeStatus::WrongState
    );

    let status = unsafe { cfe_session_evaluate(engine, session, &mut out) };
    assert_eq!(status, CfeStatus::Ok, "{:?}", last_error());
    let report: serde_json::Value = serde_json::from_str(&take(out)).unwrap();
    let issue = report["entries"]
        .as_array()
        .unwrap()
        .iter()
        .find(|e| e["dimension_key"] == "issue")
        .unwrap();
    assert_eq!(issue["accepted_argument_ids"], serde_json::json!([1, 3]));

    let challenge = CString::new(
        std::fs::read_to_string(core_dir().join("fixtures/challenge_defeated.txt"))
            .unwrap()
            .trim(),
    )
    .unwrap();
    let status = unsafe {
        cfe_session_challenge(engine, session, dim.as_ptr(), challenge.as_ptr(), &mut out)
    };
    assert_eq!(status, CfeStatus::Ok, "{:?}", last_error());
    let revised = take(out);

    assert_eq!(unsafe { cfe_session_log(session, &mut out) }, CfeStatus::Ok);
    let log = CString::new(take(out)).unwrap();
    let mut again = ptr::null_mut();
    assert_eq!(
        unsafe { cfe_session_replay(log.as_ptr(), &mut again) },
        CfeStatus::Ok
    );
    assert_eq!(unsafe { cfe_session_state(again, &mut out) }, CfeStatus::Ok);
    assert_eq!(take(out), "feedback_ready");
    assert_eq!(unsafe { cfe_session_log(again, &mut out) }, CfeStatus::Ok);
    assert_eq!(take(out).as_bytes(), log.as_bytes());
    assert!(!revised.is_empty());

    let truncated = CString::new(
        log.to_str()
            .unwrap()
            .lines()
            .skip(1)
            .collect::<Vec<_>>()
            .join("\n"),
    )
    .unwrap();
    let mut broken = ptr::null_mut();
    assert_eq!(
        unsafe { cfe_session_replay(truncated.as_ptr(), &mut broken) },
        CfeStatus::Parse
    );
    assert!(broken.is_null());

    unsafe {
        cfe_session_free(again);
        cfe_session_free(session);
        cfe_engine_free(engine);
    }
}

#[test]
fn engine_errors() {
    let dir = tempfile::tempdir().unwrap();
    let missing = CString::new(dir.path().join("none.toml").display().to_string()).unwrap();
    let mut engine = ptr::null_mut();
    assert_eq!(
        unsafe { cfe_engine_new(missing.as_ptr(), ptr::null(), &mut engine) },
        CfeStatus::InvalidInput
    );
    let cfg = CString::new(backend_config(dir.path()).display().to_string()).unwrap();
    let bad = CString::new("[discussion]\nrounds = \"x\"\n").unwrap();
    assert_eq!(
        unsafe { cfe_engine_new(cfg.as_ptr(), bad.as_ptr(), &mut engine) },
        CfeStatus::Parse
    );
    assert!(engine.is_null());
}

fn target_dir() -> PathBuf {
    // tests run from target/<profile>/deps
    std::env::current_exe()
        .unwrap()
        .parent()
        .unwrap()
        .parent()
        .unwrap()
        .to_path_buf()
}

fn header_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("include")
}

#[test]
fn header_compiles_as_c_and_cpp() {
    let header = header_dir().join("contestable.h");
    for (compiler, lang) in [("cc", "c"), ("c++", "c++")] {
        let status = Command::new(compiler)
            .args(["-fsyntax-only", "-Wall", "-Werror", "-x", lang])
            .arg(&header)
            .status();
        match status {
            Ok(s) => assert!(s.success(), "{compiler} rejected the header"),
            Err(e) => eprintln!("skipping {compiler}: {e}"),
        }
    }
}

#[test]
fn c_program_links_against_static_library() {
    let lib = target_dir().join("libcontestable_ffi.a");
    if !lib.exists() {
        eprintln!("skipping: {} not built", lib.display());
        return;
    }
    let dir = tempfile::tempdir().unwrap();
    let src = dir.path().join("main.c");
    std::fs::write(
        &src,
        r#"#include <stdio.h>
#include "contestable.h"

int main(void) {
    CfeFramework *af = NULL;
    char *out = NULL;
    if (cfe_af_parse("p af 2\n1 2\n2 1\n", &af) != CFE_STATUS_OK) return 10;
    if (cfe_af_complete(af, 20, &out) != CFE_STATUS_OK) return 11;
    fputs(out, stdout);
    cfe_string_free(out);
    if (cfe_af_select_final(af, 20, &out) != CFE_STATUS_OK) return 12;
    fputs(out, stdout);
    cfe_string_free(out);
    cfe_af_free(af);
    if (cfe_af_parse("p af x\n", &af) != CFE_STATUS_PARSE) return 13;
    char *err = cfe_last_error();
    printf("error: %s\n", err);
    cfe_string_free(err);
    return 0;
}
"#,
    )
    .unwrap();
    let exe = dir.path().join("demo");
    let built = Command::new("cc")
        .arg(&src)
        .arg("-I")
        .arg(header_dir())
        .arg(&lib)
        .args(["-lpthread", "-ldl", "-lm", "-o"])
        .arg(&exe)
        .output();
    let built = match built {
        Ok(b) => b,
        Err(e) => return eprintln!("skipping: {e}"),
    };
    assert!(
        built.status.success(),
        "{}",
        String::from_utf8_lossy(&built.stderr)
    );
    let run = Command::new(&exe).output().unwrap();
    assert!(run.status.success(), "exit {:?}", run.status.code());
    let stdout = String::from_utf8(run.stdout).unwrap();
    let mut lines = stdout.lines();
    assert_eq!(lines.next(), Some("1"));
    assert_eq!(lines.next(), Some("2"));
    assert_eq!(lines.next(), Some(""));
    assert_eq!(lines.next(), Some("1"));
    assert!(lines.next().unwrap().starts_with("error: line 1"));
}
