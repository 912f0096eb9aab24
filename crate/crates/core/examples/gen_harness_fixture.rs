//! Builds the scripted backend for the harness smoke run from an outcomes
//! table (`essay_id,dimension,truth,initial,post`).
//!
//! Every trial uses one of two shapes:
//! - hold: the student argument attacks both initial arguments and is
//!   attacked by both agents' rebuttals, so the grade stays;
//! - flip: the student argument attacks both initial arguments and the
//!   agents concede at the student's level, so the grade moves to `post`.
//!
//! ```text
//! cargo run -p contestable --example gen_harness_fixture -- \
//!     fixtures/harness/outcomes.csv fixtures/harness/script.json
//! ```

use std::process::ExitCode;

use contestable::backend::{Script, ScriptedExchange};
use serde_json::json;

fn other_level(level: u32) -> u32 {
    if level < 2 {
        level + 1
    } else {
        level - 1
    }
}

fn session(exchange: ScriptedExchange, id: &str) -> ScriptedExchange {
    exchange.in_session(id)
}

fn trial(essay: &str, dim: &str, initial: u32, post: u32) -> Vec<ScriptedExchange> {
    let id = format!("{essay}-{dim}");
    let student_level = if initial == post {
        other_level(initial)
    } else {
        post
    };
    let args = json!({"arguments": [
        {"speaker": "Mike", "level": initial, "claim": format!("The essay meets the level {initial} descriptor.")},
        {"speaker": "Sarah", "level": initial, "claim": format!("I agree the work sits at level {initial}.")},
    ]});
    let challenge_args = if initial == post {
        json!({"arguments": [
            {"speaker": "student", "level": student_level, "claim": format!("My essay deserves level {student_level}.")},
            {"speaker": "Mike", "level": initial, "claim": "The rebuttal points to nothing the descriptor asks for."},
            {"speaker": "Sarah", "level": initial, "claim": "The passages the student cites were already weighed."},
        ]})
    } else {
        json!({"arguments": [
            {"speaker": "student", "level": post, "claim": format!("My essay deserves level {post}.")},
            {"speaker": "Mike", "level": post, "claim": format!("The student is right; level {post} fits.")},
            {"speaker": "Sarah", "level": post, "claim": format!("I now agree with level {post}.")},
        ]})
    };
    let mut attacks = vec![
        json!({"attacker": "C", "target": "A", "rationale": "The student disputes this level."}),
        json!({"attacker": "C", "target": "B", "rationale": "The student disputes this level."}),
    ];
    if initial == post {
        attacks.push(
            json!({"attacker": "D", "target": "C", "rationale": "The rebuttal is answered."}),
        );
        attacks.push(
            json!({"attacker": "E", "target": "C", "rationale": "The rebuttal is answered."}),
        );
    }
    let step = |phase: &str, who: &str, what: &str| format!("{dim}/{phase}/{who}/{what}");
    vec![
        session(
            ScriptedExchange::tagged(step("initial", "*", "review"), format!("level: {initial}\nThe essay fits this level.")),
            &id,
        ),
        session(ScriptedExchange::tagged(step("initial", "teacher", "arguments"), args.to_string()), &id),
        session(
            ScriptedExchange::tagged(
                step("initial", "teacher", "synthesis"),
                json!({"level": initial, "feedback": format!("Level {initial}: both reviewers agree (A, B).")}).to_string(),
            ),
            &id,
        ),
        session(ScriptedExchange::tagged(step("challenge-1", "teacher", "arguments"), challenge_args.to_string()), &id),
        session(
            ScriptedExchange::tagged(step("challenge-1", "teacher", "attacks"), json!({"attacks": attacks}).to_string()),
            &id,
        ),
        session(
            ScriptedExchange::tagged(
                step("challenge-1", "teacher", "synthesis"),
                json!({"level": post, "feedback": format!("Level {post} after considering the challenge.")}).to_string(),
            ),
            &id,
        ),
    ]
}

fn shared() -> Vec<ScriptedExchange> {
    vec![
        ScriptedExchange::tagged("*/round-*", "I keep my assessment."),
        ScriptedExchange::tagged("*/initial/teacher/attacks", r#"{"attacks": []}"#),
        ScriptedExchange::tagged("*/challenge-1/*/review", "level: 1\nReading it again with the challenge in mind."),
        ScriptedExchange::tagged(
            "*/challenger/rebuttal",
            "I disagree with this feedback. The essay does what the rubric asks, and I believe it deserves a different level.",
        ),
    ]
}

fn run(input: &str, output: &str) -> Result<(), String> {
    let text = std::fs::read_to_string(input).map_err(|e| format!("{input}: {e}"))?;
    let mut exchanges = shared();
    for (i, line) in text.lines().enumerate().skip(1) {
        if line.trim().is_empty() {
            continue;
        }
        let cols: Vec<&str> = line.split(',').map(str::trim).collect();
        let [essay, dim, _truth, initial, post] = cols[..] else {
            return Err(format!("line {}: expected 5 columns", i + 1));
        };
        let level = |s: &str| s.parse::<u32>().map_err(|e| format!("line {}: {e}", i + 1));
        exchanges.extend(trial(essay, dim, level(initial)?, level(post)?));
    }
    let script = Script { exchanges };
    let json = serde_json::to_string_pretty(&script).map_err(|e| e.to_string())?;
    std::fs::write(output, json + "\n").map_err(|e| format!("{output}: {e}"))
}

fn main() -> ExitCode {
    let args: Vec<String> = std::env::args().skip(1).collect();
    let [input, output] = &args[..] else {
        eprintln!("usage: gen_harness_fixture <outcomes.csv> <script.json>");
        return ExitCode::from(2);
    };
    match run(input, output) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::FAILURE
        }
    }
}
