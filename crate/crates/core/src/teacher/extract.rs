//! Structured teacher replies.
//!
//! Arguments:
//!
//! ```json
//! {"arguments": [{"speaker": "Mike", "level": 1, "claim": "..."},
//!                {"speaker": "student", "level": null, "claim": "..."}]}
//! ```
//!
//! Attacks, by argument label (`self_contradiction` is optional):
//!
//! ```json
//! {"attacks": [{"attacker": "A", "target": "B", "rationale": "..."}]}
//! ```
//!
//! Synthesis:
//!
//! ```json
//! {"level": 1, "feedback": "..."}
//! ```
//!
//! A reply that fails validation is re-prompted with the validator's message.

use std::collections::BTreeSet;

use serde::Deserialize;

use super::{Argument, AttackRelation, TeacherConfig, TeacherError};
use crate::af::ArgumentId;
use crate::agents::{AgentContext, Transcript, STUDENT};
use crate::backend::ChatMessage;
use crate::prompts::{ask_structured, extract_json_object, StructuredError, TemplateName};
use crate::rubric::{Level, RubricDimension};

const TEACHER: &str = "teacher";

#[derive(Deserialize)]
struct ArgumentsReply {
    arguments: Vec<ArgumentItem>,
}

#[derive(Deserialize)]
struct ArgumentItem {
    speaker: String,
    #[serde(default)]
    level: Option<Level>,
    claim: String,
}

#[derive(Deserialize)]
struct AttacksReply {
    attacks: Vec<AttackItem>,
}

#[derive(Deserialize)]
struct AttackItem {
    attacker: String,
    target: String,
    #[serde(default)]
    rationale: String,
    #[serde(default)]
    self_contradiction: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Deserialize)]
pub struct Synthesis {
    pub level: Level,
    pub feedback: String,
}

#[derive(Debug, Clone, Default, PartialEq, Eq)]
pub struct AttackExtraction {
    pub attacks: Vec<AttackRelation>,
    pub warnings: Vec<String>,
}

fn parse_as<T: for<'de> Deserialize<'de>>(reply: &str) -> Result<T, String> {
    let value = extract_json_object(reply)?;
    serde_json::from_value(value).map_err(|e| format!("JSON does not match the schema: {e}"))
}

fn structured<T>(
    ctx: &AgentContext<'_>,
    config: &TeacherConfig,
    dimension: &RubricDimension,
    step: &'static str,
    user: String,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<T, TeacherError> {
    let system = ctx.templates.render(
        TemplateName::TeacherSystem,
        &[("rubric_dimension", &dimension.render())],
    )?;
    let request = ctx.request(
        ctx.tag(dimension, TEACHER, step),
        vec![ChatMessage::system(system), ChatMessage::user(user)],
    );
    ask_structured(
        ctx.backend,
        ctx.templates,
        request,
        config.parse_retries,
        parse,
    )
    .map(|(v, _)| v)
    .map_err(|e| match e {
        StructuredError::Backend(source) => TeacherError::Backend { step, source },
        StructuredError::Prompt(p) => TeacherError::Prompt(p),
        StructuredError::Invalid { attempts, message } => TeacherError::MalformedExtraction {
            step,
            attempts,
            message,
        },
    })
}

fn render_arguments<'a>(arguments: impl IntoIterator<Item = &'a Argument>) -> String {
    let lines: Vec<String> = arguments.into_iter().map(Argument::render).collect();
    if lines.is_empty() {
        "(none)".to_string()
    } else {
        lines.join("\n")
    }
}

/// Arguments for every speaker's stance in `transcript`. Ids continue after
/// the largest id in `existing`, in reply order.
pub fn extract_arguments(
    ctx: &AgentContext<'_>,
    config: &TeacherConfig,
    transcript: &Transcript,
    dimension: &RubricDimension,
    existing: &[Argument],
) -> Result<Vec<Argument>, TeacherError> {
    if transcript.is_empty() {
        return Err(TeacherError::EmptyTranscript);
    }
    let speakers = transcript.speakers();
    let user = ctx.templates.render(
        TemplateName::TeacherArguments,
        &[
            ("transcript", &transcript.render()),
            ("existing_arguments", &render_arguments(existing)),
            ("speakers", &speakers.join(", ")),
        ],
    )?;
    let first_id = existing.iter().map(|a| a.id.get()).max().unwrap_or(0) + 1;
    let parse = |reply: &str| -> Result<Vec<Argument>, String> {
        let parsed: ArgumentsReply = parse_as(reply)?;
        if parsed.arguments.is_empty() {
            return Err("`arguments` is empty".into());
        }
        let mut out = Vec::with_capacity(parsed.arguments.len());
        let mut covered = BTreeSet::new();
        for (i, item) in parsed.arguments.into_iter().enumerate() {
            let speaker = speakers
                .iter()
                .find(|s| s.eq_ignore_ascii_case(item.speaker.trim()))
                .ok_or_else(|| {
                    format!(
                        "argument {}: unknown speaker `{}` (speakers: {})",
                        i + 1,
                        item.speaker,
                        speakers.join(", ")
                    )
                })?;
            if item.claim.trim().is_empty() {
                return Err(format!("argument {}: empty claim", i + 1));
            }
            match item.level {
                Some(l) if !dimension.has_level(l) => {
                    return Err(format!(
                        "argument {}: level {l} is not valid (use 0..={})",
                        i + 1,
                        dimension.max_level()
                    ))
                }
                None if speaker != STUDENT => {
                    return Err(format!(
                        "argument {}: {} must state a level",
                        i + 1,
                        speaker
                    ))
                }
                _ => {}
            }
            covered.insert(speaker.clone());
            out.push(Argument {
                id: ArgumentId::new(first_id + i as u32),
                author: speaker.clone(),
                dimension_key: dimension.key.clone(),
                proposed_level: item.level,
                text: item.claim.trim().to_string(),
                phase: ctx.phase,
            });
        }
        let missing: Vec<&str> = speakers
            .iter()
            .filter(|s| !covered.contains(*s))
            .map(String::as_str)
            .collect();
        if !missing.is_empty() {
            return Err(format!("no argument for: {}", missing.join(", ")));
        }
        Ok(out)
    };
    structured(ctx, config, dimension, "arguments", user, parse)
}

/// Attacks among `arguments`, asked for in one batch. Fewer than two
/// arguments means no call and no attacks.
pub fn extract_attacks(
    ctx: &AgentContext<'_>,
    config: &TeacherConfig,
    arguments: &[Argument],
    dimension: &RubricDimension,
) -> Result<AttackExtraction, TeacherError> {
    if arguments.len() < 2 {
        return Ok(AttackExtraction::default());
    }
    let user = ctx.templates.render(
        TemplateName::TeacherAttacks,
        &[("arguments", &render_arguments(arguments))],
    )?;
    let known: BTreeSet<ArgumentId> = arguments.iter().map(|a| a.id).collect();
    let strict = config.strict_attacks;
    let parse = |reply: &str| -> Result<Result<AttackExtraction, TeacherError>, String> {
        let parsed: AttacksReply = parse_as(reply)?;
        let mut out = AttackExtraction::default();
        let mut seen = BTreeSet::new();
        for (i, item) in parsed.attacks.into_iter().enumerate() {
            let resolve = |label: &str| {
                ArgumentId::from_label(&label.trim().to_ascii_uppercase())
                    .filter(|id| known.contains(id))
            };
            let (attacker, target) = match (resolve(&item.attacker), resolve(&item.target)) {
                (Some(a), Some(t)) => (a, t),
                (a, _) => {
                    let bad = if a.is_none() {
                        &item.attacker
                    } else {
                        &item.target
                    };
                    if strict {
                        return Ok(Err(TeacherError::UnknownArgument(bad.clone())));
                    }
                    out.warnings.push(format!(
                        "dropped attack {} -> {}: unknown argument `{bad}`",
                        item.attacker, item.target
                    ));
                    continue;
                }
            };
            if attacker == target && !item.self_contradiction {
                if strict {
                    return Ok(Err(TeacherError::SelfAttack(attacker.label())));
                }
                out.warnings.push(format!(
                    "dropped self-attack on {} not flagged as self-contradiction",
                    attacker.label()
                ));
                continue;
            }
            if item.rationale.trim().is_empty() {
                return Err(format!("attack {}: empty rationale", i + 1));
            }
            if seen.insert((attacker, target)) {
                out.attacks.push(AttackRelation {
                    attacker,
                    target,
                    rationale: item.rationale.trim().to_string(),
                    self_contradiction: attacker == target,
                });
            }
        }
        out.attacks.sort_by_key(|a| (a.attacker, a.target));
        Ok(Ok(out))
    };
    structured(ctx, config, dimension, "attacks", user, parse)?
}

/// Grade and feedback written from the accepted arguments only.
pub fn synthesize(
    ctx: &AgentContext<'_>,
    config: &TeacherConfig,
    dimension: &RubricDimension,
    accepted: &[&Argument],
) -> Result<Synthesis, TeacherError> {
    let accepted_text = if accepted.is_empty() {
        "(none: the discussion produced no consistent set of arguments)".to_string()
    } else {
        render_arguments(accepted.iter().copied())
    };
    let user = ctx.templates.render(
        TemplateName::TeacherSynthesis,
        &[("accepted_arguments", &accepted_text)],
    )?;
    let parse = |reply: &str| -> Result<Synthesis, String> {
        let s: Synthesis = parse_as(reply)?;
        if !dimension.has_level(s.level) {
            return Err(format!(
                "level {} is not valid (use 0..={})",
                s.level,
                dimension.max_level()
            ));
        }
        if s.feedback.trim().is_empty() {
            return Err("`feedback` is empty".into());
        }
        Ok(Synthesis {
            level: s.level,
            feedback: s.feedback.trim().to_string(),
        })
    };
    structured(ctx, config, dimension, "synthesis", user, parse)
}
