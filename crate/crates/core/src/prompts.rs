//! Prompt templates and the parse-and-repair loop for structured replies.
//!
//! Templates are UTF-8 text files with `{{name}}` placeholders. The shipped
//! set is compiled in; a template directory can override any subset of it
//! by file name (`ta_review.txt`, `teacher_attacks.txt`, ...).

use std::collections::BTreeMap;
use std::path::Path;
use std::sync::OnceLock;

use regex::Regex;
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest};

/// Re-prompts after a reply fails validation, before giving up.
pub const DEFAULT_PARSE_RETRIES: u32 = 2;

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash)]
pub enum TemplateName {
    TaSystem,
    TaReview,
    TaRound,
    StudentChallenge,
    TeacherSystem,
    TeacherArguments,
    TeacherAttacks,
    TeacherSynthesis,
    ChallengerSystem,
    Challenger,
    Repair,
}

impl TemplateName {
    pub const ALL: [TemplateName; 11] = [
        TemplateName::TaSystem,
        TemplateName::TaReview,
        TemplateName::TaRound,
        TemplateName::StudentChallenge,
        TemplateName::TeacherSystem,
        TemplateName::TeacherArguments,
        TemplateName::TeacherAttacks,
        TemplateName::TeacherSynthesis,
        TemplateName::ChallengerSystem,
        TemplateName::Challenger,
        TemplateName::Repair,
    ];

    pub fn file_name(self) -> &'static str {
        match self {
            TemplateName::TaSystem => "ta_system.txt",
            TemplateName::TaReview => "ta_review.txt",
            TemplateName::TaRound => "ta_round.txt",
            TemplateName::StudentChallenge => "student_challenge.txt",
            TemplateName::TeacherSystem => "teacher_system.txt",
            TemplateName::TeacherArguments => "teacher_arguments.txt",
            TemplateName::TeacherAttacks => "teacher_attacks.txt",
            TemplateName::TeacherSynthesis => "teacher_synthesis.txt",
            TemplateName::ChallengerSystem => "challenger_system.txt",
            TemplateName::Challenger => "challenger.txt",
            TemplateName::Repair => "repair.txt",
        }
    }

    fn builtin(self) -> &'static str {
        match self {
            TemplateName::TaSystem => include_str!("../templates/ta_system.txt"),
            TemplateName::TaReview => include_str!("../templates/ta_review.txt"),
            TemplateName::TaRound => include_str!("../templates/ta_round.txt"),
            TemplateName::StudentChallenge => include_str!("../templates/student_challenge.txt"),
            TemplateName::TeacherSystem => include_str!("../templates/teacher_system.txt"),
            TemplateName::TeacherArguments => include_str!("../templates/teacher_arguments.txt"),
            TemplateName::TeacherAttacks => include_str!("../templates/teacher_attacks.txt"),
            TemplateName::TeacherSynthesis => include_str!("../templates/teacher_synthesis.txt"),
            TemplateName::ChallengerSystem => include_str!("../templates/challenger_system.txt"),
            TemplateName::Challenger => include_str!("../templates/challenger.txt"),
            TemplateName::Repair => include_str!("../templates/repair.txt"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum PromptError {
    #[error("template {template}: no value for placeholder {{{{{name}}}}}")]
    MissingValue {
        template: &'static str,
        name: String,
    },
    #[error("cannot read template {path}: {message}")]
    Io { path: String, message: String },
}

fn placeholder_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"\{\{\s*([A-Za-z_][A-Za-z0-9_]*)\s*\}\}").unwrap())
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct Templates {
    texts: BTreeMap<TemplateName, String>,
}

impl Default for Templates {
    fn default() -> Self {
        Self::builtin()
    }
}

impl Templates {
    pub fn builtin() -> Self {
        Self {
            texts: TemplateName::ALL
                .iter()
                .map(|&n| (n, n.builtin().to_string()))
                .collect(),
        }
    }

    /// Built-in templates, overridden by any same-named files in `dir`.
    pub fn load_dir(dir: &Path) -> Result<Self, PromptError> {
        if !dir.is_dir() {
            return Err(PromptError::Io {
                path: dir.display().to_string(),
                message: "not a directory".into(),
            });
        }
        let mut templates = Self::builtin();
        for name in TemplateName::ALL {
            let path = dir.join(name.file_name());
            if path.is_file() {
                let text = std::fs::read_to_string(&path).map_err(|e| PromptError::Io {
                    path: path.display().to_string(),
                    message: e.to_string(),
                })?;
                templates.texts.insert(name, text);
            }
        }
        Ok(templates)
    }

    pub fn set(&mut self, name: TemplateName, text: impl Into<String>) {
        self.texts.insert(name, text.into());
    }

    pub fn text(&self, name: TemplateName) -> &str {
        &self.texts[&name]
    }

    /// Substitutes every placeholder. A placeholder without a value is an
    /// error; values a template does not mention are ignored.
    pub fn render(
        &self,
        name: TemplateName,
        values: &[(&str, &str)],
    ) -> Result<String, PromptError> {
        let template = self.text(name);
        let lookup: BTreeMap<&str, &str> = values.iter().copied().collect();
        let mut missing = None;
        let out = placeholder_re().replace_all(template, |caps: &regex::Captures<'_>| {
            let key = caps.get(1).unwrap().as_str();
            match lookup.get(key) {
                Some(v) => (*v).to_string(),
                None => {
                    missing.get_or_insert_with(|| key.to_string());
                    String::new()
                }
            }
        });
        if let Some(name_) = missing {
            return Err(PromptError::MissingValue {
                template: name.file_name(),
                name: name_,
            });
        }
        Ok(out.into_owned())
    }
}

/// Failure of [`ask_structured`].
#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum StructuredError {
    #[error(transparent)]
    Backend(#[from] BackendError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("reply still invalid after {attempts} attempt(s): {message}")]
    Invalid { attempts: u32, message: String },
}

/// Sends `request`, parses the reply, and on a validation failure re-asks
/// with the validator's message appended, up to `retries` more times.
/// Each re-ask bumps `request.attempt`. Returns the parsed value and the
/// raw reply that produced it.
pub fn ask_structured<T>(
    backend: &dyn ChatBackend,
    templates: &Templates,
    mut request: ChatRequest,
    retries: u32,
    parse: impl Fn(&str) -> Result<T, String>,
) -> Result<(T, String), StructuredError> {
    loop {
        let reply = backend.complete(&request)?;
        match parse(&reply) {
            Ok(value) => return Ok((value, reply)),
            Err(message) if request.attempt < retries => {
                tracing::debug!(tag = %request.tag, attempt = request.attempt, %message, "re-prompting");
                let repair = templates.render(TemplateName::Repair, &[("error", &message)])?;
                request
                    .messages
                    .push(ChatMessage::assistant(if reply.trim().is_empty() {
                        "(empty reply)".to_string()
                    } else {
                        reply
                    }));
                request.messages.push(ChatMessage::user(repair));
                request.attempt += 1;
            }
            Err(message) => {
                return Err(StructuredError::Invalid {
                    attempts: request.attempt + 1,
                    message,
                })
            }
        }
    }
}

/// Pulls a JSON object out of a reply that may wrap it in prose or a code
/// fence.
pub fn extract_json_object(reply: &str) -> Result<serde_json::Value, String> {
    let start = reply.find('{').ok_or("reply contains no JSON object")?;
    let end = reply.rfind('}').ok_or("reply contains no JSON object")?;
    if end < start {
        return Err("reply contains no JSON object".into());
    }
    let value: serde_json::Value =
        serde_json::from_str(&reply[start..=end]).map_err(|e| format!("invalid JSON: {e}"))?;
    if !value.is_object() {
        return Err("expected a JSON object".into());
    }
    Ok(value)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, ScriptedExchange};

    #[test]
    fn builtin_placeholders_are_all_known() {
        let t = Templates::builtin();
        let known = [
            "essay",
            "rubric_dimension",
            "transcript",
            "bias",
            "student_challenge",
            "persona",
            "round",
            "speakers",
            "existing_arguments",
            "arguments",
            "accepted_arguments",
            "grade",
            "feedback",
            "error",
        ];
        for name in TemplateName::ALL {
            for caps in placeholder_re().captures_iter(t.text(name)) {
                assert!(
                    known.contains(&&caps[1]),
                    "{}: {}",
                    name.file_name(),
                    &caps[1]
                );
            }
        }
    }

    #[test]
    fn render_substitutes_and_rejects_missing() {
        let mut t = Templates::builtin();
        t.set(TemplateName::Repair, "bad: {{error}} / {{ error }}");
        assert_eq!(
            t.render(TemplateName::Repair, &[("error", "x")]).unwrap(),
            "bad: x / x"
        );
        assert!(matches!(
            t.render(TemplateName::Repair, &[]),
            Err(PromptError::MissingValue { .. })
        ));
    }

    #[test]
    fn values_are_not_rescanned() {
        let mut t = Templates::builtin();
        t.set(TemplateName::Repair, "{{error}}");
        assert_eq!(
            t.render(TemplateName::Repair, &[("error", "{{essay}}")])
                .unwrap(),
            "{{essay}}"
        );
    }

    #[test]
    fn directory_overrides_single_file() {
        let dir = tempfile::tempdir().unwrap();
        std::fs::write(dir.path().join("repair.txt"), "nope: {{error}}").unwrap();
        let t = Templates::load_dir(dir.path()).unwrap();
        assert_eq!(t.text(TemplateName::Repair), "nope: {{error}}");
        assert_eq!(
            t.text(TemplateName::TaReview),
            Templates::builtin().text(TemplateName::TaReview)
        );
        assert!(Templates::load_dir(&dir.path().join("missing")).is_err());
    }

    #[test]
    fn json_inside_fence() {
        let v = extract_json_object("Sure:\n```json\n{\"a\": 1}\n```").unwrap();
        assert_eq!(v["a"], 1);
        assert!(extract_json_object("no json").is_err());
        assert!(extract_json_object("} {").is_err());
    }

    fn parse_num(s: &str) -> Result<u32, String> {
        s.trim()
            .parse()
            .map_err(|_| format!("`{s}` is not a number"))
    }

    #[test]
    fn repair_loop_reprompts_with_error() {
        let backend = ScriptedBackend::new(vec![
            ScriptedExchange::tagged("q", "abc").on_attempt(0),
            ScriptedExchange::tagged("q", "42").on_attempt(1),
        ]);
        let req = ChatRequest::new("q", vec![ChatMessage::user("number?")]);
        let (n, raw) = ask_structured(&backend, &Templates::builtin(), req, 2, parse_num).unwrap();
        assert_eq!((n, raw.as_str()), (42, "42"));
        let seen = backend.received();
        assert_eq!(seen.len(), 2);
        assert_eq!(seen[1].messages.len(), 3);
        assert!(seen[1].messages[2]
            .content
            .contains("`abc` is not a number"));
    }

    #[test]
    fn repair_loop_gives_up() {
        let backend = ScriptedBackend::new(vec![ScriptedExchange::tagged("q", "abc")]);
        let req = ChatRequest::new("q", vec![ChatMessage::user("number?")]);
        let err = ask_structured(&backend, &Templates::builtin(), req, 2, parse_num).unwrap_err();
        assert!(matches!(err, StructuredError::Invalid { attempts: 3, .. }));
        assert_eq!(backend.received().len(), 3);
    }
}
