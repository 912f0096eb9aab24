//! Teaching-assistant personas and the fixed-round discussion protocol.
//!
//! Each rubric dimension gets its own discussion. Every persona first writes
//! an independent review (round 0); then, for each round, every persona in
//! declaration order answers with the whole transcript so far in its prompt.
//! A student challenge is inserted as a round-0 entry after the reviews.

use std::collections::HashSet;
use std::fmt;
use std::str::FromStr;
use std::sync::OnceLock;

use regex::Regex;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::backend::{BackendError, ChatBackend, ChatMessage, ChatRequest};
use crate::prompts::{ask_structured, PromptError, StructuredError, TemplateName, Templates};
use crate::rubric::{Level, RubricDimension};

/// Speaker name reserved for the student.
pub const STUDENT: &str = "student";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Bias {
    Positive,
    Negative,
    Neutral,
}

impl Bias {
    pub fn instruction(self) -> &'static str {
        match self {
            Bias::Positive => "You lean toward recognising the strengths of the essay and giving the student the benefit of the doubt.",
            Bias::Negative => "You lean toward scrutinising the weaknesses of the essay and holding it to the strictest reading of the rubric.",
            Bias::Neutral => "You weigh the strengths and weaknesses of the essay evenly.",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AgentPersona {
    pub name: String,
    pub bias: Bias,
}

impl AgentPersona {
    pub fn new(name: impl Into<String>, bias: Bias) -> Self {
        Self {
            name: name.into(),
            bias,
        }
    }

    pub fn system_prompt(
        &self,
        templates: &Templates,
        dimension: &RubricDimension,
    ) -> Result<String, PromptError> {
        templates.render(
            TemplateName::TaSystem,
            &[
                ("persona", &self.name),
                ("bias", self.bias.instruction()),
                ("rubric_dimension", &dimension.render()),
            ],
        )
    }
}

/// `Mike` (negative) and `Sarah` (positive), then neutral `Agent3`, `Agent4`, ...
pub fn default_personas(n: usize) -> Vec<AgentPersona> {
    (0..n)
        .map(|i| match i {
            0 => AgentPersona::new("Mike", Bias::Negative),
            1 => AgentPersona::new("Sarah", Bias::Positive),
            _ => AgentPersona::new(format!("Agent{}", i + 1), Bias::Neutral),
        })
        .collect()
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct DiscussionConfig {
    #[serde(default = "default_agents")]
    pub num_agents: usize,
    #[serde(default = "default_rounds")]
    pub num_rounds: u32,
}

fn default_agents() -> usize {
    2
}

fn default_rounds() -> u32 {
    2
}

impl Default for DiscussionConfig {
    fn default() -> Self {
        Self {
            num_agents: default_agents(),
            num_rounds: default_rounds(),
        }
    }
}

impl DiscussionConfig {
    pub fn validate(&self) -> Result<(), AgentError> {
        if self.num_agents < 2 {
            return Err(AgentError::InvalidConfig(format!(
                "num_agents must be at least 2 (got {})",
                self.num_agents
            )));
        }
        if self.num_rounds < 1 {
            return Err(AgentError::InvalidConfig(
                "num_rounds must be at least 1".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct TranscriptEntry {
    pub speaker: String,
    pub round: u32,
    pub text: String,
}

impl TranscriptEntry {
    pub fn new(speaker: impl Into<String>, round: u32, text: impl Into<String>) -> Self {
        Self {
            speaker: speaker.into(),
            round,
            text: text.into(),
        }
    }
}

/// Append-only discussion record with non-decreasing rounds.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(try_from = "Vec<TranscriptEntry>", into = "Vec<TranscriptEntry>")]
pub struct Transcript {
    entries: Vec<TranscriptEntry>,
}

impl TryFrom<Vec<TranscriptEntry>> for Transcript {
    type Error = AgentError;

    fn try_from(entries: Vec<TranscriptEntry>) -> Result<Self, AgentError> {
        let mut t = Transcript::new();
        for e in entries {
            t.push(e)?;
        }
        Ok(t)
    }
}

impl From<Transcript> for Vec<TranscriptEntry> {
    fn from(t: Transcript) -> Self {
        t.entries
    }
}

impl Transcript {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, entry: TranscriptEntry) -> Result<(), AgentError> {
        if let Some(last) = self.entries.last() {
            if entry.round < last.round {
                return Err(AgentError::Transcript(format!(
                    "round {} entry after round {}",
                    entry.round, last.round
                )));
            }
        }
        if entry.speaker.trim().is_empty() {
            return Err(AgentError::Transcript("entry has no speaker".into()));
        }
        self.entries.push(entry);
        Ok(())
    }

    pub fn entries(&self) -> &[TranscriptEntry] {
        &self.entries
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn last_round(&self) -> Option<u32> {
        self.entries.last().map(|e| e.round)
    }

    /// Speakers in order of first appearance.
    pub fn speakers(&self) -> Vec<String> {
        let mut seen = HashSet::new();
        self.entries
            .iter()
            .filter(|e| seen.insert(e.speaker.as_str()))
            .map(|e| e.speaker.clone())
            .collect()
    }

    pub fn has_speaker(&self, name: &str) -> bool {
        self.entries.iter().any(|e| e.speaker == name)
    }

    /// The text every participant sees. Nothing is elided.
    pub fn render(&self) -> String {
        let mut out = String::new();
        for e in &self.entries {
            out.push_str(&format!(
                "{} (round {}):\n{}\n\n",
                e.speaker,
                e.round,
                e.text.trim_end()
            ));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Review {
    pub agent: String,
    pub dimension_key: String,
    pub proposed_level: Level,
    pub justification: String,
}

impl Review {
    pub fn entry(&self) -> TranscriptEntry {
        TranscriptEntry::new(&self.agent, 0, &self.justification)
    }
}

fn level_re() -> &'static Regex {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"(?i)\blevel\s*[:=]?\s*(-?\d+)").unwrap())
}

/// First `level: n` in a reply, checked against the dimension.
pub fn parse_review_level(text: &str, dimension: &RubricDimension) -> Result<Level, String> {
    let caps = level_re().captures(text).ok_or_else(|| {
        format!(
            "no `level: <n>` found; use one of 0..={}",
            dimension.max_level()
        )
    })?;
    let raw = &caps[1];
    match raw.parse::<Level>() {
        Ok(l) if dimension.has_level(l) => Ok(l),
        _ => Err(format!(
            "level {raw} is not valid for `{}`; use one of 0..={}",
            dimension.key,
            dimension.max_level()
        )),
    }
}

/// Whether a discussion grades from scratch or answers the k-th challenge.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(into = "String", try_from = "String")]
pub enum Phase {
    Initial,
    Challenge(u32),
}

impl fmt::Display for Phase {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Phase::Initial => f.write_str("initial"),
            Phase::Challenge(k) => write!(f, "challenge-{k}"),
        }
    }
}

impl FromStr for Phase {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, String> {
        if s == "initial" {
            return Ok(Phase::Initial);
        }
        s.strip_prefix("challenge-")
            .and_then(|k| k.parse().ok())
            .filter(|&k| k >= 1)
            .map(Phase::Challenge)
            .ok_or_else(|| format!("invalid phase `{s}`"))
    }
}

impl From<Phase> for String {
    fn from(p: Phase) -> Self {
        p.to_string()
    }
}

impl TryFrom<String> for Phase {
    type Error = String;

    fn try_from(s: String) -> Result<Self, String> {
        s.parse()
    }
}

/// What every agent call needs besides its own inputs.
#[derive(Clone, Copy)]
pub struct AgentContext<'a> {
    pub backend: &'a dyn ChatBackend,
    pub templates: &'a Templates,
    pub session: Option<&'a str>,
    pub phase: Phase,
    pub parse_retries: u32,
}

impl<'a> AgentContext<'a> {
    pub fn new(backend: &'a dyn ChatBackend, templates: &'a Templates) -> Self {
        Self {
            backend,
            templates,
            session: None,
            phase: Phase::Initial,
            parse_retries: crate::prompts::DEFAULT_PARSE_RETRIES,
        }
    }

    pub fn in_session(mut self, session: Option<&'a str>) -> Self {
        self.session = session;
        self
    }

    pub fn in_phase(mut self, phase: Phase) -> Self {
        self.phase = phase;
        self
    }

    /// `{dimension}/{phase}/{speaker}/{step}`, the routing key for scripts.
    pub fn tag(&self, dimension: &RubricDimension, speaker: &str, step: &str) -> String {
        format!("{}/{}/{}/{}", dimension.key, self.phase, speaker, step)
    }

    pub(crate) fn request(&self, tag: String, messages: Vec<ChatMessage>) -> ChatRequest {
        ChatRequest::new(tag, messages).with_session(self.session)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AgentError {
    #[error("invalid discussion config: {0}")]
    InvalidConfig(String),
    #[error("essay is empty")]
    EmptyEssay,
    #[error("{persona}, round {round}: {source}")]
    Backend {
        persona: String,
        round: u32,
        #[source]
        source: BackendError,
    },
    #[error("{persona}: malformed review after {attempts} attempt(s): {message}")]
    MalformedReview {
        persona: String,
        attempts: u32,
        message: String,
    },
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error("transcript: {0}")]
    Transcript(String),
}

impl AgentError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            AgentError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

fn validate_personas(personas: &[AgentPersona]) -> Result<(), AgentError> {
    let mut seen = HashSet::new();
    for p in personas {
        let name = p.name.trim();
        if name.is_empty() || name != p.name || name.contains('/') {
            return Err(AgentError::InvalidConfig(format!(
                "invalid persona name `{}`",
                p.name
            )));
        }
        if name.eq_ignore_ascii_case(STUDENT) {
            return Err(AgentError::InvalidConfig(format!(
                "persona name `{STUDENT}` is reserved"
            )));
        }
        if !seen.insert(name) {
            return Err(AgentError::InvalidConfig(format!(
                "duplicate persona `{name}`"
            )));
        }
    }
    Ok(())
}

/// One persona's independent assessment. Replies without a valid
/// `level: n` are re-prompted per the structured-reply policy.
pub fn initial_review(
    ctx: &AgentContext<'_>,
    persona: &AgentPersona,
    essay: &str,
    dimension: &RubricDimension,
) -> Result<Review, AgentError> {
    if essay.trim().is_empty() {
        return Err(AgentError::EmptyEssay);
    }
    let system = persona.system_prompt(ctx.templates, dimension)?;
    let user = ctx
        .templates
        .render(TemplateName::TaReview, &[("essay", essay)])?;
    let request = ctx.request(
        ctx.tag(dimension, &persona.name, "review"),
        vec![ChatMessage::system(system), ChatMessage::user(user)],
    );
    let (level, text) = ask_structured(
        ctx.backend,
        ctx.templates,
        request,
        ctx.parse_retries,
        |r| parse_review_level(r, dimension),
    )
    .map_err(|e| match e {
        StructuredError::Backend(source) => AgentError::Backend {
            persona: persona.name.clone(),
            round: 0,
            source,
        },
        StructuredError::Prompt(p) => AgentError::Prompt(p),
        StructuredError::Invalid { attempts, message } => AgentError::MalformedReview {
            persona: persona.name.clone(),
            attempts,
            message,
        },
    })?;
    Ok(Review {
        agent: persona.name.clone(),
        dimension_key: dimension.key.clone(),
        proposed_level: level,
        justification: text,
    })
}

/// One more round: each persona, in order, answers with the full transcript
/// (including entries added earlier in this same round).
pub fn discussion_round(
    ctx: &AgentContext<'_>,
    personas: &[AgentPersona],
    transcript: &Transcript,
    essay: &str,
    dimension: &RubricDimension,
    student_text: Option<&str>,
) -> Result<Transcript, AgentError> {
    validate_personas(personas)?;
    if let Some(missing) = personas.iter().find(|p| !transcript.has_speaker(&p.name)) {
        return Err(AgentError::Transcript(format!(
            "{} has not spoken yet; run the initial reviews first",
            missing.name
        )));
    }
    let round = transcript.last_round().unwrap_or(0) + 1;
    let challenge_block = match student_text {
        Some(text) => ctx.templates.render(
            TemplateName::StudentChallenge,
            &[("student_challenge", text)],
        )?,
        None => String::new(),
    };
    let mut next = transcript.clone();
    for persona in personas {
        let system = persona.system_prompt(ctx.templates, dimension)?;
        let user = ctx.templates.render(
            TemplateName::TaRound,
            &[
                ("essay", essay),
                ("transcript", &next.render()),
                ("student_challenge", &challenge_block),
                ("round", &round.to_string()),
            ],
        )?;
        let request = ctx.request(
            ctx.tag(dimension, &persona.name, &format!("round-{round}")),
            vec![ChatMessage::system(system), ChatMessage::user(user)],
        );
        let text = ctx
            .backend
            .complete(&request)
            .map_err(|source| AgentError::Backend {
                persona: persona.name.clone(),
                round,
                source,
            })?;
        next.push(TranscriptEntry::new(&persona.name, round, text))?;
    }
    Ok(next)
}

/// Initial reviews, the optional student entry, then `num_rounds` rounds.
pub fn run_discussion(
    ctx: &AgentContext<'_>,
    essay: &str,
    dimension: &RubricDimension,
    config: &DiscussionConfig,
    personas: &[AgentPersona],
    seed_student_text: Option<&str>,
) -> Result<Transcript, AgentError> {
    config.validate()?;
    validate_personas(personas)?;
    if personas.len() != config.num_agents {
        return Err(AgentError::InvalidConfig(format!(
            "{} personas supplied for num_agents = {}",
            personas.len(),
            config.num_agents
        )));
    }
    if seed_student_text.is_some_and(|t| t.trim().is_empty()) {
        return Err(AgentError::InvalidConfig("student text is empty".into()));
    }
    let mut transcript = Transcript::new();
    for persona in personas {
        let review = initial_review(ctx, persona, essay, dimension)?;
        transcript.push(review.entry())?;
    }
    if let Some(text) = seed_student_text {
        transcript.push(TranscriptEntry::new(STUDENT, 0, text))?;
    }
    for _ in 0..config.num_rounds {
        transcript = discussion_round(
            ctx,
            personas,
            &transcript,
            essay,
            dimension,
            seed_student_text,
        )?;
    }
    Ok(transcript)
}

/// Levels proposed in the round-0 agent entries, in transcript order.
/// Entries without a parseable level are skipped.
pub fn initial_levels(transcript: &Transcript, dimension: &RubricDimension) -> Vec<Level> {
    transcript
        .entries()
        .iter()
        .filter(|e| e.round == 0 && e.speaker != STUDENT)
        .filter_map(|e| parse_review_level(&e.text, dimension).ok())
        .collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::backend::{ScriptedBackend, ScriptedExchange};
    use crate::rubric::default_rubric;

    fn issue() -> RubricDimension {
        default_rubric().remove(0)
    }

    fn chatter() -> ScriptedBackend {
        ScriptedBackend::new(vec![
            ScriptedExchange::tagged(
                "issue/*/Mike/review",
                "level: 1 issue identified but lacks clarity",
            ),
            ScriptedExchange::tagged(
                "issue/*/Sarah/review",
                "Level 2. The issue is well articulated.",
            ),
            ScriptedExchange::tagged("issue/*/Agent3/review", "level=0 barely mentioned"),
            ScriptedExchange::tagged("issue/*/round-*", "I have read the discussion. level: 1"),
        ])
    }

    #[test]
    fn default_personas_oppose() {
        let p = default_personas(2);
        assert_eq!(p[0], AgentPersona::new("Mike", Bias::Negative));
        assert_eq!(p[1], AgentPersona::new("Sarah", Bias::Positive));
        assert_eq!(default_personas(3)[2].bias, Bias::Neutral);
        let t = Templates::builtin();
        let prompt = p[0].system_prompt(&t, &issue()).unwrap();
        assert!(prompt.contains("Mike") && prompt.contains(Bias::Negative.instruction()));
        assert!(prompt.contains("Level 2:"));
    }

    #[test]
    fn level_parsing() {
        let d = issue();
        assert_eq!(parse_review_level("level: 1 (issue identified)", &d), Ok(1));
        assert_eq!(parse_review_level("I'd say LEVEL=2", &d), Ok(2));
        assert_eq!(parse_review_level("Level 0.", &d), Ok(0));
        assert!(parse_review_level("level: 7", &d).is_err());
        assert!(parse_review_level("level: -1", &d).is_err());
        assert!(parse_review_level("a solid two", &d).is_err());
        assert!(parse_review_level("multilevel 2", &d).is_err());
    }

    #[test]
    fn review_from_script() {
        let backend = chatter();
        let t = Templates::builtin();
        let ctx = AgentContext::new(&backend, &t);
        let r = initial_review(&ctx, &default_personas(1)[0], "An essay.", &issue()).unwrap();
        assert_eq!(r.proposed_level, 1);
        assert_eq!(
            r.justification,
            "level: 1 issue identified but lacks clarity"
        );
        assert!(matches!(
            initial_review(&ctx, &default_personas(1)[0], "  ", &issue()),
            Err(AgentError::EmptyEssay)
        ));
    }

    #[test]
    fn invalid_level_is_malformed_after_retries() {
        let backend = ScriptedBackend::new(vec![ScriptedExchange::tagged("*", "level: 7")]);
        let t = Templates::builtin();
        let ctx = AgentContext::new(&backend, &t);
        let err = initial_review(&ctx, &default_personas(1)[0], "essay", &issue()).unwrap_err();
        assert!(
            matches!(err, AgentError::MalformedReview { attempts: 3, .. }),
            "{err:?}"
        );
        let attempts: Vec<u32> = backend.received().iter().map(|r| r.attempt).collect();
        assert_eq!(attempts, [0, 1, 2]);
    }

    #[test]
    fn transcript_length_and_order() {
        let backend = chatter();
        let t = Templates::builtin();
        let ctx = AgentContext::new(&backend, &t);
        let cfg = DiscussionConfig::default();
        let tr = run_discussion(&ctx, "essay", &issue(), &cfg, &default_personas(2), None).unwrap();
        assert_eq!(tr.len(), 6);
        let order: Vec<(&str, u32)> = tr
            .entries()
            .iter()
            .map(|e| (e.speaker.as_str(), e.round))
            .collect();
        assert_eq!(
            order,
            [
                ("Mike", 0),
                ("Sarah", 0),
                ("Mike", 1),
                ("Sarah", 1),
                ("Mike", 2),
                ("Sarah", 2)
            ]
        );

        let cfg3 = DiscussionConfig {
            num_agents: 3,
            num_rounds: 1,
        };
        let tr = run_discussion(
            &ctx,
            "essay",
            &issue(),
            &cfg3,
            &default_personas(3),
            Some("I disagree."),
        )
        .unwrap();
        assert_eq!(tr.len(), 3 * 2 + 1);
        assert_eq!(
            tr.entries()[3],
            TranscriptEntry::new(STUDENT, 0, "I disagree.")
        );
        assert_eq!(initial_levels(&tr, &issue()), [1, 2, 0]);
    }

    #[test]
    fn every_prompt_carries_the_whole_transcript() {
        let backend = chatter();
        let t = Templates::builtin();
        let ctx = AgentContext::new(&backend, &t).in_session(Some("s1"));
        let tr = run_discussion(
            &ctx,
            "essay",
            &issue(),
            &DiscussionConfig::default(),
            &default_personas(2),
            Some("My issue is clear."),
        )
        .unwrap();
        let requests = backend.received();
        assert!(requests.iter().all(|r| r.session.as_deref() == Some("s1")));
        let rounds: Vec<_> = requests
            .iter()
            .filter(|r| r.tag.contains("/round-"))
            .collect();
        assert_eq!(rounds.len(), 4);
        for (k, req) in rounds.iter().enumerate() {
            // Request k sees the 3 seed entries plus the k replies before it.
            let prompt = req.text();
            for e in &tr.entries()[..3 + k] {
                assert!(prompt.contains(&format!("{} (round {}):\n{}", e.speaker, e.round, e.text)));
            }
            assert!(prompt.contains("The student has challenged"));
        }
    }

    #[test]
    fn config_and_persona_checks() {
        let backend = chatter();
        let t = Templates::builtin();
        let ctx = AgentContext::new(&backend, &t);
        let bad = DiscussionConfig {
            num_agents: 1,
            num_rounds: 2,
        };
        assert!(run_discussion(&ctx, "e", &issue(), &bad, &default_personas(1), None).is_err());
        let personas = vec![
            AgentPersona::new("Mike", Bias::Negative),
            AgentPersona::new("student", Bias::Positive),
        ];
        assert!(run_discussion(
            &ctx,
            "e",
            &issue(),
            &DiscussionConfig::default(),
            &personas,
            None
        )
        .is_err());
        assert!(discussion_round(
            &ctx,
            &default_personas(2),
            &Transcript::new(),
            "e",
            &issue(),
            None
        )
        .is_err());
    }

    #[test]
    fn backend_errors_carry_persona_and_round() {
        let backend = ScriptedBackend::new(vec![ScriptedExchange::tagged("*/review", "level: 1")]);
        let t = Templates::builtin();
        let ctx = AgentContext::new(&backend, &t);
        let err = run_discussion(
            &ctx,
            "e",
            &issue(),
            &DiscussionConfig::default(),
            &default_personas(2),
            None,
        )
        .unwrap_err();
        match err {
            AgentError::Backend { persona, round, .. } => {
                assert_eq!((persona.as_str(), round), ("Mike", 1))
            }
            other => panic!("{other:?}"),
        }
    }

    #[test]
    fn transcript_rejects_decreasing_rounds() {
        let mut t = Transcript::new();
        t.push(TranscriptEntry::new("a", 1, "x")).unwrap();
        assert!(t.push(TranscriptEntry::new("b", 0, "y")).is_err());
        let json = r#"[{"speaker":"a","round":2,"text":""},{"speaker":"b","round":1,"text":""}]"#;
        assert!(serde_json::from_str::<Transcript>(json).is_err());
    }

    #[test]
    fn phase_strings() {
        assert_eq!(Phase::Challenge(3).to_string(), "challenge-3");
        assert_eq!("initial".parse::<Phase>(), Ok(Phase::Initial));
        assert!("challenge-0".parse::<Phase>().is_err());
    }
}
