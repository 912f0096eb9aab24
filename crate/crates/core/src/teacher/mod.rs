//! Turns a discussion into an argumentation framework and a grade.
//!
//! The teacher extracts arguments and attacks from the transcript (as JSON
//! replies, see [`extract_arguments`]), computes the complete extensions, picks the
//! largest one, and asks for feedback written from the accepted arguments
//! only. The grade must be a level some accepted argument proposed.

mod extract;

use std::collections::{BTreeMap, BTreeSet};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::af::text::{format_framework, parse_framework};
use crate::af::{
    enumerate_complete_with_limit, grounded, select_final, AfError, ArgumentId,
    ArgumentationFramework, Extension, DEFAULT_MAX_ARGUMENTS,
};
use crate::agents::{initial_levels, AgentContext, Phase, Transcript, STUDENT};
use crate::backend::BackendError;
use crate::prompts::{PromptError, DEFAULT_PARSE_RETRIES};
use crate::rubric::{Grade, Level, RubricDimension, RubricError};

pub use extract::{extract_arguments, extract_attacks, synthesize, AttackExtraction, Synthesis};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Argument {
    pub id: ArgumentId,
    pub author: String,
    pub dimension_key: String,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub proposed_level: Option<Level>,
    pub text: String,
    /// Discussion the argument was extracted from.
    pub phase: Phase,
}

impl Argument {
    pub fn label(&self) -> String {
        self.id.label()
    }

    pub fn is_student(&self) -> bool {
        self.author == STUDENT
    }

    /// `A [Mike, level 1]: claim`
    pub fn render(&self) -> String {
        match self.proposed_level {
            Some(l) => format!(
                "{} [{}, level {}]: {}",
                self.label(),
                self.author,
                l,
                self.text
            ),
            None => format!("{} [{}]: {}", self.label(), self.author, self.text),
        }
    }

    fn check(&self) -> Result<(), String> {
        if self.text.trim().is_empty() {
            return Err(format!("argument {} has no text", self.label()));
        }
        if !self.is_student() && self.proposed_level.is_none() {
            return Err(format!(
                "argument {} by {} has no level",
                self.label(),
                self.author
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct AttackRelation {
    pub attacker: ArgumentId,
    pub target: ArgumentId,
    pub rationale: String,
    #[serde(default, skip_serializing_if = "std::ops::Not::not")]
    pub self_contradiction: bool,
}

/// A framework as persisted: the AF text format, the labels of its dense
/// indices (`labels[i]` names AF argument `i + 1`), and the argument and
/// attack records.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FrameworkSnapshot {
    pub af: String,
    pub labels: Vec<String>,
    pub arguments: Vec<Argument>,
    pub attacks: Vec<AttackRelation>,
}

impl FrameworkSnapshot {
    pub fn build(
        arguments: Vec<Argument>,
        attacks: Vec<AttackRelation>,
    ) -> Result<Self, TeacherError> {
        let af = framework_of(&arguments, &attacks)?;
        let (text, ids) = format_framework(&af);
        let labels = ids.iter().map(|id| id.label()).collect();
        Ok(Self {
            af: text,
            labels,
            arguments,
            attacks,
        })
    }

    /// The framework recovered from the AF text and label map alone.
    pub fn framework(&self) -> Result<ArgumentationFramework, TeacherError> {
        let dense = parse_framework(&self.af)?;
        let map = |i: ArgumentId| -> Result<ArgumentId, TeacherError> {
            self.labels
                .get(i.get() as usize - 1)
                .and_then(|l| ArgumentId::from_label(l))
                .ok_or_else(|| TeacherError::Snapshot(format!("no label for AF argument {i}")))
        };
        let ids = dense
            .arguments()
            .iter()
            .map(|&i| map(i))
            .collect::<Result<Vec<_>, _>>()?;
        let attacks = dense
            .attacks()
            .iter()
            .map(|&(a, b)| Ok((map(a)?, map(b)?)))
            .collect::<Result<Vec<_>, TeacherError>>()?;
        let mut sorted = ids.clone();
        sorted.sort();
        Ok(ArgumentationFramework::from_parts(sorted, attacks)?)
    }

    pub fn argument(&self, id: ArgumentId) -> Option<&Argument> {
        self.arguments.iter().find(|a| a.id == id)
    }

    /// The AF text and label map agree with the argument and attack records.
    pub fn verify(&self) -> Result<(), TeacherError> {
        let from_text = self.framework()?;
        let from_records = framework_of(&self.arguments, &self.attacks)?;
        if from_text != from_records {
            return Err(TeacherError::Snapshot(
                "AF text disagrees with the argument/attack records".into(),
            ));
        }
        for a in &self.arguments {
            a.check().map_err(TeacherError::Snapshot)?;
        }
        Ok(())
    }
}

fn framework_of(
    arguments: &[Argument],
    attacks: &[AttackRelation],
) -> Result<ArgumentationFramework, TeacherError> {
    let mut ids: Vec<ArgumentId> = arguments.iter().map(|a| a.id).collect();
    ids.sort();
    if ids.windows(2).any(|w| w[0] == w[1]) {
        return Err(TeacherError::Snapshot("duplicate argument id".into()));
    }
    for at in attacks {
        if at.attacker == at.target && !at.self_contradiction {
            return Err(TeacherError::SelfAttack(at.attacker.label()));
        }
    }
    Ok(ArgumentationFramework::from_parts(
        ids,
        attacks.iter().map(|a| (a.attacker, a.target)),
    )?)
}

/// One rubric dimension's outcome, with everything needed to audit it.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct DimensionReport {
    pub dimension_key: String,
    pub grade: Grade,
    pub feedback_text: String,
    pub accepted_argument_ids: Vec<ArgumentId>,
    pub framework: FrameworkSnapshot,
    pub extension: Extension,
    pub complete_extensions: Vec<Extension>,
    pub grounded: Vec<ArgumentId>,
    /// No accepted argument proposed a level; the grade is the mode of the
    /// agents' initial reviews.
    pub contested: bool,
    /// Level the synthesis step asked for.
    pub synthesized_level: Level,
    /// The synthesized level was replaced to keep the grade consistent with
    /// the accepted arguments.
    pub overridden: bool,
    pub phase: Phase,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub warnings: Vec<String>,
}

impl DimensionReport {
    pub fn accepted_arguments(&self) -> impl Iterator<Item = &Argument> {
        self.framework
            .arguments
            .iter()
            .filter(|a| self.extension.contains(a.id))
    }

    /// Recomputes the semantics from the snapshot and checks every stored
    /// conclusion against it.
    pub fn verify(
        &self,
        dimension: &RubricDimension,
        max_arguments: usize,
    ) -> Result<(), TeacherError> {
        self.framework.verify()?;
        let af = self.framework.framework()?;
        let exts = enumerate_complete_with_limit(&af, max_arguments)?;
        let chosen = select_final(&exts)?;
        if chosen != self.extension || exts != self.complete_extensions {
            return Err(TeacherError::Snapshot(
                "stored extensions do not match the framework".into(),
            ));
        }
        let ids: Vec<ArgumentId> = chosen.members().iter().copied().collect();
        if ids != self.accepted_argument_ids {
            return Err(TeacherError::Snapshot(
                "accepted ids differ from the extension".into(),
            ));
        }
        let g: Vec<ArgumentId> = grounded(&af).members().iter().copied().collect();
        if g != self.grounded {
            return Err(TeacherError::Snapshot("grounded set does not match".into()));
        }
        Grade::new(dimension, self.grade.level)?;
        if self.grade.dimension_key != self.dimension_key || dimension.key != self.dimension_key {
            return Err(TeacherError::Snapshot("dimension key mismatch".into()));
        }
        let accepted_levels: Vec<Level> = self
            .accepted_arguments()
            .filter_map(|a| a.proposed_level)
            .collect();
        if !self.contested && !accepted_levels.contains(&self.grade.level) {
            return Err(TeacherError::Snapshot(
                "grade is not proposed by any accepted argument".into(),
            ));
        }
        Ok(())
    }
}

#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct FeedbackReport {
    pub entries: Vec<DimensionReport>,
}

impl FeedbackReport {
    pub fn entry(&self, dimension_key: &str) -> Option<&DimensionReport> {
        self.entries
            .iter()
            .find(|e| e.dimension_key == dimension_key)
    }

    /// Swaps in a revised entry for the same dimension.
    pub fn replace(&mut self, entry: DimensionReport) -> Result<(), TeacherError> {
        let slot = self
            .entries
            .iter_mut()
            .find(|e| e.dimension_key == entry.dimension_key)
            .ok_or_else(|| {
                TeacherError::Snapshot(format!("no entry for `{}`", entry.dimension_key))
            })?;
        *slot = entry;
        Ok(())
    }

    pub fn grades(&self) -> Vec<&Grade> {
        self.entries.iter().map(|e| &e.grade).collect()
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TeacherConfig {
    /// Fail on attacks that name unknown arguments instead of dropping them.
    #[serde(default)]
    pub strict_attacks: bool,
    #[serde(default = "default_retries")]
    pub parse_retries: u32,
    #[serde(default = "default_max_arguments")]
    pub max_arguments: usize,
}

fn default_retries() -> u32 {
    DEFAULT_PARSE_RETRIES
}

fn default_max_arguments() -> usize {
    DEFAULT_MAX_ARGUMENTS
}

impl Default for TeacherConfig {
    fn default() -> Self {
        Self {
            strict_attacks: false,
            parse_retries: default_retries(),
            max_arguments: default_max_arguments(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum TeacherError {
    #[error("transcript is empty")]
    EmptyTranscript,
    #[error("teacher {step}: {source}")]
    Backend {
        step: &'static str,
        #[source]
        source: BackendError,
    },
    #[error("teacher {step}: malformed reply after {attempts} attempt(s): {message}")]
    MalformedExtraction {
        step: &'static str,
        attempts: u32,
        message: String,
    },
    #[error("attack names unknown argument `{0}`")]
    UnknownArgument(String),
    #[error("argument {0} attacks itself without being flagged as self-contradictory")]
    SelfAttack(String),
    #[error(transparent)]
    Framework(#[from] AfError),
    #[error(transparent)]
    Prompt(#[from] PromptError),
    #[error(transparent)]
    Rubric(#[from] RubricError),
    #[error("invalid snapshot: {0}")]
    Snapshot(String),
}

impl TeacherError {
    pub fn backend_error(&self) -> Option<&BackendError> {
        match self {
            TeacherError::Backend { source, .. } => Some(source),
            _ => None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct GradeResolution {
    pub level: Level,
    pub contested: bool,
    pub overridden: bool,
}

/// Most frequent level; ties go to the lower level.
pub fn mode_lower(levels: &[Level]) -> Option<Level> {
    let mut counts: BTreeMap<Level, usize> = BTreeMap::new();
    for &l in levels {
        *counts.entry(l).or_default() += 1;
    }
    // max_by_key keeps the last maximum; iterate high-to-low so that is the lowest level.
    counts
        .into_iter()
        .rev()
        .max_by_key(|&(_, c)| c)
        .map(|(l, _)| l)
}

/// The grade-consistency rule.
///
/// * Accepted arguments propose levels and the synthesized level is one of
///   them: keep it.
/// * They propose levels but not that one: use their majority level.
/// * They propose none (empty extension, or only level-less student
///   arguments): use the mode of the initial reviews and mark it contested.
pub fn resolve_grade(
    accepted_levels: &[Level],
    synthesized: Level,
    initial_levels: &[Level],
) -> GradeResolution {
    if let Some(majority) = mode_lower(accepted_levels) {
        let level = if accepted_levels.contains(&synthesized) {
            synthesized
        } else {
            majority
        };
        return GradeResolution {
            level,
            contested: false,
            overridden: level != synthesized,
        };
    }
    let level = mode_lower(initial_levels).unwrap_or(synthesized);
    GradeResolution {
        level,
        contested: true,
        overridden: level != synthesized,
    }
}

/// Grades one dimension from its initial discussion.
pub fn evaluate_dimension(
    ctx: &AgentContext<'_>,
    config: &TeacherConfig,
    dimension: &RubricDimension,
    transcript: &Transcript,
) -> Result<DimensionReport, TeacherError> {
    let arguments = extract_arguments(ctx, config, transcript, dimension, &[])?;
    let extraction = extract_attacks(ctx, config, &arguments, dimension)?;
    conclude(
        ctx,
        config,
        dimension,
        arguments,
        extraction.attacks,
        &initial_levels(transcript, dimension),
        extraction.warnings,
    )
}

/// Grades one dimension again after a challenge discussion. Earlier
/// arguments and attacks are kept; new arguments get fresh ids and attacks
/// are re-extracted over the combined set.
pub fn reevaluate_dimension(
    ctx: &AgentContext<'_>,
    config: &TeacherConfig,
    dimension: &RubricDimension,
    transcript: &Transcript,
    prior: &DimensionReport,
) -> Result<DimensionReport, TeacherError> {
    let existing = &prior.framework.arguments;
    let mut arguments = existing.clone();
    arguments.extend(extract_arguments(
        ctx, config, transcript, dimension, existing,
    )?);
    let extraction = extract_attacks(ctx, config, &arguments, dimension)?;

    let mut attacks = prior.framework.attacks.clone();
    let mut seen: BTreeSet<(ArgumentId, ArgumentId)> =
        attacks.iter().map(|a| (a.attacker, a.target)).collect();
    for a in extraction.attacks {
        if seen.insert((a.attacker, a.target)) {
            attacks.push(a);
        }
    }
    attacks.sort_by_key(|a| (a.attacker, a.target));
    conclude(
        ctx,
        config,
        dimension,
        arguments,
        attacks,
        &initial_levels(transcript, dimension),
        extraction.warnings,
    )
}

fn conclude(
    ctx: &AgentContext<'_>,
    config: &TeacherConfig,
    dimension: &RubricDimension,
    arguments: Vec<Argument>,
    attacks: Vec<AttackRelation>,
    initial: &[Level],
    mut warnings: Vec<String>,
) -> Result<DimensionReport, TeacherError> {
    let snapshot = FrameworkSnapshot::build(arguments, attacks)?;
    let af = snapshot.framework()?;
    let complete = enumerate_complete_with_limit(&af, config.max_arguments)?;
    let extension = select_final(&complete)?;
    let grounded_ids: Vec<ArgumentId> = grounded(&af).members().iter().copied().collect();

    let accepted: Vec<&Argument> = snapshot
        .arguments
        .iter()
        .filter(|a| extension.contains(a.id))
        .collect();
    let accepted_levels: Vec<Level> = accepted.iter().filter_map(|a| a.proposed_level).collect();
    let synthesis = synthesize(ctx, config, dimension, &accepted)?;
    let resolution = resolve_grade(&accepted_levels, synthesis.level, initial);
    if resolution.contested {
        warnings.push(
            "no accepted argument proposes a level; grade taken from the initial reviews".into(),
        );
    }
    if resolution.overridden {
        warnings.push(format!(
            "synthesized level {} replaced by {} to match the accepted arguments",
            synthesis.level, resolution.level
        ));
    }
    for w in &warnings {
        tracing::warn!(dimension = %dimension.key, "{w}");
    }
    Ok(DimensionReport {
        dimension_key: dimension.key.clone(),
        grade: Grade::new(dimension, resolution.level)?,
        feedback_text: synthesis.feedback,
        accepted_argument_ids: extension.members().iter().copied().collect(),
        framework: snapshot,
        extension,
        complete_extensions: complete,
        grounded: grounded_ids,
        contested: resolution.contested,
        synthesized_level: synthesis.level,
        overridden: resolution.overridden,
        phase: ctx.phase,
        warnings,
    })
}
