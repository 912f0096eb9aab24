//! Assessment rubrics and per-dimension grades.
//!
//! Rubric files are TOML documents:
//!
//! ```toml
//! [[dimensions]]
//! key = "issue"
//! display_name = "Issue"
//!
//! [[dimensions.levels]]
//! level = 0
//! description = "The issue is mentioned without sufficient clarification or detail. ..."
//! ```
//!
//! Levels of a dimension must be listed as `0, 1, 2, ...` with no gaps and
//! non-empty descriptions. Dimension keys must be unique.

use std::collections::HashSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

/// A rubric level. Grades are discrete; there are no fractional scores.
pub type Level = u32;

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct LevelDescriptor {
    pub level: Level,
    pub description: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct RubricDimension {
    pub key: String,
    pub display_name: String,
    pub levels: Vec<LevelDescriptor>,
}

impl RubricDimension {
    pub fn has_level(&self, level: Level) -> bool {
        (level as usize) < self.levels.len()
    }

    pub fn max_level(&self) -> Level {
        self.levels.len().saturating_sub(1) as Level
    }

    pub fn descriptor(&self, level: Level) -> Option<&LevelDescriptor> {
        self.levels.get(level as usize)
    }

    /// Plain-text rendering used inside prompts.
    pub fn render(&self) -> String {
        let mut out = format!("{} ({})\n", self.display_name, self.key);
        for l in &self.levels {
            out.push_str(&format!("  Level {}: {}\n", l.level, l.description));
        }
        out
    }
}

/// One level chosen for one dimension.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Grade {
    pub dimension_key: String,
    pub level: Level,
}

impl Grade {
    pub fn new(dimension: &RubricDimension, level: Level) -> Result<Self, RubricError> {
        if !dimension.has_level(level) {
            return Err(RubricError::InvalidLevel {
                dimension: dimension.key.clone(),
                level,
            });
        }
        Ok(Self {
            dimension_key: dimension.key.clone(),
            level,
        })
    }
}

impl fmt::Display for Grade {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}: level {}", self.dimension_key, self.level)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum RubricError {
    #[error("rubric schema error: {0}")]
    Schema(String),
    #[error("rubric has no dimensions")]
    Empty,
    #[error("duplicate dimension key `{0}`")]
    DuplicateKey(String),
    #[error("dimension `{dimension}`: levels must be 0, 1, 2, ... without gaps (found {found:?})")]
    NonContiguousLevels {
        dimension: String,
        found: Vec<Level>,
    },
    #[error("dimension `{dimension}`: level {level} has an empty description")]
    EmptyDescription { dimension: String, level: Level },
    #[error("dimension at position {0} has an empty key")]
    EmptyKey(usize),
    #[error("level {level} is not valid for dimension `{dimension}`")]
    InvalidLevel { dimension: String, level: Level },
    #[error("unknown dimension `{0}`")]
    UnknownDimension(String),
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct RubricDocument {
    dimensions: Vec<RubricDimension>,
}

pub fn parse_rubric(document: &str) -> Result<Vec<RubricDimension>, RubricError> {
    let doc: RubricDocument =
        toml::from_str(document).map_err(|e| RubricError::Schema(e.to_string()))?;
    validate_rubric(&doc.dimensions)?;
    Ok(doc.dimensions)
}

pub fn serialize_rubric(rubric: &[RubricDimension]) -> String {
    let doc = RubricDocument {
        dimensions: rubric.to_vec(),
    };
    toml::to_string(&doc).expect("rubric serialises to TOML")
}

pub fn validate_rubric(rubric: &[RubricDimension]) -> Result<(), RubricError> {
    if rubric.is_empty() {
        return Err(RubricError::Empty);
    }
    let mut seen = HashSet::new();
    for (position, dim) in rubric.iter().enumerate() {
        if dim.key.trim().is_empty() {
            return Err(RubricError::EmptyKey(position));
        }
        if !seen.insert(dim.key.as_str()) {
            return Err(RubricError::DuplicateKey(dim.key.clone()));
        }
        let found: Vec<Level> = dim.levels.iter().map(|l| l.level).collect();
        if found.is_empty() || found.iter().enumerate().any(|(i, &l)| l as usize != i) {
            return Err(RubricError::NonContiguousLevels {
                dimension: dim.key.clone(),
                found,
            });
        }
        if let Some(l) = dim.levels.iter().find(|l| l.description.trim().is_empty()) {
            return Err(RubricError::EmptyDescription {
                dimension: dim.key.clone(),
                level: l.level,
            });
        }
    }
    Ok(())
}

pub fn find_dimension<'a>(
    rubric: &'a [RubricDimension],
    key: &str,
) -> Result<&'a RubricDimension, RubricError> {
    rubric
        .iter()
        .find(|d| d.key == key)
        .ok_or_else(|| RubricError::UnknownDimension(key.to_string()))
}

/// The shipped default rubric document.
pub const DEFAULT_RUBRIC_TOML: &str = include_str!("../rubrics/critical_thinking.toml");

fn dimension(key: &str, display_name: &str, descriptions: [&str; 3]) -> RubricDimension {
    RubricDimension {
        key: key.to_string(),
        display_name: display_name.to_string(),
        levels: descriptions
            .iter()
            .enumerate()
            .map(|(i, d)| LevelDescriptor {
                level: i as Level,
                description: d.to_string(),
            })
            .collect(),
    }
}

/// Four-dimension critical-thinking rubric with three levels each.
pub fn default_rubric() -> Vec<RubricDimension> {
    vec![
        dimension(
            "issue",
            "Issue",
            [
                "The issue is mentioned without sufficient clarification or detail. There is a lack of identification of issues or problems.",
                "The issue is identified but lacks clarity, with undefined terms, unexplored ambiguities, and insufficient background.",
                "The issue is articulated with clarity and depth, providing comprehensive information necessary for a thorough understanding.",
            ],
        ),
        dimension(
            "evidence",
            "Evidence",
            [
                "Information is sourced without interpretation or evaluation, drawing from a single source or example.",
                "Information is derived from sources with some level of interpretation or evaluation, involving two or more sources/examples.",
                "Information is gathered from multiple sources with substantial interpretation and evaluation, resulting in a thorough analysis or synthesis.",
            ],
        ),
        dimension(
            "position",
            "Position",
            [
                "The position (perspective, thesis/hypothesis) is unclear or undefined.",
                "A specific position is identifiable but lacks complexity and depth.",
                "The position is nuanced, recognizing the issue's complexities and its limitations.",
            ],
        ),
        dimension(
            "conclusion",
            "Conclusion",
            [
                "Conclusions are inconsistently aligned with the information discussed.",
                "Conclusions are consistent with the information but are based on a simplistic reasoning process.",
                "Conclusions are logically, reflect well-informed evaluation and integrat evidence and arguments.",
            ],
        ),
    ]
}
