//! Abstract argumentation frameworks.
//!
//! A framework is a directed attack graph over a finite set of arguments.
//! This module holds the graph itself; [`semantics`] holds the acceptability
//! predicates and extension enumeration, and [`text`] the line-oriented file
//! format used by the `solve` subcommand and by persisted snapshots.

pub mod semantics;
pub mod text;

use std::collections::BTreeSet;
use std::fmt;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use semantics::{
    defends, enumerate_complete, enumerate_complete_with_limit, grounded, is_admissible,
    is_complete, is_conflict_free, select_final, DEFAULT_MAX_ARGUMENTS, HARD_MAX_ARGUMENTS,
};

/// Identifier of an argument inside one framework.
///
/// Ids are allocated from a monotone counter and are never reused, so an id
/// keeps meaning the same argument for the lifetime of the framework.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(transparent)]
pub struct ArgumentId(u32);

impl ArgumentId {
    pub const fn new(raw: u32) -> Self {
        Self(raw)
    }

    pub const fn get(self) -> u32 {
        self.0
    }

    /// Spreadsheet-style letter label: 1 → `A`, 26 → `Z`, 27 → `AA`.
    pub fn label(self) -> String {
        let mut n = self.0;
        if n == 0 {
            return "@".to_string();
        }
        let mut out = Vec::new();
        while n > 0 {
            let rem = ((n - 1) % 26) as u8;
            out.push(b'A' + rem);
            n = (n - 1) / 26;
        }
        out.reverse();
        String::from_utf8(out).expect("ascii")
    }

    /// Inverse of [`ArgumentId::label`]. Accepts upper-case letters only.
    pub fn from_label(label: &str) -> Option<Self> {
        if label.is_empty() || label.len() > 6 {
            return None;
        }
        let mut n: u32 = 0;
        for b in label.bytes() {
            if !b.is_ascii_uppercase() {
                return None;
            }
            n = n * 26 + u32::from(b - b'A' + 1);
        }
        Some(Self(n))
    }
}

impl fmt::Display for ArgumentId {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{}", self.0)
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum AfError {
    #[error("unknown argument {0}")]
    UnknownArgument(ArgumentId),
    #[error("argument {0} already exists")]
    DuplicateArgument(ArgumentId),
    #[error("framework has {size} arguments, more than the limit of {limit}")]
    SizeLimit { size: usize, limit: usize },
    #[error("no extensions to select from")]
    EmptyInput,
    #[error("expected {expected} extensions, got {found}")]
    TagMismatch {
        expected: SemanticsTag,
        found: SemanticsTag,
    },
    #[error("line {line}: {message}")]
    Parse { line: usize, message: String },
}

/// Which predicate produced an [`Extension`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SemanticsTag {
    ConflictFree,
    Admissible,
    Complete,
    Grounded,
    SelectedFinal,
}

impl fmt::Display for SemanticsTag {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let s = match self {
            SemanticsTag::ConflictFree => "conflict_free",
            SemanticsTag::Admissible => "admissible",
            SemanticsTag::Complete => "complete",
            SemanticsTag::Grounded => "grounded",
            SemanticsTag::SelectedFinal => "selected_final",
        };
        f.write_str(s)
    }
}

/// A set of arguments together with the semantics that accepted it.
#[derive(Debug, Clone, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub struct Extension {
    members: BTreeSet<ArgumentId>,
    semantics: SemanticsTag,
}

impl Extension {
    pub(crate) fn new(members: BTreeSet<ArgumentId>, semantics: SemanticsTag) -> Self {
        Self { members, semantics }
    }

    pub fn members(&self) -> &BTreeSet<ArgumentId> {
        &self.members
    }

    pub fn semantics(&self) -> SemanticsTag {
        self.semantics
    }

    pub fn len(&self) -> usize {
        self.members.len()
    }

    pub fn is_empty(&self) -> bool {
        self.members.is_empty()
    }

    pub fn contains(&self, id: ArgumentId) -> bool {
        self.members.contains(&id)
    }

    pub(crate) fn retag(mut self, semantics: SemanticsTag) -> Self {
        self.semantics = semantics;
        self
    }
}

/// Dung-style argumentation framework `⟨arguments, attacks⟩`.
///
/// Self-attacks are allowed. Duplicate attacks collapse into one.
#[derive(Debug, Clone, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ArgumentationFramework {
    arguments: BTreeSet<ArgumentId>,
    attacks: BTreeSet<(ArgumentId, ArgumentId)>,
    next_id: u32,
}

impl ArgumentationFramework {
    pub fn new() -> Self {
        Self {
            arguments: BTreeSet::new(),
            attacks: BTreeSet::new(),
            next_id: 1,
        }
    }

    /// Framework with arguments `1..=n` and no attacks.
    pub fn with_arguments(n: u32) -> Self {
        let mut af = Self::new();
        for _ in 0..n {
            af.add_argument();
        }
        af
    }

    /// Builds a framework from explicit argument ids and attack pairs.
    pub fn from_parts(
        arguments: impl IntoIterator<Item = ArgumentId>,
        attacks: impl IntoIterator<Item = (ArgumentId, ArgumentId)>,
    ) -> Result<Self, AfError> {
        let mut af = Self::new();
        for id in arguments {
            af.insert_argument(id)?;
        }
        for (from, to) in attacks {
            af.add_attack(from, to)?;
        }
        Ok(af)
    }

    /// Allocates a fresh id and adds it.
    pub fn add_argument(&mut self) -> ArgumentId {
        let id = ArgumentId(self.next_id.max(1));
        self.next_id = id.0 + 1;
        self.arguments.insert(id);
        id
    }

    /// Adds an argument under a caller-chosen id. Ids below the allocation
    /// counter that were removed earlier cannot be reinstated.
    pub fn insert_argument(&mut self, id: ArgumentId) -> Result<(), AfError> {
        if self.arguments.contains(&id) || id.0 == 0 || id.0 < self.next_id {
            return Err(AfError::DuplicateArgument(id));
        }
        self.arguments.insert(id);
        self.next_id = id.0 + 1;
        Ok(())
    }

    /// Removes an argument and every attack touching it. The id is retired.
    pub fn remove_argument(&mut self, id: ArgumentId) -> Result<(), AfError> {
        if !self.arguments.remove(&id) {
            return Err(AfError::UnknownArgument(id));
        }
        self.attacks.retain(|&(a, b)| a != id && b != id);
        Ok(())
    }

    /// Returns `false` if the attack was already present.
    pub fn add_attack(
        &mut self,
        attacker: ArgumentId,
        target: ArgumentId,
    ) -> Result<bool, AfError> {
        self.check(attacker)?;
        self.check(target)?;
        Ok(self.attacks.insert((attacker, target)))
    }

    pub fn arguments(&self) -> &BTreeSet<ArgumentId> {
        &self.arguments
    }

    pub fn attacks(&self) -> &BTreeSet<(ArgumentId, ArgumentId)> {
        &self.attacks
    }

    pub fn len(&self) -> usize {
        self.arguments.len()
    }

    pub fn is_empty(&self) -> bool {
        self.arguments.is_empty()
    }

    pub fn contains(&self, id: ArgumentId) -> bool {
        self.arguments.contains(&id)
    }

    pub fn attacks_between(&self, attacker: ArgumentId, target: ArgumentId) -> bool {
        self.attacks.contains(&(attacker, target))
    }

    pub fn attackers_of(&self, target: ArgumentId) -> impl Iterator<Item = ArgumentId> + '_ {
        self.attacks
            .iter()
            .filter(move |&&(_, t)| t == target)
            .map(|&(a, _)| a)
    }

    pub(crate) fn check(&self, id: ArgumentId) -> Result<(), AfError> {
        if self.arguments.contains(&id) {
            Ok(())
        } else {
            Err(AfError::UnknownArgument(id))
        }
    }

    pub(crate) fn check_all<'a>(
        &self,
        ids: impl IntoIterator<Item = &'a ArgumentId>,
    ) -> Result<(), AfError> {
        ids.into_iter().try_for_each(|&id| self.check(id))
    }
}
