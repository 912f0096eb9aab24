//! Acceptability semantics over an [`ArgumentationFramework`].
//!
//! The predicates work directly on argument sets and follow the textbook
//! definitions one clause at a time. Enumeration uses a separate bitmask
//! search so that the two can be checked against each other.

use std::cmp::Reverse;
use std::collections::{BTreeMap, BTreeSet};

use super::{AfError, ArgumentId, ArgumentationFramework, Extension, SemanticsTag};

/// Default cap on the number of arguments accepted by [`enumerate_complete`].
pub const DEFAULT_MAX_ARGUMENTS: usize = 20;

/// Hard ceiling imposed by the 64-bit subset encoding.
pub const HARD_MAX_ARGUMENTS: usize = 63;

/// No member of `set` attacks a member of `set`, itself included.
pub fn is_conflict_free(
    af: &ArgumentationFramework,
    set: &BTreeSet<ArgumentId>,
) -> Result<bool, AfError> {
    af.check_all(set)?;
    Ok(!af
        .attacks()
        .iter()
        .any(|(a, b)| set.contains(a) && set.contains(b)))
}

/// Every attacker of `argument` is attacked by some member of `set`.
pub fn defends(
    af: &ArgumentationFramework,
    set: &BTreeSet<ArgumentId>,
    argument: ArgumentId,
) -> Result<bool, AfError> {
    af.check_all(set)?;
    af.check(argument)?;
    Ok(af
        .attackers_of(argument)
        .all(|attacker| set.iter().any(|&b| af.attacks_between(b, attacker))))
}

pub fn is_admissible(
    af: &ArgumentationFramework,
    set: &BTreeSet<ArgumentId>,
) -> Result<bool, AfError> {
    if !is_conflict_free(af, set)? {
        return Ok(false);
    }
    for &a in set {
        if !defends(af, set, a)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// Admissible, and contains every argument it defends.
pub fn is_complete(
    af: &ArgumentationFramework,
    set: &BTreeSet<ArgumentId>,
) -> Result<bool, AfError> {
    if !is_admissible(af, set)? {
        return Ok(false);
    }
    for &a in af.arguments() {
        if !set.contains(&a) && defends(af, set, a)? {
            return Ok(false);
        }
    }
    Ok(true)
}

/// All complete extensions, capped at [`DEFAULT_MAX_ARGUMENTS`] arguments.
pub fn enumerate_complete(af: &ArgumentationFramework) -> Result<Vec<Extension>, AfError> {
    enumerate_complete_with_limit(af, DEFAULT_MAX_ARGUMENTS)
}

/// All complete extensions, ordered by size descending and then
/// lexicographically by sorted member ids.
pub fn enumerate_complete_with_limit(
    af: &ArgumentationFramework,
    max_arguments: usize,
) -> Result<Vec<Extension>, AfError> {
    let limit = max_arguments.min(HARD_MAX_ARGUMENTS);
    if af.len() > limit {
        return Err(AfError::SizeLimit {
            size: af.len(),
            limit,
        });
    }
    let index = MaskIndex::new(af);
    let mut found = Vec::new();
    index.search(0, 0, &mut found);

    let mut extensions: Vec<Extension> = found
        .into_iter()
        .map(|mask| Extension::new(index.members(mask), SemanticsTag::Complete))
        .collect();
    sort_extensions(&mut extensions);
    Ok(extensions)
}

pub(crate) fn sort_extensions(extensions: &mut [Extension]) {
    extensions.sort_by(|x, y| {
        y.len()
            .cmp(&x.len())
            .then_with(|| x.members().iter().cmp(y.members().iter()))
    });
}

/// Least fixed point of the defence function, iterated from the empty set.
pub fn grounded(af: &ArgumentationFramework) -> Extension {
    let mut attackers: BTreeMap<ArgumentId, Vec<ArgumentId>> =
        af.arguments().iter().map(|&a| (a, Vec::new())).collect();
    for &(from, to) in af.attacks() {
        attackers.entry(to).or_default().push(from);
    }

    let mut current: BTreeSet<ArgumentId> = BTreeSet::new();
    loop {
        let next: BTreeSet<ArgumentId> = attackers
            .iter()
            .filter(|(_, atts)| {
                atts.iter()
                    .all(|c| current.iter().any(|&b| af.attacks_between(b, *c)))
            })
            .map(|(&a, _)| a)
            .collect();
        if next == current {
            return Extension::new(current, SemanticsTag::Grounded);
        }
        current = next;
    }
}

/// Picks the largest complete extension. Among equally large candidates the
/// one whose sorted member list is lexicographically smallest wins, so the
/// result does not depend on input order.
pub fn select_final(extensions: &[Extension]) -> Result<Extension, AfError> {
    if let Some(bad) = extensions
        .iter()
        .find(|e| e.semantics() != SemanticsTag::Complete)
    {
        return Err(AfError::TagMismatch {
            expected: SemanticsTag::Complete,
            found: bad.semantics(),
        });
    }
    extensions
        .iter()
        .max_by_key(|e| {
            (
                e.len(),
                Reverse(e.members().iter().copied().collect::<Vec<_>>()),
            )
        })
        .cloned()
        .map(|e| e.retag(SemanticsTag::SelectedFinal))
        .ok_or(AfError::EmptyInput)
}

/// Dense bit positions for the arguments of one framework.
struct MaskIndex {
    ids: Vec<ArgumentId>,
    /// `attackers[i]`: bits of the arguments attacking argument `i`.
    attackers: Vec<u64>,
    /// `targets[i]`: bits of the arguments attacked by argument `i`.
    targets: Vec<u64>,
}

impl MaskIndex {
    fn new(af: &ArgumentationFramework) -> Self {
        let ids: Vec<ArgumentId> = af.arguments().iter().copied().collect();
        let position: BTreeMap<ArgumentId, usize> =
            ids.iter().enumerate().map(|(i, &id)| (id, i)).collect();
        let mut attackers = vec![0u64; ids.len()];
        let mut targets = vec![0u64; ids.len()];
        for (from, to) in af.attacks() {
            let (f, t) = (position[from], position[to]);
            attackers[t] |= 1 << f;
            targets[f] |= 1 << t;
        }
        Self {
            ids,
            attackers,
            targets,
        }
    }

    fn members(&self, mask: u64) -> BTreeSet<ArgumentId> {
        self.ids
            .iter()
            .enumerate()
            .filter(|(i, _)| mask & (1 << i) != 0)
            .map(|(_, &id)| id)
            .collect()
    }

    /// Include/exclude search over argument positions, abandoning a branch
    /// as soon as the chosen set stops being conflict-free.
    fn search(&self, position: usize, chosen: u64, found: &mut Vec<u64>) {
        if position == self.ids.len() {
            if self.is_complete_mask(chosen) {
                found.push(chosen);
            }
            return;
        }
        self.search(position + 1, chosen, found);

        let bit = 1u64 << position;
        let clashes = (self.attackers[position] | self.targets[position]) & (chosen | bit);
        if clashes == 0 {
            self.search(position + 1, chosen | bit, found);
        }
    }

    /// Assumes `chosen` is conflict-free.
    fn is_complete_mask(&self, chosen: u64) -> bool {
        let mut attacked = 0u64;
        for (i, targets) in self.targets.iter().enumerate() {
            if chosen & (1 << i) != 0 {
                attacked |= targets;
            }
        }
        let mut defended = 0u64;
        for (i, attackers) in self.attackers.iter().enumerate() {
            if attackers & !attacked == 0 {
                defended |= 1 << i;
            }
        }
        defended == chosen
    }
}
