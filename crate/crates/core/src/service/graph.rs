use serde::{Deserialize, Serialize};

use crate::af::{enumerate_complete_with_limit, grounded, select_final};
use crate::rubric::Level;
use crate::teacher::{DimensionReport, TeacherError};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphNode {
    /// Argument label (`A`, `B`, ...).
    pub id: String,
    /// Display text: label, author, level and claim.
    pub label: String,
    pub author: String,
    pub claim: String,
    pub proposed_level: Option<Level>,
    pub accepted: bool,
    pub in_grounded: bool,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphEdge {
    pub from: String,
    pub to: String,
    pub rationale: String,
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct GraphView {
    pub dimension_key: String,
    pub grade: Level,
    /// The framework in the line format the flags were computed from.
    pub af: String,
    pub nodes: Vec<GraphNode>,
    pub edges: Vec<GraphEdge>,
}

/// Builds the graph from the stored framework, solving it again rather
/// than trusting the stored flags, and refuses a report whose stored
/// extension disagrees with the solver.
pub fn graph_view(
    entry: &DimensionReport,
    max_arguments: usize,
) -> Result<GraphView, TeacherError> {
    let af = entry.framework.framework()?;
    let accepted = select_final(&enumerate_complete_with_limit(&af, max_arguments)?)?;
    let core = grounded(&af);
    if accepted.members() != entry.extension.members() {
        return Err(TeacherError::Snapshot(format!(
            "stored extension for `{}` differs from the solver",
            entry.dimension_key
        )));
    }
    let nodes = entry
        .framework
        .arguments
        .iter()
        .map(|a| GraphNode {
            id: a.label(),
            label: a.render(),
            author: a.author.clone(),
            claim: a.text.clone(),
            proposed_level: a.proposed_level,
            accepted: accepted.contains(a.id),
            in_grounded: core.contains(a.id),
        })
        .collect();
    let edges = entry
        .framework
        .attacks
        .iter()
        .map(|r| GraphEdge {
            from: r.attacker.label(),
            to: r.target.label(),
            rationale: r.rationale.clone(),
        })
        .collect();
    Ok(GraphView {
        dimension_key: entry.dimension_key.clone(),
        grade: entry.grade.level,
        af: entry.framework.af.clone(),
        nodes,
        edges,
    })
}
