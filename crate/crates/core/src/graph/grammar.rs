//! The ontology grammar: which `(head, relation, tail)` triples may appear.

use std::collections::HashSet;

use serde::{Deserialize, Serialize};

use super::{ActorCategory, Edge, RelationCategory, SceneGraph};

use ActorCategory as A;
use RelationCategory as R;

/// Whether the grammar licenses a triple.
///
/// Self-state triples are licensed only for categories that carry a
/// self-relation (dynamic actors and traffic lights).
pub fn is_licensed(head: ActorCategory, relation: RelationCategory, tail: ActorCategory) -> bool {
    if relation == R::SelfState {
        return head == tail && head.has_self_relation();
    }
    match head {
        A::Ego => match relation {
            R::IsIn => tail.is_containment(),
            R::SafeDistance | R::UnsafeDistance => matches!(
                tail,
                A::Car | A::Bicycle | A::Pedestrian | A::Object | A::TrafficLight | A::Shoulder
            ),
            _ => false,
        },
        A::Car | A::Bicycle | A::Pedestrian => match relation {
            R::IsIn => tail.is_containment(),
            r if r.is_distance() || r.is_position() => tail == A::Ego,
            _ => false,
        },
        A::TrafficLight | A::Object => relation == R::IsIn && tail.is_containment(),
        A::Lane | A::Pavement | A::Shoulder => relation == R::IsIn && tail == A::Road,
        A::Road => false,
    }
}

/// A breach of the grammar or of a scene-graph invariant.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub enum Violation {
    GrammarViolation { edge: usize, rule: String },
    InvariantViolation { rule: String },
}

impl Violation {
    pub fn rule(&self) -> &str {
        match self {
            Violation::GrammarViolation { rule, .. } | Violation::InvariantViolation { rule } => rule,
        }
    }
}

fn grammar_rule(head: ActorCategory, relation: RelationCategory, tail: ActorCategory) -> String {
    if head == A::Road {
        "Road has no outgoing relations".to_string()
    } else if relation == R::SelfState && !head.has_self_relation() {
        format!("{} has no self-relation", head.name())
    } else {
        format!(
            "{} -{}-> {} is not licensed",
            head.name(),
            relation.name(),
            tail.name()
        )
    }
}

/// Checks every edge against the grammar and every scene-graph invariant.
/// An empty result means the graph is valid.
pub fn validate_grammar(g: &SceneGraph) -> Vec<Violation> {
    let mut out = Vec::new();
    let n = g.nodes.len();

    for (i, node) in g.nodes.iter().enumerate() {
        if node.id != i {
            out.push(Violation::InvariantViolation {
                rule: format!("node ids must be dense: position {i} has id {}", node.id),
            });
        }
        if let Some(rule) = state_rule(node.category, node.state.as_ref()) {
            out.push(Violation::InvariantViolation {
                rule: format!("node {i}: {rule}"),
            });
        }
    }

    let egos = g.nodes.iter().filter(|n| n.category == A::Ego).count();
    if egos != 1 {
        out.push(Violation::InvariantViolation {
            rule: "exactly one Ego".to_string(),
        });
    }

    let mut seen = HashSet::new();
    let mut containment = vec![0usize; n];
    for (idx, e) in g.edges.iter().enumerate() {
        if e.head >= n || e.tail >= n {
            out.push(Violation::InvariantViolation {
                rule: format!("edge {idx} references a missing node"),
            });
            continue;
        }
        if !seen.insert(*e) {
            out.push(Violation::InvariantViolation {
                rule: format!("edge {idx} duplicates an earlier edge"),
            });
        }
        if (e.relation == R::SelfState) != (e.head == e.tail) {
            out.push(Violation::InvariantViolation {
                rule: format!("edge {idx}: SelfState iff head = tail"),
            });
            continue;
        }
        let (hc, tc) = (g.category(e.head), g.category(e.tail));
        if !is_licensed(hc, e.relation, tc) {
            out.push(Violation::GrammarViolation {
                edge: idx,
                rule: grammar_rule(hc, e.relation, tc),
            });
        }
        if e.relation == R::IsIn && tc.is_containment() {
            containment[e.head] += 1;
        }
    }

    for node in &g.nodes {
        if node.category.is_dynamic() && node.id < n && containment[node.id] != 1 {
            out.push(Violation::InvariantViolation {
                rule: format!(
                    "{} node {} must have exactly one IsIn edge (found {})",
                    node.category.name(),
                    node.id,
                    containment[node.id]
                ),
            });
        }
    }
    out
}

fn state_rule(category: ActorCategory, state: Option<&super::AgentState>) -> Option<String> {
    let Some(s) = state else {
        return category
            .has_self_relation()
            .then(|| format!("{} requires a state", category.name()));
    };
    if s.light_state.is_some() != (category == A::TrafficLight) {
        return Some("light_state present iff TrafficLight".to_string());
    }
    if s.braking.is_some() && !category.has_braking() {
        return Some("braking only for Ego or Car".to_string());
    }
    if s.velocity.is_some() && !category.is_dynamic() {
        return Some("velocity only for dynamic actors".to_string());
    }
    if category.is_dynamic() && s.velocity.is_none() {
        return Some(format!("{} requires a velocity", category.name()));
    }
    None
}

/// Convenience for tests and builders: do all edges form licensed triples?
pub fn edge_is_licensed(g: &SceneGraph, e: &Edge) -> bool {
    is_licensed(g.category(e.head), e.relation, g.category(e.tail))
}
