//! Extended scene graphs: every grammar-legal cross-edge as a candidate
//! link, labelled against the corner-case graph.

use std::collections::{BTreeMap, HashSet};
use std::io::{BufRead, Write};

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{is_licensed, ActorCategory, Edge, RelationCategory, SceneGraph};

#[derive(Debug, Error)]
pub enum ExtendedError {
    #[error("node sets differ between base and ground truth: {0}")]
    NodeMismatch(String),
    #[error("ground-truth edge {0:?} is not among the candidates")]
    Unlabelable(Edge),
    #[error("candidate {0} has no predicted probability")]
    MissingPredictions(usize),
    #[error("ground truth graph is not marked as a corner case")]
    NotCornerCase,
    #[error("dataset line {line}: {source}")]
    Parse {
        line: usize,
        source: serde_json::Error,
    },
    #[error(transparent)]
    Io(#[from] std::io::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CandidateEdge {
    pub head: usize,
    pub relation: RelationCategory,
    pub tail: usize,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub label: Option<u8>,
    #[serde(default, skip)]
    pub predicted_prob: Option<f64>,
}

impl CandidateEdge {
    pub fn edge(&self) -> Edge {
        Edge::new(self.head, self.relation, self.tail)
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ExtendedGraph {
    pub base: SceneGraph,
    pub candidates: Vec<CandidateEdge>,
    pub target_frame: usize,
}

impl ExtendedGraph {
    /// Unlabelled extension of `base` aimed at `target_frame`.
    pub fn new(base: SceneGraph, target_frame: usize) -> Self {
        let candidates = enumerate_candidates(&base);
        Self {
            base,
            candidates,
            target_frame,
        }
    }

    pub fn labels(&self) -> Option<Vec<f64>> {
        self.candidates
            .iter()
            .map(|c| c.label.map(f64::from))
            .collect()
    }

    pub fn set_predictions(&mut self, probs: &[f64]) {
        assert_eq!(probs.len(), self.candidates.len());
        for (c, &p) in self.candidates.iter_mut().zip(probs) {
            c.predicted_prob = Some(p);
        }
    }
}

/// All grammar-licensed cross-edges over the graph's nodes, in
/// `(head, tail, relation)` order.
pub fn enumerate_candidates(g: &SceneGraph) -> Vec<CandidateEdge> {
    let mut out = Vec::new();
    for h in &g.nodes {
        for t in &g.nodes {
            if h.id == t.id {
                continue;
            }
            for r in RelationCategory::CROSS {
                if is_licensed(h.category, r, t.category) {
                    out.push(CandidateEdge {
                        head: h.id,
                        relation: r,
                        tail: t.id,
                        label: None,
                        predicted_prob: None,
                    });
                }
            }
        }
    }
    out
}

/// Labels each candidate 1 if the corner-case graph contains it, else 0.
pub fn label_candidates(
    ext: &ExtendedGraph,
    ground_truth: &SceneGraph,
) -> Result<ExtendedGraph, ExtendedError> {
    if !ground_truth.is_corner_case {
        return Err(ExtendedError::NotCornerCase);
    }
    check_nodes_align(&ext.base, ground_truth)?;
    let truth: HashSet<Edge> = ground_truth.cross_edges().copied().collect();
    let mut out = ext.clone();
    let mut positives = 0usize;
    for c in &mut out.candidates {
        let hit = truth.contains(&c.edge());
        positives += usize::from(hit);
        c.label = Some(u8::from(hit));
    }
    if positives != truth.len() {
        let known: HashSet<Edge> = out.candidates.iter().map(CandidateEdge::edge).collect();
        let missing = truth
            .iter()
            .copied()
            .filter(|e| !known.contains(e))
            .min_by_key(Edge::sort_key)
            .expect("a ground-truth edge is missing");
        return Err(ExtendedError::Unlabelable(missing));
    }
    out.target_frame = ground_truth.frame_index;
    Ok(out)
}

fn check_nodes_align(base: &SceneGraph, truth: &SceneGraph) -> Result<(), ExtendedError> {
    if base.nodes.len() != truth.nodes.len() {
        return Err(ExtendedError::NodeMismatch(format!(
            "{} nodes vs {}",
            base.nodes.len(),
            truth.nodes.len()
        )));
    }
    for (a, b) in base.nodes.iter().zip(&truth.nodes) {
        if a.id != b.id || a.category != b.category {
            return Err(ExtendedError::NodeMismatch(format!(
                "node {} is {} in base but {} in ground truth",
                a.id,
                a.category.name(),
                b.category.name()
            )));
        }
    }
    Ok(())
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum DecodeMode {
    Threshold(f64),
    ConsistentArgmax,
}

/// Mutually exclusive candidate groups.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord)]
pub enum DecodeGroup {
    /// Where an actor is contained.
    Containment(usize),
    /// Safe or unsafe for one actor pair.
    Distance(usize, usize),
    /// Quadrant for one actor pair.
    Position(usize, usize),
}

/// The exclusive group a candidate belongs to, if any.
///
/// Distance groups exist only for the orientations the graph builder
/// emits (adversary to ego, ego to object); other licensed distance
/// candidates are decoded individually.
pub fn decode_group(g: &SceneGraph, c: &CandidateEdge) -> Option<DecodeGroup> {
    let (hc, tc) = (g.category(c.head), g.category(c.tail));
    match c.relation {
        RelationCategory::IsIn => Some(DecodeGroup::Containment(c.head)),
        r if r.is_position() => Some(DecodeGroup::Position(c.head, c.tail)),
        r if r.is_distance() => {
            let emitted = (hc.is_adversary() && tc == ActorCategory::Ego)
                || (hc == ActorCategory::Ego && tc == ActorCategory::Object);
            emitted.then_some(DecodeGroup::Distance(c.head, c.tail))
        }
        _ => None,
    }
}

/// Probability at or above which an ungrouped candidate is kept by
/// [`DecodeMode::ConsistentArgmax`].
pub const UNGROUPED_THRESHOLD: f64 = 0.5;

/// Turns per-candidate probabilities into a corner-case scene graph.
pub fn decode_prediction(ext: &ExtendedGraph, mode: DecodeMode) -> Result<SceneGraph, ExtendedError> {
    let probs: Vec<f64> = ext
        .candidates
        .iter()
        .enumerate()
        .map(|(i, c)| c.predicted_prob.ok_or(ExtendedError::MissingPredictions(i)))
        .collect::<Result<_, _>>()?;

    let mut kept: Vec<Edge> = Vec::new();
    match mode {
        DecodeMode::Threshold(tau) => {
            for (c, &p) in ext.candidates.iter().zip(&probs) {
                if p >= tau {
                    kept.push(c.edge());
                }
            }
        }
        DecodeMode::ConsistentArgmax => {
            // candidates are already in (head, tail, relation) order, so
            // keeping the first maximum breaks ties towards the lowest key
            let mut best: BTreeMap<DecodeGroup, (usize, f64)> = BTreeMap::new();
            let mut order: Vec<(usize, &CandidateEdge)> = ext.candidates.iter().enumerate().collect();
            order.sort_by_key(|(_, c)| c.edge().sort_key());
            for (i, c) in order {
                let p = probs[i];
                match decode_group(&ext.base, c) {
                    Some(group) => {
                        let slot = best.entry(group).or_insert((i, p));
                        if p > slot.1 {
                            *slot = (i, p);
                        }
                    }
                    None => {
                        if p >= UNGROUPED_THRESHOLD {
                            kept.push(c.edge());
                        }
                    }
                }
            }
            kept.extend(best.values().map(|&(i, _)| ext.candidates[i].edge()));
        }
    }

    let mut g = SceneGraph {
        frame_index: ext.target_frame,
        is_corner_case: true,
        nodes: ext.base.nodes.clone(),
        edges: ext.base.self_edges().copied().collect(),
    };
    g.edges.extend(kept);
    g.canonicalize();
    Ok(g)
}

/// One supervised example: a labelled extended graph plus provenance.
#[derive(Debug, Clone, PartialEq)]
pub struct Instance {
    pub scenario_id: u64,
    pub ext: ExtendedGraph,
}

#[derive(Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct InstanceRecord {
    base: SceneGraph,
    candidates: Vec<CandidateEdge>,
    scenario_id: u64,
    /// Index of the corner-case frame the labels refer to.
    frame: usize,
}

impl Instance {
    pub fn to_json_line(&self) -> String {
        let rec = InstanceRecord {
            base: self.ext.base.clone(),
            candidates: self.ext.candidates.clone(),
            scenario_id: self.scenario_id,
            frame: self.ext.target_frame,
        };
        serde_json::to_string(&rec).expect("instance serializes")
    }

    pub fn from_json_line(s: &str) -> Result<Self, serde_json::Error> {
        let rec: InstanceRecord = serde_json::from_str(s)?;
        Ok(Self {
            scenario_id: rec.scenario_id,
            ext: ExtendedGraph {
                base: rec.base,
                candidates: rec.candidates,
                target_frame: rec.frame,
            },
        })
    }
}

pub fn write_jsonl<W: Write>(mut w: W, instances: &[Instance]) -> std::io::Result<()> {
    for inst in instances {
        writeln!(w, "{}", inst.to_json_line())?;
    }
    Ok(())
}

pub fn read_jsonl<R: BufRead>(r: R) -> Result<Vec<Instance>, ExtendedError> {
    let mut out = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if line.trim().is_empty() {
            continue;
        }
        out.push(
            Instance::from_json_line(&line).map_err(|source| ExtendedError::Parse {
                line: i + 1,
                source,
            })?,
        );
    }
    Ok(out)
}
