//! Fixed-width feature layouts for nodes, base edges and candidate edges.

use crate::extended::ExtendedGraph;
use crate::graph::{ActorCategory, Edge, LightState, Node, RelationCategory, SceneGraph};

pub const NODE_FEATURES: usize = 11;
pub const EDGE_FEATURES: usize = 9;
/// Normalizing speed for the node speed feature, m/s.
pub const V_MAX: f64 = 30.0;
/// Identifies the layouts below; stored in checkpoints.
pub const FEATURE_LAYOUT_ID: &str = "node11-cat10-speed1/edge9-rel7-self1-state1/v1";

/// One-hot category followed by `|v| / V_MAX`, clamped to `[0, 1]`.
pub fn node_features(node: &Node) -> [f64; NODE_FEATURES] {
    let mut x = [0.0; NODE_FEATURES];
    x[node.category.ordinal()] = 1.0;
    x[10] = node.state.map_or(0.0, |s| (s.speed() / V_MAX).clamp(0.0, 1.0));
    x
}

/// Attribute vector of a cross relation: one-hot over the seven cross
/// relations, with the self flag and state scalar zero.
pub fn relation_features(rel: RelationCategory) -> [f64; EDGE_FEATURES] {
    let mut p = [0.0; EDGE_FEATURES];
    if rel != RelationCategory::SelfState {
        p[rel.ordinal()] = 1.0;
    } else {
        p[7] = 1.0;
    }
    p
}

/// Attribute vector of a node's self-loop: self flag plus the braking flag
/// for vehicles or the light level for traffic lights.
pub fn self_features(node: &Node) -> [f64; EDGE_FEATURES] {
    let mut p = [0.0; EDGE_FEATURES];
    p[7] = 1.0;
    if let Some(s) = node.state {
        p[8] = match node.category {
            ActorCategory::TrafficLight => s.light_state.map_or(0.0, LightState::level) / 2.0,
            c if c.has_braking() => f64::from(u8::from(s.braking.unwrap_or(false))),
            _ => 0.0,
        };
    }
    p
}

/// Message-passing structure of a scene graph: every cross edge sends its
/// head's features to its tail, and every node gets exactly one self-loop.
/// Nodes without a state relation get a bare self-loop with only the
/// self flag set.
#[derive(Debug, Clone, PartialEq)]
pub struct AttentionEdges {
    pub n_nodes: usize,
    pub src: Vec<usize>,
    pub dst: Vec<usize>,
    pub attr: Vec<[f64; EDGE_FEATURES]>,
}

impl AttentionEdges {
    pub fn from_graph(g: &SceneGraph) -> Self {
        let n = g.nodes.len();
        let mut out = Self {
            n_nodes: n,
            src: Vec::with_capacity(n + g.edges.len()),
            dst: Vec::with_capacity(n + g.edges.len()),
            attr: Vec::with_capacity(n + g.edges.len()),
        };
        for node in &g.nodes {
            out.push(node.id, node.id, self_features(node));
        }
        for e in g.cross_edges() {
            out.push(e.head, e.tail, relation_features(e.relation));
        }
        out
    }

    pub fn push(&mut self, src: usize, dst: usize, attr: [f64; EDGE_FEATURES]) {
        self.src.push(src);
        self.dst.push(dst);
        self.attr.push(attr);
    }

    pub fn len(&self) -> usize {
        self.src.len()
    }

    pub fn is_empty(&self) -> bool {
        self.src.is_empty()
    }

    /// First node lacking a self-loop, if any.
    pub fn missing_self_loop(&self) -> Option<usize> {
        let mut seen = vec![false; self.n_nodes];
        for (&s, &d) in self.src.iter().zip(&self.dst) {
            if s == d && s < self.n_nodes {
                seen[s] = true;
            }
        }
        seen.iter().position(|&b| !b)
    }
}

/// Everything the model reads from one extended graph, flattened.
#[derive(Debug, Clone, PartialEq)]
pub struct ModelInput {
    /// `[n_nodes, NODE_FEATURES]`, row-major.
    pub node_x: Vec<f64>,
    pub edges: AttentionEdges,
    pub cand_head: Vec<usize>,
    pub cand_tail: Vec<usize>,
    /// `[n_candidates, EDGE_FEATURES]`, row-major.
    pub cand_attr: Vec<f64>,
}

impl ModelInput {
    pub fn from_extended(ext: &ExtendedGraph) -> Self {
        let g = &ext.base;
        let node_x = g.nodes.iter().flat_map(node_features).collect();
        let cand: Vec<Edge> = ext.candidates.iter().map(|c| c.edge()).collect();
        Self {
            node_x,
            edges: AttentionEdges::from_graph(g),
            cand_head: cand.iter().map(|e| e.head).collect(),
            cand_tail: cand.iter().map(|e| e.tail).collect(),
            cand_attr: cand.iter().flat_map(|e| relation_features(e.relation)).collect(),
        }
    }

    pub fn n_nodes(&self) -> usize {
        self.edges.n_nodes
    }

    pub fn n_candidates(&self) -> usize {
        self.cand_head.len()
    }

    pub fn edge_attr_flat(&self) -> Vec<f64> {
        self.edges.attr.iter().flatten().copied().collect()
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::AgentState;

    #[test]
    fn node_layout() {
        let n = Node {
            id: 0,
            category: ActorCategory::Bicycle,
            state: Some(AgentState::moving((0.0, 0.0), 0.0, 15.0)),
        };
        let x = node_features(&n);
        assert_eq!(x[..10].iter().sum::<f64>(), 1.0);
        assert_eq!(x[2], 1.0);
        assert!((x[10] - 0.5).abs() < 1e-12);

        let lane = Node {
            id: 1,
            category: ActorCategory::Lane,
            state: None,
        };
        assert_eq!(node_features(&lane)[10], 0.0);
    }

    #[test]
    fn edge_layouts() {
        for r in RelationCategory::CROSS {
            let p = relation_features(r);
            assert_eq!(p[..7].iter().sum::<f64>(), 1.0);
            assert_eq!(&p[7..], &[0.0, 0.0]);
        }
        let light = Node {
            id: 0,
            category: ActorCategory::TrafficLight,
            state: Some(AgentState::stationary((0.0, 0.0), 0.0).with_light(LightState::Green)),
        };
        let p = self_features(&light);
        assert_eq!(&p[..7], &[0.0; 7]);
        assert_eq!(p[7], 1.0);
        assert_eq!(p[8], LightState::Green.level() / 2.0);

        let car = Node {
            id: 0,
            category: ActorCategory::Car,
            state: Some(AgentState::moving((0.0, 0.0), 0.0, 3.0).with_braking(true)),
        };
        assert_eq!(self_features(&car)[8], 1.0);
    }
}
