//! Heterogeneous traffic scene graphs.
//!
//! A [`SceneGraph`] holds typed actor and road nodes joined by typed
//! relations. The closed ontology lives in [`ActorCategory`] and
//! [`RelationCategory`]; which `(head, relation, tail)` triples are legal is
//! decided by [`grammar`]. Continuous geometry is turned into categorical
//! relations by [`geometry`], and [`frame`] builds a graph from a
//! ground-truth world snapshot.

pub mod frame;
pub mod geometry;
pub mod grammar;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use frame::{build_scene_graph, Actor, FrameSnapshot, RoadLayout, Strip, StripKind};
pub use geometry::{
    discretize_distance, discretize_relative_position, relative_angle, stopping_distance,
    wrap_angle,
};
pub use grammar::{is_licensed, validate_grammar, Violation};

#[derive(Debug, Error, Clone, PartialEq)]
pub enum GraphError {
    #[error("actor locations coincide; relative angle is undefined")]
    DegenerateGeometry,
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("state is missing for node {0}")]
    MissingState(usize),
}

/// The closed set of node types.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum ActorCategory {
    Ego,
    Car,
    Bicycle,
    Pedestrian,
    TrafficLight,
    Object,
    Lane,
    Pavement,
    Shoulder,
    Road,
}

impl ActorCategory {
    pub const ALL: [ActorCategory; 10] = [
        ActorCategory::Ego,
        ActorCategory::Car,
        ActorCategory::Bicycle,
        ActorCategory::Pedestrian,
        ActorCategory::TrafficLight,
        ActorCategory::Object,
        ActorCategory::Lane,
        ActorCategory::Pavement,
        ActorCategory::Shoulder,
        ActorCategory::Road,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    /// Actors that move and carry a velocity.
    pub fn is_dynamic(self) -> bool {
        matches!(
            self,
            ActorCategory::Ego | ActorCategory::Car | ActorCategory::Bicycle | ActorCategory::Pedestrian
        )
    }

    /// Dynamic actors other than the ego vehicle.
    pub fn is_adversary(self) -> bool {
        self.is_dynamic() && self != ActorCategory::Ego
    }

    /// Road elements an actor can be contained in.
    pub fn is_containment(self) -> bool {
        matches!(
            self,
            ActorCategory::Lane | ActorCategory::Pavement | ActorCategory::Shoulder
        )
    }

    /// Categories whose self-edge carries state attributes.
    pub fn has_self_relation(self) -> bool {
        self.is_dynamic() || self == ActorCategory::TrafficLight
    }

    pub fn has_braking(self) -> bool {
        matches!(self, ActorCategory::Ego | ActorCategory::Car)
    }

    pub fn name(self) -> &'static str {
        match self {
            ActorCategory::Ego => "Ego",
            ActorCategory::Car => "Car",
            ActorCategory::Bicycle => "Bicycle",
            ActorCategory::Pedestrian => "Pedestrian",
            ActorCategory::TrafficLight => "TrafficLight",
            ActorCategory::Object => "Object",
            ActorCategory::Lane => "Lane",
            ActorCategory::Pavement => "Pavement",
            ActorCategory::Shoulder => "Shoulder",
            ActorCategory::Road => "Road",
        }
    }
}

/// Edge types. The two distance values and the four relative-position
/// values are the discretized forms of the continuous relations.
#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum RelationCategory {
    IsIn,
    SafeDistance,
    UnsafeDistance,
    InFrontOf,
    AtRearOf,
    ToLeftOf,
    ToRightOf,
    SelfState,
}

impl RelationCategory {
    pub const ALL: [RelationCategory; 8] = [
        RelationCategory::IsIn,
        RelationCategory::SafeDistance,
        RelationCategory::UnsafeDistance,
        RelationCategory::InFrontOf,
        RelationCategory::AtRearOf,
        RelationCategory::ToLeftOf,
        RelationCategory::ToRightOf,
        RelationCategory::SelfState,
    ];

    /// Every relation that may appear on a cross-edge.
    pub const CROSS: [RelationCategory; 7] = [
        RelationCategory::IsIn,
        RelationCategory::SafeDistance,
        RelationCategory::UnsafeDistance,
        RelationCategory::InFrontOf,
        RelationCategory::AtRearOf,
        RelationCategory::ToLeftOf,
        RelationCategory::ToRightOf,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn is_distance(self) -> bool {
        matches!(
            self,
            RelationCategory::SafeDistance | RelationCategory::UnsafeDistance
        )
    }

    pub fn is_position(self) -> bool {
        matches!(
            self,
            RelationCategory::InFrontOf
                | RelationCategory::AtRearOf
                | RelationCategory::ToLeftOf
                | RelationCategory::ToRightOf
        )
    }

    pub fn name(self) -> &'static str {
        match self {
            RelationCategory::IsIn => "IsIn",
            RelationCategory::SafeDistance => "SafeDistance",
            RelationCategory::UnsafeDistance => "UnsafeDistance",
            RelationCategory::InFrontOf => "InFrontOf",
            RelationCategory::AtRearOf => "AtRearOf",
            RelationCategory::ToLeftOf => "ToLeftOf",
            RelationCategory::ToRightOf => "ToRightOf",
            RelationCategory::SelfState => "SelfState",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum LightState {
    Red,
    Yellow,
    Green,
}

impl LightState {
    /// 0 for red, 1 for yellow, 2 for green.
    pub fn level(self) -> f64 {
        match self {
            LightState::Red => 0.0,
            LightState::Yellow => 1.0,
            LightState::Green => 2.0,
        }
    }
}

/// Kinematic and signal state of an actor in world coordinates.
///
/// Headings follow the compass convention used by the relative-angle
/// formula: 0 faces +y and π/2 faces +x, so an actor moving with speed `v`
/// at heading `θ` has velocity `(v sin θ, v cos θ)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct AgentState {
    pub location: (f64, f64),
    pub heading: f64,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub velocity: Option<(f64, f64)>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub braking: Option<bool>,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub light_state: Option<LightState>,
}

impl AgentState {
    /// A moving actor with a velocity aligned to its heading.
    pub fn moving(location: (f64, f64), heading: f64, speed: f64) -> Self {
        Self {
            location,
            heading,
            velocity: Some(heading_vector(heading, speed)),
            braking: None,
            light_state: None,
        }
    }

    pub fn stationary(location: (f64, f64), heading: f64) -> Self {
        Self {
            location,
            heading,
            velocity: None,
            braking: None,
            light_state: None,
        }
    }

    pub fn with_braking(mut self, braking: bool) -> Self {
        self.braking = Some(braking);
        self
    }

    pub fn with_light(mut self, light: LightState) -> Self {
        self.light_state = Some(light);
        self
    }

    pub fn speed(&self) -> f64 {
        self.velocity.map_or(0.0, |(vx, vy)| vx.hypot(vy))
    }
}

/// Velocity vector for a compass heading.
pub fn heading_vector(heading: f64, speed: f64) -> (f64, f64) {
    (speed * heading.sin(), speed * heading.cos())
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Node {
    pub id: usize,
    pub category: ActorCategory,
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub state: Option<AgentState>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Edge {
    pub head: usize,
    pub relation: RelationCategory,
    pub tail: usize,
}

impl Edge {
    pub fn new(head: usize, relation: RelationCategory, tail: usize) -> Self {
        Self {
            head,
            relation,
            tail,
        }
    }

    pub fn is_self(&self) -> bool {
        self.relation == RelationCategory::SelfState
    }

    /// Canonical ordering key: (head, tail, relation ordinal).
    pub fn sort_key(&self) -> (usize, usize, usize) {
        (self.head, self.tail, self.relation.ordinal())
    }
}

/// One frame's scene graph.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SceneGraph {
    #[serde(rename = "frame")]
    pub frame_index: usize,
    #[serde(rename = "corner_case")]
    pub is_corner_case: bool,
    pub nodes: Vec<Node>,
    pub edges: Vec<Edge>,
}

impl SceneGraph {
    pub fn node(&self, id: usize) -> Option<&Node> {
        self.nodes.get(id)
    }

    pub fn category(&self, id: usize) -> ActorCategory {
        self.nodes[id].category
    }

    pub fn ego(&self) -> Option<usize> {
        self.nodes
            .iter()
            .find(|n| n.category == ActorCategory::Ego)
            .map(|n| n.id)
    }

    pub fn cross_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| !e.is_self())
    }

    pub fn self_edges(&self) -> impl Iterator<Item = &Edge> {
        self.edges.iter().filter(|e| e.is_self())
    }

    pub fn has_edge(&self, edge: &Edge) -> bool {
        self.edges.contains(edge)
    }

    /// Sorts edges into the canonical (head, tail, relation) order.
    pub fn canonicalize(&mut self) {
        self.edges.sort_by_key(Edge::sort_key);
        self.edges.dedup();
    }

    pub fn to_json(&self) -> String {
        serde_json::to_string(self).expect("scene graph serializes")
    }

    pub fn from_json(s: &str) -> Result<Self, serde_json::Error> {
        serde_json::from_str(s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn tiny() -> SceneGraph {
        SceneGraph {
            frame_index: 3,
            is_corner_case: false,
            nodes: vec![
                Node {
                    id: 0,
                    category: ActorCategory::Ego,
                    state: Some(AgentState::moving((1.0, 2.0), 0.5, 3.0).with_braking(false)),
                },
                Node {
                    id: 1,
                    category: ActorCategory::Lane,
                    state: None,
                },
                Node {
                    id: 2,
                    category: ActorCategory::Road,
                    state: None,
                },
            ],
            edges: vec![
                Edge::new(0, RelationCategory::SelfState, 0),
                Edge::new(0, RelationCategory::IsIn, 1),
                Edge::new(1, RelationCategory::IsIn, 2),
            ],
        }
    }

    #[test]
    fn json_uses_exact_enum_names() {
        let json = tiny().to_json();
        assert!(json.contains("\"frame\":3"));
        assert!(json.contains("\"corner_case\":false"));
        assert!(json.contains("\"category\":\"Ego\""));
        assert!(json.contains("\"relation\":\"IsIn\""));
        assert!(json.contains("\"relation\":\"SelfState\""));
        let back = SceneGraph::from_json(&json).unwrap();
        assert_eq!(back, tiny());
    }

    #[test]
    fn unknown_fields_are_rejected() {
        let bad = r#"{"frame":0,"corner_case":false,"nodes":[],"edges":[],"extra":1}"#;
        assert!(SceneGraph::from_json(bad).is_err());
        let bad_edge = r#"{"frame":0,"corner_case":false,"nodes":[],
            "edges":[{"head":0,"relation":"IsIn","tail":1,"weight":2}]}"#;
        assert!(SceneGraph::from_json(bad_edge).is_err());
        let bad_category = r#"{"frame":0,"corner_case":false,
            "nodes":[{"id":0,"category":"Truck"}],"edges":[]}"#;
        assert!(SceneGraph::from_json(bad_category).is_err());
    }

    #[test]
    fn field_order_is_not_significant() {
        let a = r#"{"edges":[{"tail":0,"relation":"SelfState","head":0}],
            "nodes":[{"category":"Ego","id":0}],"corner_case":true,"frame":1}"#;
        let g = SceneGraph::from_json(a).unwrap();
        assert!(g.is_corner_case);
        assert_eq!(g.edges[0], Edge::new(0, RelationCategory::SelfState, 0));
    }

    #[test]
    fn heading_vector_follows_compass_convention() {
        let (vx, vy) = heading_vector(std::f64::consts::FRAC_PI_2, 20.0);
        assert!((vx - 20.0).abs() < 1e-12 && vy.abs() < 1e-12);
        let (vx, vy) = heading_vector(0.0, 1.0);
        assert!(vx.abs() < 1e-12 && (vy - 1.0).abs() < 1e-12);
    }
}
