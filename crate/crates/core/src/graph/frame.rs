//! World snapshots and scene-graph extraction.
//!
//! Roads are straight and run along the world x axis. A road is an ordered
//! stack of strips (lanes, pavements, shoulders), each covering a band of
//! lateral `y` values.

use serde::{Deserialize, Serialize};

use super::geometry::{discretize_distance, discretize_relative_position, relative_angle};
use super::{ActorCategory, AgentState, Edge, GraphError, Node, RelationCategory, SceneGraph};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum StripKind {
    Lane,
    Pavement,
    Shoulder,
}

impl StripKind {
    pub fn category(self) -> ActorCategory {
        match self {
            StripKind::Lane => ActorCategory::Lane,
            StripKind::Pavement => ActorCategory::Pavement,
            StripKind::Shoulder => ActorCategory::Shoulder,
        }
    }
}

/// A band of the road between two lateral offsets.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Strip {
    pub kind: StripKind,
    pub y_min: f64,
    pub y_max: f64,
    /// +1 when traffic flows towards +x, -1 towards -x.
    pub direction: f64,
}

impl Strip {
    pub fn center(&self) -> f64 {
        0.5 * (self.y_min + self.y_max)
    }

    pub fn width(&self) -> f64 {
        self.y_max - self.y_min
    }

    /// Compass heading of traffic in this strip.
    pub fn heading(&self) -> f64 {
        if self.direction >= 0.0 {
            std::f64::consts::FRAC_PI_2
        } else {
            -std::f64::consts::FRAC_PI_2
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RoadLayout {
    /// Sorted by increasing `y_min`, contiguous.
    pub strips: Vec<Strip>,
}

impl RoadLayout {
    /// Index of the strip containing lateral offset `y`. Bands are
    /// half-open `[y_min, y_max)` except the last, which is closed.
    pub fn strip_at(&self, y: f64) -> Option<usize> {
        let last = self.strips.len().checked_sub(1)?;
        self.strips.iter().enumerate().position(|(i, s)| {
            y >= s.y_min && (y < s.y_max || (i == last && y <= s.y_max))
        })
    }

    pub fn lanes(&self) -> impl Iterator<Item = (usize, &Strip)> {
        self.strips
            .iter()
            .enumerate()
            .filter(|(_, s)| s.kind == StripKind::Lane)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Actor {
    pub category: ActorCategory,
    pub state: AgentState,
}

/// Ground-truth world state at one instant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct FrameSnapshot {
    pub frame_index: usize,
    pub is_corner_case: bool,
    /// Exactly one actor must be the ego vehicle.
    pub actors: Vec<Actor>,
    pub road: RoadLayout,
}

impl FrameSnapshot {
    pub fn ego(&self) -> Option<&Actor> {
        self.actors
            .iter()
            .find(|a| a.category == ActorCategory::Ego)
    }

    /// Actors in graph node order: the ego first, then the rest as listed.
    pub fn ordered_actors(&self) -> Vec<&Actor> {
        let mut v: Vec<&Actor> = self
            .actors
            .iter()
            .filter(|a| a.category == ActorCategory::Ego)
            .collect();
        v.extend(
            self.actors
                .iter()
                .filter(|a| a.category != ActorCategory::Ego),
        );
        v
    }
}

/// Builds the scene graph for a frame.
///
/// Node order is ego, remaining actors in listed order, road strips in
/// lateral order, then the road. Edges come out sorted by
/// `(head, tail, relation)`.
pub fn build_scene_graph(frame: &FrameSnapshot) -> Result<SceneGraph, GraphError> {
    let egos = frame
        .actors
        .iter()
        .filter(|a| a.category == ActorCategory::Ego)
        .count();
    if egos != 1 {
        return Err(GraphError::InvalidFrame(format!(
            "expected exactly one ego, found {egos}"
        )));
    }
    if frame.road.strips.is_empty() {
        return Err(GraphError::InvalidFrame("road has no strips".into()));
    }
    let actors = frame.ordered_actors();
    let strip_base = actors.len();
    let road_id = strip_base + frame.road.strips.len();

    let mut nodes = Vec::with_capacity(road_id + 1);
    for (id, a) in actors.iter().enumerate() {
        if a.category.is_containment() || a.category == ActorCategory::Road {
            return Err(GraphError::InvalidFrame(format!(
                "{} listed as an actor",
                a.category.name()
            )));
        }
        nodes.push(Node {
            id,
            category: a.category,
            state: Some(a.state),
        });
    }
    for (k, s) in frame.road.strips.iter().enumerate() {
        nodes.push(Node {
            id: strip_base + k,
            category: s.kind.category(),
            state: None,
        });
    }
    nodes.push(Node {
        id: road_id,
        category: ActorCategory::Road,
        state: None,
    });

    let mut edges = Vec::new();
    let ego = actors[0].state;
    for (id, a) in actors.iter().enumerate() {
        if a.category.has_self_relation() {
            edges.push(Edge::new(id, RelationCategory::SelfState, id));
        }
        let strip = frame.road.strip_at(a.state.location.1).ok_or_else(|| {
            GraphError::InvalidFrame(format!(
                "{} at {:?} lies in no road element",
                a.category.name(),
                a.state.location
            ))
        })?;
        edges.push(Edge::new(id, RelationCategory::IsIn, strip_base + strip));

        if a.category.is_adversary() {
            let rel = relative_angle(&a.state, &ego)?;
            edges.push(Edge::new(id, discretize_relative_position(rel), 0));
            let sep = separation(&a.state, &ego);
            edges.push(Edge::new(id, discretize_distance(sep, ego.speed()), 0));
        } else if a.category == ActorCategory::Object {
            let sep = separation(&a.state, &ego);
            edges.push(Edge::new(0, discretize_distance(sep, ego.speed()), id));
        }
    }
    for k in 0..frame.road.strips.len() {
        edges.push(Edge::new(strip_base + k, RelationCategory::IsIn, road_id));
    }

    let mut g = SceneGraph {
        frame_index: frame.frame_index,
        is_corner_case: frame.is_corner_case,
        nodes,
        edges,
    };
    g.canonicalize();
    Ok(g)
}

pub fn separation(a: &AgentState, b: &AgentState) -> f64 {
    let (dx, dy) = (a.location.0 - b.location.0, a.location.1 - b.location.1);
    dx.hypot(dy)
}
