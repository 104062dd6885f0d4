//! Turning a (regular, predicted) graph pair into timed trajectories.
//!
//! Every adversary whose relations change is sent in a straight line from
//! its regular position to a target that satisfies the predicted relations
//! against the ego's nominal position at a common arrival time `T`. The
//! ego is assumed to hold its regular speed and lane when `T` is chosen.

use std::collections::BTreeSet;

use serde::{Deserialize, Serialize};

use super::body::{body_dims, clearance, AgentBody};
use super::SimError;
use crate::graph::frame::{build_scene_graph, Actor, FrameSnapshot, RoadLayout};
use crate::graph::geometry::{discretize_distance, discretize_relative_position, relative_angle, stopping_distance};
use crate::graph::{ActorCategory, AgentState, Edge, LightState, RelationCategory, SceneGraph};
use crate::scenario::max_speed;

/// Tunables of the target placement and arrival-time search.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RealizeParams {
    /// Bumper-to-bumper gap for an unsafe-distance target.
    pub unsafe_gap: f64,
    /// Smallest center distance for a safe-distance target.
    pub safe_gap: f64,
    pub t_min: f64,
    pub t_max: f64,
    pub t_step: f64,
    /// Longitudinal search half-width and step for target offsets.
    pub offset_range: f64,
    pub offset_step: f64,
}

impl Default for RealizeParams {
    fn default() -> Self {
        Self {
            unsafe_gap: 1.5,
            safe_gap: 10.0,
            t_min: 0.5,
            t_max: 20.0,
            t_step: 0.05,
            offset_range: 150.0,
            offset_step: 0.05,
        }
    }
}

/// One non-ego actor of an executable scenario.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PlannedAgent {
    /// Node id in both graphs.
    pub node: usize,
    pub category: ActorCategory,
    pub start: (f64, f64),
    pub heading: f64,
    pub velocity: (f64, f64),
    pub light: Option<LightState>,
    /// Present when the predicted relations differ from the regular ones.
    pub target: Option<(f64, f64)>,
}

impl PlannedAgent {
    pub fn changed(&self) -> bool {
        self.target.is_some()
    }

    /// Pose and velocity at time `t` of a scenario arriving at `arrival`.
    pub fn state_at(&self, t: f64, arrival: f64, hold: bool) -> ((f64, f64), f64, (f64, f64)) {
        let drift = |p: (f64, f64), s: f64| (p.0 + self.velocity.0 * s, p.1 + self.velocity.1 * s);
        let Some(target) = self.target else {
            return (drift(self.start, t), self.heading, self.velocity);
        };
        if t < arrival {
            let v = ((target.0 - self.start.0) / arrival, (target.1 - self.start.1) / arrival);
            let heading = heading_of(v).unwrap_or(self.heading);
            ((self.start.0 + v.0 * t, self.start.1 + v.1 * t), heading, v)
        } else if hold {
            (target, self.heading, (0.0, 0.0))
        } else {
            (drift(target, t - arrival), self.heading, self.velocity)
        }
    }

    pub fn path_speed(&self, arrival: f64) -> f64 {
        self.target.map_or_else(
            || self.velocity.0.hypot(self.velocity.1),
            |p| (p.0 - self.start.0).hypot(p.1 - self.start.1) / arrival,
        )
    }
}

fn heading_of(v: (f64, f64)) -> Option<f64> {
    (v.0.hypot(v.1) > 1e-9).then(|| v.0.atan2(v.1))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ExecutableScenario {
    pub scenario_id: u64,
    pub road: RoadLayout,
    pub ego_start: (f64, f64),
    pub ego_heading: f64,
    pub ego_speed: f64,
    pub arrival_time: f64,
    /// Changed adversaries stop at their targets instead of resuming their
    /// regular motion; set when the ego starts at rest.
    pub hold_after_arrival: bool,
    pub agents: Vec<PlannedAgent>,
}

impl ExecutableScenario {
    pub fn ego_nominal(&self, t: f64) -> (f64, f64) {
        let (sx, sy) = (self.ego_heading.sin(), self.ego_heading.cos());
        (
            self.ego_start.0 + self.ego_speed * sx * t,
            self.ego_start.1 + self.ego_speed * sy * t,
        )
    }

    pub fn n_changed(&self) -> usize {
        self.agents.iter().filter(|a| a.changed()).count()
    }

    /// World snapshot at `t` with the ego at the given state.
    pub fn frame_at(&self, t: f64, ego_pos: (f64, f64), ego_speed: f64) -> FrameSnapshot {
        let mut actors = vec![Actor {
            category: ActorCategory::Ego,
            state: AgentState {
                location: ego_pos,
                heading: self.ego_heading,
                velocity: Some(crate::graph::heading_vector(self.ego_heading, ego_speed)),
                braking: Some(false),
                light_state: None,
            },
        }];
        for a in &self.agents {
            let (location, heading, v) = a.state_at(t, self.arrival_time, self.hold_after_arrival);
            actors.push(Actor {
                category: a.category,
                state: AgentState {
                    location,
                    heading,
                    velocity: a.category.is_dynamic().then_some(v),
                    braking: a.category.has_braking().then_some(false),
                    light_state: a.light,
                },
            });
        }
        FrameSnapshot {
            frame_index: 0,
            is_corner_case: false,
            actors,
            road: self.road.clone(),
        }
    }

    /// Graph of the planned positions at the arrival time with the ego at
    /// its nominal position.
    pub fn terminal_graph(&self) -> Result<SceneGraph, SimError> {
        let t = self.arrival_time;
        Ok(build_scene_graph(&self.frame_at(t, self.ego_nominal(t), self.ego_speed))?)
    }
}

/// Cross edges leaving `node`, ignoring braking and other self state.
fn out_edges(g: &SceneGraph, node: usize) -> BTreeSet<(usize, usize, usize)> {
    g.cross_edges()
        .filter(|e| e.head == node)
        .map(Edge::sort_key)
        .collect()
}

fn relation_to_ego(g: &SceneGraph, node: usize, pick: fn(RelationCategory) -> bool) -> Option<RelationCategory> {
    g.cross_edges()
        .find(|e| e.head == node && e.tail == 0 && pick(e.relation))
        .map(|e| e.relation)
}

/// Share of changed adversaries whose terminal relations equal the
/// predicted ones.
pub fn fidelity(scn: &ExecutableScenario, predicted: &SceneGraph) -> Result<(usize, usize), SimError> {
    let g = scn.terminal_graph()?;
    let mut hits = 0;
    let mut total = 0;
    for a in scn.agents.iter().filter(|a| a.changed()) {
        total += 1;
        hits += usize::from(out_edges(&g, a.node) == out_edges(predicted, a.node));
    }
    Ok((hits, total))
}

/// Builds an executable scenario for `predicted`, starting from `regular`.
pub fn realize(
    regular: &SceneGraph,
    predicted: &SceneGraph,
    road: &RoadLayout,
    params: &RealizeParams,
) -> Result<ExecutableScenario, SimError> {
    let infeasible = |reason: String| SimError::Infeasible(reason);
    if regular.nodes.len() != predicted.nodes.len()
        || regular.nodes.iter().zip(&predicted.nodes).any(|(a, b)| a.category != b.category)
    {
        return Err(infeasible("graphs do not share a node set".into()));
    }
    let ego_node = regular.ego().ok_or_else(|| infeasible("no ego".into()))?;
    if ego_node != 0 {
        return Err(infeasible("ego must be node 0".into()));
    }
    let ego = regular.nodes[0].state.ok_or_else(|| infeasible("ego has no state".into()))?;
    let ego_speed = ego.speed();
    let strip_base = regular
        .nodes
        .iter()
        .position(|n| n.category.is_containment())
        .ok_or_else(|| infeasible("graph has no road strips".into()))?;
    if regular.nodes.len() - strip_base != road.strips.len() + 1 {
        return Err(infeasible("road layout does not match the graph".into()));
    }

    let mut agents = Vec::new();
    // (agent index, lateral target, longitudinal offset from the ego)
    let mut moves = Vec::new();
    for node in &regular.nodes[1..strip_base] {
        let s = node.state.ok_or_else(|| infeasible(format!("node {} has no state", node.id)))?;
        let agent = PlannedAgent {
            node: node.id,
            category: node.category,
            start: s.location,
            heading: s.heading,
            velocity: s.velocity.unwrap_or((0.0, 0.0)),
            light: s.light_state,
            target: None,
        };
        if node.category.is_adversary() && out_edges(regular, node.id) != out_edges(predicted, node.id) {
            let strip = predicted
                .cross_edges()
                .find(|e| e.head == node.id && e.relation == RelationCategory::IsIn)
                .map(|e| e.tail)
                .ok_or_else(|| infeasible(format!("node {} has no predicted strip", node.id)))?;
            let pos = relation_to_ego(predicted, node.id, RelationCategory::is_position)
                .ok_or_else(|| infeasible(format!("node {} has no predicted position", node.id)))?;
            let dist = relation_to_ego(predicted, node.id, RelationCategory::is_distance)
                .ok_or_else(|| infeasible(format!("node {} has no predicted distance", node.id)))?;
            let y = road.strips[strip - strip_base].center();
            let dx = place(&ego, node.category, y, pos, dist, params)
                .ok_or_else(|| infeasible(format!("no placement for node {} as {}/{}", node.id, pos.name(), dist.name())))?;
            moves.push((agents.len(), y, dx));
        }
        agents.push(agent);
    }

    let mut scn = ExecutableScenario {
        scenario_id: 0,
        road: road.clone(),
        ego_start: ego.location,
        ego_heading: ego.heading,
        ego_speed,
        arrival_time: 0.0,
        hold_after_arrival: ego_speed < 0.5,
        agents,
    };
    if moves.is_empty() {
        scn.arrival_time = params.t_min;
        return Ok(scn);
    }

    let steps = ((params.t_max - params.t_min) / params.t_step).round() as usize;
    let mut best: Option<(f64, f64)> = None;
    for i in 0..=steps {
        let t = params.t_min + i as f64 * params.t_step;
        let ego_t = scn.ego_nominal(t);
        let mut cost = 0.0;
        let mut ok = true;
        for &(k, y, dx) in &moves {
            let a = &scn.agents[k];
            let target = (ego_t.0 + dx, y);
            let v = (target.0 - a.start.0).hypot(target.1 - a.start.1) / t;
            if v > max_speed(a.category) {
                ok = false;
                break;
            }
            let v_reg = a.velocity.0.hypot(a.velocity.1);
            cost += (v - v_reg) * (v - v_reg);
        }
        if ok && best.is_none_or(|(c, _)| cost < c) {
            best = Some((cost, t));
        }
    }
    let (_, t) = best.ok_or_else(|| infeasible("required speed exceeds the clamp at every arrival time".into()))?;
    scn.arrival_time = t;
    let ego_t = scn.ego_nominal(t);
    for &(k, y, dx) in &moves {
        scn.agents[k].target = Some((ego_t.0 + dx, y));
    }
    Ok(scn)
}

/// Longitudinal offset from the ego that realizes `pos` and `dist` at
/// lateral position `y`, closest to the nominal gap for `dist`.
fn place(
    ego: &AgentState,
    category: ActorCategory,
    y: f64,
    pos: RelationCategory,
    dist: RelationCategory,
    params: &RealizeParams,
) -> Option<f64> {
    let (le, _) = body_dims(ActorCategory::Ego);
    let (la, _) = body_dims(category);
    let speed = ego.speed();
    let wanted = match dist {
        RelationCategory::UnsafeDistance => 0.5 * (le + la) + params.unsafe_gap,
        _ => params.safe_gap.max(1.1 * stopping_distance(speed) + 1.0),
    };
    let ego_body = AgentBody::new(ActorCategory::Ego, (0.0, ego.location.1), ego.heading, speed);
    let lat = y - ego.location.1;
    let n = (params.offset_range / params.offset_step).round() as i64;
    let mut best: Option<(f64, f64)> = None;
    for i in -n..=n {
        let dx = i as f64 * params.offset_step;
        let sep = dx.hypot(lat);
        let cost = (sep - wanted).abs();
        if best.is_some_and(|(c, _)| cost >= c) {
            continue;
        }
        let head = AgentState::stationary((ego.location.0 + dx, y), ego.heading);
        let Ok(angle) = relative_angle(&head, ego) else {
            continue;
        };
        if discretize_relative_position(angle) != pos || discretize_distance(sep, speed) != dist {
            continue;
        }
        let body = AgentBody::new(category, (dx, y), ego.heading, 0.0);
        if clearance(&ego_body, &body) <= 0.0 {
            continue;
        }
        best = Some((cost, dx));
    }
    best.map(|(_, dx)| dx)
}
