//! A 2D kinematic simulator for realized corner cases.
//!
//! The ego keeps its lane and only controls its speed. Adversaries follow
//! their planned trajectories open loop. Each episode ends in exactly one
//! outcome, with precedence Collision > NearMiss > UnsafeManeuver >
//! NoCollision.

pub mod body;
pub mod realize;

use std::fmt::Write as _;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::graph::{ActorCategory, GraphError};
pub use body::{clearance, iou, AgentBody};
pub use realize::{fidelity, realize, ExecutableScenario, PlannedAgent, RealizeParams};

pub const DT: f64 = 0.05;
pub const HORIZON: f64 = 30.0;
pub const COLLISION_IOU: f64 = 0.1;
pub const NEAR_MISS: f64 = 1.5;
pub const STANDSTILL: f64 = 0.5;
/// Cruise speed for an ego that starts at rest.
pub const REST_TARGET_SPEED: f64 = 12.0;

#[derive(Debug, Error)]
pub enum SimError {
    #[error("infeasible scenario: {0}")]
    Infeasible(String),
    #[error(transparent)]
    Graph(#[from] GraphError),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ProfileKind {
    Basic,
    Normal,
    Cautious,
    Aggressive,
}

impl ProfileKind {
    pub const ALL: [ProfileKind; 4] = [
        ProfileKind::Basic,
        ProfileKind::Normal,
        ProfileKind::Cautious,
        ProfileKind::Aggressive,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ProfileKind::Basic => "Basic",
            ProfileKind::Normal => "Normal",
            ProfileKind::Cautious => "Cautious",
            ProfileKind::Aggressive => "Aggressive",
        }
    }
}

/// Longitudinal controller parameters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ControllerProfile {
    pub kind: ProfileKind,
    /// Desired time gap to a leader; unused by `Basic`.
    pub time_gap: f64,
    pub max_accel: f64,
    pub max_brake: f64,
    /// Adversaries closer than this count as hazards.
    pub hazard_range: f64,
    /// Cruise-speed multiplier while a hazard is in or entering the lane.
    pub hazard_factor: f64,
    /// Whether a stopped ego waits for hazards to clear before starting.
    pub start_gate: bool,
    /// Whether only moving adversaries close the start gate.
    pub gate_moving_only: bool,
    /// A stopped ego also waits for adversaries that would reach it
    /// within this many seconds.
    pub gap_acceptance: f64,
    pub min_gap: f64,
}

impl ControllerProfile {
    pub fn new(kind: ProfileKind) -> Self {
        let base = Self {
            kind,
            time_gap: 1.5,
            max_accel: 2.0,
            max_brake: 8.0,
            hazard_range: 30.0,
            hazard_factor: 0.8,
            start_gate: true,
            gate_moving_only: false,
            gap_acceptance: 3.0,
            min_gap: 2.0,
        };
        match kind {
            ProfileKind::Basic => Self {
                time_gap: 0.0,
                hazard_factor: 1.0,
                start_gate: false,
                gap_acceptance: 0.0,
                ..base
            },
            ProfileKind::Normal => base,
            ProfileKind::Cautious => Self {
                time_gap: 2.5,
                max_accel: 1.5,
                hazard_range: 50.0,
                hazard_factor: 0.6,
                gap_acceptance: 6.0,
                ..base
            },
            ProfileKind::Aggressive => Self {
                time_gap: 0.8,
                max_accel: 3.0,
                hazard_range: 15.0,
                hazard_factor: 1.0,
                gate_moving_only: true,
                gap_acceptance: 1.5,
                ..base
            },
        }
    }
}

/// Distance at which `Basic` brakes hard for an obstacle in its lane.
pub const EMERGENCY_RANGE: f64 = 5.0;
const CORRIDOR_MARGIN: f64 = 0.5;
const LOOKAHEAD: f64 = 1.5;
const COMFORT_BRAKE: f64 = 2.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ScrOutcome {
    Collision,
    NoCollision,
    NearMiss,
    UnsafeManeuver,
}

impl ScrOutcome {
    /// Column order of the SCR table.
    pub const ALL: [ScrOutcome; 4] = [
        ScrOutcome::Collision,
        ScrOutcome::NoCollision,
        ScrOutcome::NearMiss,
        ScrOutcome::UnsafeManeuver,
    ];

    pub fn name(self) -> &'static str {
        match self {
            ScrOutcome::Collision => "Collision",
            ScrOutcome::NoCollision => "NoCollision",
            ScrOutcome::NearMiss => "NearMiss",
            ScrOutcome::UnsafeManeuver => "UnsafeManeuver",
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceRow {
    pub t: f64,
    pub agent_id: usize,
    pub x: f64,
    pub y: f64,
    pub theta: f64,
    pub v: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeResult {
    pub outcome: ScrOutcome,
    pub min_clearance: f64,
    pub max_iou: f64,
    pub duration: f64,
    #[serde(skip)]
    pub trace: Vec<TraceRow>,
}

pub fn trace_csv(rows: &[TraceRow]) -> String {
    let mut s = String::from("t,agent_id,x,y,theta,v\n");
    for r in rows {
        let _ = writeln!(s, "{:.2},{},{},{},{},{}", r.t, r.agent_id, r.x, r.y, r.theta, r.v);
    }
    s
}

struct Perceived {
    /// Bumper gap along the ego heading, negative when behind.
    gap: f64,
    lateral: f64,
    lateral_speed: f64,
    along_speed: f64,
    half_width: f64,
    clearance: f64,
    /// Rate at which the center distance shrinks, ignoring ego motion.
    closing_speed: f64,
    moving: bool,
}

fn perceive(ego: &AgentBody, other: &AgentBody, velocity: (f64, f64)) -> Perceived {
    let (f, l) = (ego.forward(), ego.left());
    let d = (other.x - ego.x, other.y - ego.y);
    let s = d.0 * f.0 + d.1 * f.1;
    Perceived {
        gap: s - 0.5 * ego.length - other.half_extent(f),
        lateral: d.0 * l.0 + d.1 * l.1,
        lateral_speed: velocity.0 * l.0 + velocity.1 * l.1,
        along_speed: velocity.0 * f.0 + velocity.1 * f.1,
        half_width: other.half_extent(l),
        clearance: clearance(ego, other),
        closing_speed: -(d.0 * velocity.0 + d.1 * velocity.1) / d.0.hypot(d.1).max(1e-9),
        moving: velocity.0.hypot(velocity.1) > STANDSTILL,
    }
}

/// Whether an adversary is close, or closing fast enough, to keep a
/// stopped ego from setting off.
fn threatens(p: &ControllerProfile, o: &Perceived) -> bool {
    o.clearance <= p.hazard_range || (o.closing_speed > STANDSTILL && o.clearance / o.closing_speed <= p.gap_acceptance)
}

fn acceleration(p: &ControllerProfile, ego: &AgentBody, cruise: f64, seen: &[Perceived]) -> f64 {
    let corridor = 0.5 * ego.width + CORRIDOR_MARGIN;
    let in_lane = |o: &Perceived, lat: f64| lat.abs() - o.half_width <= corridor;
    let ahead = |o: &&Perceived| o.gap > -0.5 * ego.length;
    let leader = seen
        .iter()
        .filter(ahead)
        .filter(|o| in_lane(o, o.lateral))
        .min_by(|a, b| a.gap.total_cmp(&b.gap));
    let v = ego.speed;

    if p.kind == ProfileKind::Basic {
        if leader.is_some_and(|o| o.gap < EMERGENCY_RANGE) {
            return -p.max_brake;
        }
        return (2.0 * (cruise - v)).clamp(-p.max_brake, p.max_accel);
    }

    if p.start_gate
        && v < STANDSTILL
        && seen
            .iter()
            .any(|o| threatens(p, o) && (o.moving || !p.gate_moving_only))
    {
        return -p.max_brake;
    }
    let hazard = seen.iter().filter(ahead).any(|o| {
        o.gap <= p.hazard_range
            && (in_lane(o, o.lateral) || in_lane(o, o.lateral + o.lateral_speed * LOOKAHEAD))
    });
    let target = if hazard { cruise * p.hazard_factor } else { cruise }.max(0.1);
    let mut a = p.max_accel * (1.0 - (v / target).powi(4));
    if let Some(o) = leader {
        let dv = v - o.along_speed;
        let s_star = p.min_gap + (v * p.time_gap + v * dv / (2.0 * (p.max_accel * COMFORT_BRAKE).sqrt())).max(0.0);
        a -= p.max_accel * (s_star / o.gap.max(0.1)).powi(2);
    }
    a.clamp(-p.max_brake, p.max_accel)
}

/// Simulates one episode with a fixed step.
pub fn run_episode(scn: &ExecutableScenario, profile: &ControllerProfile, dt: f64, horizon: f64, record: bool) -> EpisodeResult {
    let cruise = if scn.ego_speed < STANDSTILL {
        REST_TARGET_SPEED
    } else {
        scn.ego_speed
    };
    let mut ego = AgentBody::new(ActorCategory::Ego, scn.ego_start, scn.ego_heading, scn.ego_speed);
    let active: Vec<&PlannedAgent> = scn
        .agents
        .iter()
        .filter(|a| a.category.is_dynamic() || a.category == ActorCategory::Object)
        .collect();
    let steps = (horizon / dt).round() as usize;
    let mut min_clearance = f64::INFINITY;
    let mut max_iou: f64 = 0.0;
    let mut always_still = true;
    let mut hazard_at_start = false;
    let mut collided = false;
    let mut trace = Vec::new();
    let mut t = 0.0;

    for step in 0..=steps {
        t = step as f64 * dt;
        let mut bodies = Vec::with_capacity(active.len());
        let mut seen = Vec::with_capacity(active.len());
        for a in &active {
            let (pos, heading, v) = a.state_at(t, scn.arrival_time, scn.hold_after_arrival);
            let b = AgentBody::new(a.category, pos, heading, v.0.hypot(v.1));
            seen.push(perceive(&ego, &b, v));
            bodies.push(b);
        }
        if record {
            trace.push(TraceRow {
                t,
                agent_id: 0,
                x: ego.x,
                y: ego.y,
                theta: ego.heading,
                v: ego.speed,
            });
            for (a, b) in active.iter().zip(&bodies) {
                trace.push(TraceRow {
                    t,
                    agent_id: a.node,
                    x: b.x,
                    y: b.y,
                    theta: b.heading,
                    v: b.speed,
                });
            }
        }
        if ego.speed >= STANDSTILL {
            always_still = false;
        }
        for (o, b) in seen.iter().zip(&bodies) {
            min_clearance = min_clearance.min(o.clearance);
            max_iou = max_iou.max(iou(&ego, b));
        }
        if step == 0 {
            hazard_at_start = seen.iter().any(|o| threatens(profile, o));
        }
        if max_iou > COLLISION_IOU {
            collided = true;
            break;
        }
        if step == steps {
            break;
        }
        let a = acceleration(profile, &ego, cruise, &seen);
        let v_next = (ego.speed + a * dt).max(0.0);
        let travel = 0.5 * (ego.speed + v_next) * dt;
        let f = ego.forward();
        ego.x += travel * f.0;
        ego.y += travel * f.1;
        ego.speed = v_next;
    }

    let outcome = if collided {
        ScrOutcome::Collision
    } else if min_clearance <= NEAR_MISS + 1e-9 {
        ScrOutcome::NearMiss
    } else if always_still && hazard_at_start {
        ScrOutcome::UnsafeManeuver
    } else {
        ScrOutcome::NoCollision
    };
    EpisodeResult {
        outcome,
        min_clearance,
        max_iou,
        duration: t,
        trace,
    }
}

/// Outcome counts and percentages for one profile.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrRow {
    pub profile: ProfileKind,
    pub episodes: usize,
    pub counts: [usize; 4],
    /// Percentages in `ScrOutcome::ALL` order.
    pub percent: [f64; 4],
}

impl ScrRow {
    pub fn from_outcomes(profile: ProfileKind, outcomes: &[ScrOutcome]) -> Self {
        let mut counts = [0usize; 4];
        for o in outcomes {
            counts[ScrOutcome::ALL.iter().position(|x| x == o).expect("known outcome")] += 1;
        }
        let n = outcomes.len().max(1) as f64;
        Self {
            profile,
            episodes: outcomes.len(),
            counts,
            percent: counts.map(|c| 100.0 * c as f64 / n),
        }
    }

    pub fn pct(&self, o: ScrOutcome) -> f64 {
        self.percent[ScrOutcome::ALL.iter().position(|x| *x == o).expect("known outcome")]
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ScrTable {
    pub rows: Vec<ScrRow>,
    /// Episodes that could not be realized, reported rather than dropped.
    pub infeasible: usize,
}

pub fn scr_report(outcomes: &[(ProfileKind, Vec<ScrOutcome>)], infeasible: usize) -> ScrTable {
    ScrTable {
        rows: outcomes.iter().map(|(p, o)| ScrRow::from_outcomes(*p, o)).collect(),
        infeasible,
    }
}

impl ScrTable {
    pub fn row(&self, p: ProfileKind) -> Option<&ScrRow> {
        self.rows.iter().find(|r| r.profile == p)
    }

    pub fn to_text(&self) -> String {
        let mut s = format!(
            "{:<12}{:>10}{:>12}{:>14}{:>12}{:>16}\n",
            "Profile", "Episodes", "Collision", "NoCollision", "NearMiss", "UnsafeManeuver"
        );
        for r in &self.rows {
            let _ = writeln!(
                s,
                "{:<12}{:>10}{:>11.2}%{:>13.2}%{:>11.2}%{:>15.2}%",
                r.profile.name(),
                r.episodes,
                r.percent[0],
                r.percent[1],
                r.percent[2],
                r.percent[3]
            );
        }
        let _ = writeln!(s, "infeasible episodes: {}", self.infeasible);
        s
    }
}

/// Runs every scenario under every profile in parallel.
pub fn run_batch(scenarios: &[ExecutableScenario], profiles: &[ControllerProfile]) -> Vec<(ProfileKind, Vec<ScrOutcome>)> {
    use rayon::prelude::*;
    profiles
        .iter()
        .map(|p| {
            let outcomes = scenarios
                .par_iter()
                .map(|s| run_episode(s, p, DT, HORIZON, false).outcome)
                .collect();
            (p.kind, outcomes)
        })
        .collect()
}
