//! Seeded synthetic scenarios: a run of regular frames ending in a
//! corner-case frame, generated from a handful of parameterized templates.
//!
//! Roads are straight along +x. Urban roads stack a pavement, forward
//! lanes, opposing lanes and a shoulder; motorways stack a hard shoulder
//! under forward lanes only. The ego starts at the origin of its lane.

use std::collections::BTreeMap;

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::extended::{label_candidates, ExtendedError, ExtendedGraph, Instance};
use crate::graph::frame::{build_scene_graph, Actor, FrameSnapshot, RoadLayout, Strip, StripKind};
use crate::graph::grammar::validate_grammar;
use crate::graph::{ActorCategory, AgentState, GraphError, LightState, RelationCategory, SceneGraph};

pub const FRAME_PERIOD: f64 = 0.5;
pub const LANE_WIDTH: f64 = 3.75;
pub const PAVEMENT_WIDTH: f64 = 2.5;
pub const MIN_FRAMES: usize = 4;
pub const MAX_FRAMES: usize = 10;
pub const DEFAULT_CORPUS_SIZE: usize = 600;

const MAX_ATTEMPTS: usize = 1000;

#[derive(Debug, Error)]
pub enum ScenarioError {
    #[error(transparent)]
    Graph(#[from] GraphError),
    #[error(transparent)]
    Extended(#[from] ExtendedError),
    #[error("scenario {id}: {reason}")]
    Invalid { id: u64, reason: String },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
pub enum TemplateId {
    OncomingCyclistCutIn,
    PedestrianCrossing,
    LeadVehicleBrake,
    LaneChangeConflict,
    MotorwayMerge,
    RedLightRunner,
}

impl TemplateId {
    pub const ALL: [TemplateId; 6] = [
        TemplateId::OncomingCyclistCutIn,
        TemplateId::PedestrianCrossing,
        TemplateId::LeadVehicleBrake,
        TemplateId::LaneChangeConflict,
        TemplateId::MotorwayMerge,
        TemplateId::RedLightRunner,
    ];

    pub fn ordinal(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            TemplateId::OncomingCyclistCutIn => "OncomingCyclistCutIn",
            TemplateId::PedestrianCrossing => "PedestrianCrossing",
            TemplateId::LeadVehicleBrake => "LeadVehicleBrake",
            TemplateId::LaneChangeConflict => "LaneChangeConflict",
            TemplateId::MotorwayMerge => "MotorwayMerge",
            TemplateId::RedLightRunner => "RedLightRunner",
        }
    }

    pub fn is_motorway(self) -> bool {
        matches!(self, TemplateId::LaneChangeConflict | TemplateId::MotorwayMerge)
    }
}

/// Sampling ranges for one template and the relations its corner-case
/// frame must show between the primary adversary and the ego.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ScenarioTemplate {
    pub id: TemplateId,
    pub lanes: (usize, usize),
    pub ego_speed: (f64, f64),
    pub adversary_speed: (f64, f64),
    /// Center-to-center longitudinal gap at the corner-case frame.
    pub final_gap: (f64, f64),
    pub adversary: ActorCategory,
    pub terminal_position: RelationCategory,
    /// Whether the adversary ends in the ego's strip.
    pub terminal_same_strip: bool,
}

impl ScenarioTemplate {
    pub fn of(id: TemplateId) -> Self {
        use ActorCategory as A;
        use RelationCategory as R;
        let t = |lanes, ego_speed, adversary_speed, final_gap, adversary, pos, same| Self {
            id,
            lanes,
            ego_speed,
            adversary_speed,
            final_gap,
            adversary,
            terminal_position: pos,
            terminal_same_strip: same,
        };
        match id {
            TemplateId::OncomingCyclistCutIn => {
                t((2, 4), (12.0, 22.0), (3.0, 7.0), (4.0, 8.0), A::Bicycle, R::InFrontOf, true)
            }
            TemplateId::PedestrianCrossing => {
                t((2, 4), (8.0, 16.0), (0.0, 1.8), (5.0, 9.0), A::Pedestrian, R::InFrontOf, true)
            }
            // Adversary speed is the lead's excess over the ego before it brakes.
            TemplateId::LeadVehicleBrake => {
                t((2, 4), (12.0, 25.0), (0.0, 2.0), (6.0, 9.0), A::Car, R::InFrontOf, true)
            }
            TemplateId::LaneChangeConflict => {
                t((2, 4), (15.0, 25.0), (8.0, 18.0), (6.0, 9.0), A::Car, R::InFrontOf, true)
            }
            // Gap is the longitudinal offset of the merging car from the ego.
            TemplateId::MotorwayMerge => {
                t((2, 4), (0.0, 0.0), (25.0, 30.0), (-2.5, 2.5), A::Car, R::ToLeftOf, false)
            }
            TemplateId::RedLightRunner => {
                t((2, 4), (10.0, 16.0), (0.0, 0.0), (5.0, 9.0), A::Car, R::InFrontOf, true)
            }
        }
    }
}

/// Speed limit used by the continuity check and the simulator clamps.
pub fn max_speed(category: ActorCategory) -> f64 {
    match category {
        ActorCategory::Ego | ActorCategory::Car => 30.0,
        _ => 15.0,
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Scenario {
    pub id: u64,
    /// Seed of this scenario's private generator.
    pub seed: u64,
    pub template: TemplateId,
    pub period: f64,
    /// Sampled template parameters.
    pub params: BTreeMap<String, f64>,
    /// `N + 1` frames; the last is the corner case.
    pub frames: Vec<FrameSnapshot>,
}

impl Scenario {
    /// Index `N` of the corner-case frame.
    pub fn n(&self) -> usize {
        self.frames.len() - 1
    }

    pub fn corner_frame(&self) -> &FrameSnapshot {
        &self.frames[self.n()]
    }

    pub fn road(&self) -> &RoadLayout {
        &self.frames[0].road
    }
}

/// Urban cross-section: pavement, forward lanes, opposing lanes, shoulder.
pub fn urban_road(n_lanes: usize) -> RoadLayout {
    let n_fwd = n_lanes.div_ceil(2);
    let mut strips = vec![Strip {
        kind: StripKind::Pavement,
        y_min: -PAVEMENT_WIDTH,
        y_max: 0.0,
        direction: 0.0,
    }];
    for i in 0..n_lanes {
        strips.push(Strip {
            kind: StripKind::Lane,
            y_min: i as f64 * LANE_WIDTH,
            y_max: (i + 1) as f64 * LANE_WIDTH,
            direction: if i < n_fwd { 1.0 } else { -1.0 },
        });
    }
    let top = n_lanes as f64 * LANE_WIDTH;
    strips.push(Strip {
        kind: StripKind::Shoulder,
        y_min: top,
        y_max: top + PAVEMENT_WIDTH,
        direction: 0.0,
    });
    RoadLayout { strips }
}

/// Motorway cross-section: hard shoulder then forward lanes.
pub fn motorway_road(n_lanes: usize) -> RoadLayout {
    let mut strips = vec![Strip {
        kind: StripKind::Shoulder,
        y_min: -LANE_WIDTH,
        y_max: 0.0,
        direction: 0.0,
    }];
    for i in 0..n_lanes {
        strips.push(Strip {
            kind: StripKind::Lane,
            y_min: i as f64 * LANE_WIDTH,
            y_max: (i + 1) as f64 * LANE_WIDTH,
            direction: 1.0,
        });
    }
    RoadLayout { strips }
}

fn forward_lanes(road: &RoadLayout) -> Vec<f64> {
    road.lanes()
        .filter(|(_, s)| s.direction > 0.0)
        .map(|(_, s)| s.center())
        .collect()
}

fn strip_center(road: &RoadLayout, kind: StripKind) -> f64 {
    road.strips
        .iter()
        .find(|s| s.kind == kind)
        .expect("layout has the strip")
        .center()
}

/// Per-frame positions of one actor; velocities are derived from them.
struct Track {
    category: ActorCategory,
    pos: Vec<(f64, f64)>,
    rest_heading: f64,
    braking: Option<Vec<bool>>,
    light: Option<LightState>,
}

struct Sample {
    road: RoadLayout,
    tracks: Vec<Track>,
    params: BTreeMap<String, f64>,
}

fn uniform(rng: &mut ChaCha8Rng, r: (f64, f64)) -> f64 {
    if r.1 > r.0 {
        rng.gen_range(r.0..=r.1)
    } else {
        r.0
    }
}

fn jitter(rng: &mut ChaCha8Rng, w: f64) -> f64 {
    rng.gen_range(-w..=w)
}

/// Lateral position that holds `y0` until frame `n - k`, then moves
/// linearly to `y1` at frame `n`.
fn cut_in_y(t: usize, n: usize, k: usize, y0: f64, y1: f64) -> f64 {
    if t + k <= n {
        y0
    } else {
        y0 + (y1 - y0) * (t + k - n) as f64 / k as f64
    }
}

fn ego_track(n: usize, speed: f64, y: f64, braking: bool) -> Track {
    Track {
        category: ActorCategory::Ego,
        pos: (0..=n).map(|t| (speed * t as f64 * FRAME_PERIOD, y)).collect(),
        rest_heading: std::f64::consts::FRAC_PI_2,
        braking: Some(vec![braking; n + 1]),
        light: None,
    }
}

fn sample(tpl: &ScenarioTemplate, n: usize, rng: &mut ChaCha8Rng) -> Option<Sample> {
    use std::f64::consts::{FRAC_PI_2, PI};
    let dt = FRAME_PERIOD;
    let nf = n as f64;
    let n_lanes = rng.gen_range(tpl.lanes.0..=tpl.lanes.1);
    let ve = uniform(rng, tpl.ego_speed);
    let va = uniform(rng, tpl.adversary_speed);
    let gap = uniform(rng, tpl.final_gap);
    let mut params = BTreeMap::from([
        ("n_frames".to_string(), nf),
        ("n_lanes".to_string(), n_lanes as f64),
        ("ego_speed".to_string(), ve),
        ("adversary_speed".to_string(), va),
        ("final_gap".to_string(), gap),
    ]);
    let x_ego_end = ve * nf * dt;

    let (road, ego_y, adversary) = match tpl.id {
        TemplateId::OncomingCyclistCutIn => {
            let road = urban_road(n_lanes);
            let fwd = forward_lanes(&road);
            let ego_y = fwd[fwd.len() - 1];
            let opp_y = ego_y + LANE_WIDTH;
            let k = rng.gen_range(1..=2usize).min(n - 1);
            let y_end = ego_y + jitter(rng, 0.4);
            let x_end = x_ego_end + gap;
            params.insert("cut_frames".into(), k as f64);
            let pos = (0..=n)
                .map(|t| (x_end + va * (n - t) as f64 * dt, cut_in_y(t, n, k, opp_y, y_end)))
                .collect();
            let track = Track {
                category: tpl.adversary,
                pos,
                rest_heading: -FRAC_PI_2,
                braking: None,
                light: None,
            };
            (road, ego_y, track)
        }
        TemplateId::PedestrianCrossing => {
            let road = urban_road(n_lanes);
            let ego_y = forward_lanes(&road)[0];
            let pav_y = strip_center(&road, StripKind::Pavement) + jitter(rng, 0.3);
            let dir = if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            let k = rng.gen_range(2..=3usize).min(n - 1);
            let y_end = ego_y + jitter(rng, 0.6);
            let x_end = x_ego_end + gap;
            params.insert("cut_frames".into(), k as f64);
            params.insert("walk_direction".into(), dir);
            let pos = (0..=n)
                .map(|t| (x_end - dir * va * (n - t) as f64 * dt, cut_in_y(t, n, k, pav_y, y_end)))
                .collect();
            let track = Track {
                category: tpl.adversary,
                pos,
                rest_heading: dir * FRAC_PI_2,
                braking: None,
                light: None,
            };
            (road, ego_y, track)
        }
        TemplateId::LeadVehicleBrake => {
            let road = if rng.gen_bool(0.5) {
                motorway_road(n_lanes)
            } else {
                urban_road(n_lanes)
            };
            let fwd = forward_lanes(&road);
            let ego_y = fwd[rng.gen_range(0..fwd.len())];
            let k = rng.gen_range(n.div_ceil(2).max(2)..=n);
            let tau = k as f64 * dt;
            let stop = crate::graph::geometry::stopping_distance(ve);
            let g0 = rng.gen_range((gap + 8.0)..=(stop + 10.0).max(gap + 9.0));
            let vl = ve + va;
            let g_brake = g0 + va * (n - k) as f64 * dt;
            let decel = 2.0 * (g_brake + va * tau - gap) / (tau * tau);
            if !(0.5..=8.0).contains(&decel) || vl - decel * tau < 0.5 {
                return None;
            }
            params.insert("brake_frames".into(), k as f64);
            params.insert("deceleration".into(), decel);
            params.insert("initial_gap".into(), g0);
            let x_end = x_ego_end + gap;
            let x_b = x_end - (vl * tau - 0.5 * decel * tau * tau);
            let lead_y = ego_y + jitter(rng, 0.3);
            let pos = (0..=n)
                .map(|t| {
                    let s = (t as f64 - (n - k) as f64) * dt;
                    let x = if s <= 0.0 {
                        x_b + vl * s
                    } else {
                        x_b + vl * s - 0.5 * decel * s * s
                    };
                    (x, lead_y)
                })
                .collect();
            let braking = (0..=n).map(|t| if t == 0 { k == n } else { t + k > n }).collect();
            let track = Track {
                category: tpl.adversary,
                pos,
                rest_heading: FRAC_PI_2,
                braking: Some(braking),
                light: None,
            };
            (road, ego_y, track)
        }
        TemplateId::LaneChangeConflict => {
            let road = motorway_road(n_lanes);
            let fwd = forward_lanes(&road);
            let lane = rng.gen_range(0..fwd.len());
            let ego_y = fwd[lane];
            let other = if lane == 0 {
                1
            } else if lane + 1 == fwd.len() || rng.gen_bool(0.5) {
                lane - 1
            } else {
                lane + 1
            };
            let vc = rng.gen_range(8.0..=(ve - 3.0).min(18.0));
            params.insert("adversary_speed".into(), vc);
            let k = rng.gen_range(2..=3usize).min(n - 1);
            params.insert("cut_frames".into(), k as f64);
            let y_end = ego_y + jitter(rng, 0.3);
            let x_end = x_ego_end + gap;
            let pos = (0..=n)
                .map(|t| (x_end - vc * (n - t) as f64 * dt, cut_in_y(t, n, k, fwd[other], y_end)))
                .collect();
            let track = Track {
                category: tpl.adversary,
                pos,
                rest_heading: FRAC_PI_2,
                braking: Some(vec![false; n + 1]),
                light: None,
            };
            (road, ego_y, track)
        }
        TemplateId::MotorwayMerge => {
            let road = motorway_road(n_lanes);
            let ego_y = strip_center(&road, StripKind::Shoulder);
            let car_y = forward_lanes(&road)[0] + jitter(rng, 0.3);
            let pos = (0..=n).map(|t| (gap - va * (n - t) as f64 * dt, car_y)).collect();
            let track = Track {
                category: tpl.adversary,
                pos,
                rest_heading: FRAC_PI_2,
                braking: Some(vec![false; n + 1]),
                light: None,
            };
            (road, ego_y, track)
        }
        TemplateId::RedLightRunner => {
            let road = urban_road(n_lanes);
            let fwd = forward_lanes(&road);
            let ego_y = fwd[rng.gen_range(0..fwd.len())];
            let shoulder_y = strip_center(&road, StripKind::Shoulder);
            let k = rng.gen_range(2..=4usize).min(n - 1);
            params.insert("cut_frames".into(), k as f64);
            let y_end = ego_y + jitter(rng, 0.3);
            let x_j = x_ego_end + gap;
            let pos = (0..=n).map(|t| (x_j, cut_in_y(t, n, k, shoulder_y, y_end))).collect();
            let braking = (0..=n).map(|t| t + k <= n).collect();
            let track = Track {
                category: tpl.adversary,
                pos,
                rest_heading: PI,
                braking: Some(braking),
                light: None,
            };
            (road, ego_y, track)
        }
    };

    let stationary_ego = ve == 0.0;
    let mut tracks = vec![ego_track(n, ve, ego_y, stationary_ego), adversary];
    if tpl.id == TemplateId::RedLightRunner {
        let light = if rng.gen_bool(0.7) {
            LightState::Green
        } else {
            LightState::Yellow
        };
        let x = tracks[1].pos[0].0 - 3.0;
        let y = strip_center(&road, StripKind::Pavement);
        tracks.push(Track {
            category: ActorCategory::TrafficLight,
            pos: vec![(x, y); n + 1],
            rest_heading: -std::f64::consts::FRAC_PI_2,
            braking: None,
            light: Some(light),
        });
    }
    Some(Sample { road, tracks, params })
}

fn assemble(sample: Sample, n: usize) -> Vec<FrameSnapshot> {
    let dt = FRAME_PERIOD;
    (0..=n)
        .map(|t| {
            let actors = sample
                .tracks
                .iter()
                .map(|tr| {
                    let location = tr.pos[t];
                    let state = if tr.category.is_dynamic() {
                        let (a, b) = if t == 0 { (0, 1) } else { (t - 1, t) };
                        let v = (
                            (tr.pos[b].0 - tr.pos[a].0) / dt,
                            (tr.pos[b].1 - tr.pos[a].1) / dt,
                        );
                        let heading = if v.0.hypot(v.1) > 1e-9 {
                            v.0.atan2(v.1)
                        } else {
                            tr.rest_heading
                        };
                        AgentState {
                            location,
                            heading,
                            velocity: Some(v),
                            braking: tr.braking.as_ref().map(|b| b[t]),
                            light_state: None,
                        }
                    } else {
                        AgentState {
                            location,
                            heading: tr.rest_heading,
                            velocity: None,
                            braking: None,
                            light_state: tr.light,
                        }
                    };
                    Actor {
                        category: tr.category,
                        state,
                    }
                })
                .collect();
            FrameSnapshot {
                frame_index: t,
                is_corner_case: t == n,
                actors,
                road: sample.road.clone(),
            }
        })
        .collect()
}

/// Checks the grammar on every frame, kinematic continuity between frames,
/// and the template's corner-case relations.
pub fn validate_scenario(s: &Scenario) -> Result<(), ScenarioError> {
    let fail = |reason: String| ScenarioError::Invalid { id: s.id, reason };
    if s.frames.len() < 2 {
        return Err(fail("needs at least two frames".into()));
    }
    let graphs = s
        .frames
        .iter()
        .map(build_scene_graph)
        .collect::<Result<Vec<_>, _>>()?;
    for (t, g) in graphs.iter().enumerate() {
        if let Some(v) = validate_grammar(g).first() {
            return Err(fail(format!("frame {t}: {}", v.rule())));
        }
        if g.is_corner_case != (t == s.n()) {
            return Err(fail(format!("frame {t}: wrong corner-case flag")));
        }
    }
    for w in s.frames.windows(2) {
        if w[0].actors.len() != w[1].actors.len() {
            return Err(fail("actor set changes between frames".into()));
        }
        for (a, b) in w[0].actors.iter().zip(&w[1].actors) {
            let (p, q) = (a.state.location, b.state.location);
            let step = (q.0 - p.0).hypot(q.1 - p.1);
            if a.category != b.category || step > max_speed(a.category) * s.period + 1e-9 {
                return Err(fail(format!(
                    "{} moves {step:.2} m between frames {} and {}",
                    a.category.name(),
                    w[0].frame_index,
                    w[1].frame_index
                )));
            }
        }
    }
    check_corner_rule(s, &graphs[s.n()]).map_err(fail)
}

fn check_corner_rule(s: &Scenario, g: &SceneGraph) -> Result<(), String> {
    use RelationCategory as R;
    let tpl = ScenarioTemplate::of(s.template);
    let adversaries: Vec<usize> = g
        .nodes
        .iter()
        .filter(|n| n.category.is_adversary())
        .map(|n| n.id)
        .collect();
    if adversaries.is_empty() {
        return Err("no adversary".into());
    }
    for &a in &adversaries {
        if !g.has_edge(&crate::graph::Edge::new(a, R::UnsafeDistance, 0)) {
            return Err(format!("adversary {a} is not at an unsafe distance"));
        }
    }
    let primary = adversaries[0];
    if g.category(primary) != tpl.adversary {
        return Err("primary adversary has the wrong category".into());
    }
    if !g.has_edge(&crate::graph::Edge::new(primary, tpl.terminal_position, 0)) {
        return Err(format!(
            "primary adversary is not {}",
            tpl.terminal_position.name()
        ));
    }
    let strip_of = |id: usize| {
        g.edges
            .iter()
            .find(|e| e.head == id && e.relation == R::IsIn)
            .map(|e| e.tail)
    };
    if tpl.terminal_same_strip && strip_of(primary) != strip_of(0) {
        return Err("primary adversary does not end in the ego strip".into());
    }
    Ok(())
}

/// Seed of the private generator for `(template, seed, index)`.
pub fn scenario_seed(template: TemplateId, seed: u64, index: u64) -> u64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    rng.set_stream(((template.ordinal() as u64 + 1) << 40) | index);
    rng.next_u64()
}

/// Generates one scenario from its private seed, resampling until it
/// validates.
pub fn generate_one(template: TemplateId, id: u64, seed: u64) -> Scenario {
    let tpl = ScenarioTemplate::of(template);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    for _ in 0..MAX_ATTEMPTS {
        let n = rng.gen_range(MIN_FRAMES..=MAX_FRAMES);
        let Some(sample) = self::sample(&tpl, n, &mut rng) else {
            continue;
        };
        let params = sample.params.clone();
        let s = Scenario {
            id,
            seed,
            template,
            period: FRAME_PERIOD,
            params,
            frames: assemble(sample, n),
        };
        match validate_scenario(&s) {
            Ok(()) => return s,
            Err(e) => log::debug!("resampling: {e}"),
        }
    }
    panic!("{} produced no valid scenario in {MAX_ATTEMPTS} attempts", template.name())
}

/// `count` scenarios of one template, ids `0..count`.
pub fn generate(template: TemplateId, seed: u64, count: usize) -> Vec<Scenario> {
    (0..count as u64)
        .map(|i| generate_one(template, i, scenario_seed(template, seed, i)))
        .collect()
}

/// A mixed corpus: scenario `i` uses template `i mod 6` and has id `i`.
pub fn generate_corpus(seed: u64, count: usize) -> Vec<Scenario> {
    use rayon::prelude::*;
    let k = TemplateId::ALL.len();
    (0..count)
        .into_par_iter()
        .map(|i| {
            let template = TemplateId::ALL[i % k];
            let index = (i / k) as u64;
            generate_one(template, i as u64, scenario_seed(template, seed, index))
        })
        .collect()
}

/// One labelled instance per regular frame, all targeting the corner case.
pub fn to_instances(s: &Scenario) -> Result<Vec<Instance>, ScenarioError> {
    let truth = build_scene_graph(s.corner_frame())?;
    s.frames[..s.n()]
        .iter()
        .map(|f| {
            let ext = ExtendedGraph::new(build_scene_graph(f)?, s.n());
            Ok(Instance {
                scenario_id: s.id,
                ext: label_candidates(&ext, &truth)?,
            })
        })
        .collect()
}

pub fn corpus_instances(scenarios: &[Scenario]) -> Result<Vec<Instance>, ScenarioError> {
    let mut out = Vec::new();
    for s in scenarios {
        out.extend(to_instances(s)?);
    }
    Ok(out)
}

/// Fraction of positive labels over all candidates.
pub fn positive_fraction(instances: &[Instance]) -> f64 {
    let (mut pos, mut total) = (0usize, 0usize);
    for inst in instances {
        for c in &inst.ext.candidates {
            total += 1;
            pos += usize::from(c.label == Some(1));
        }
    }
    if total == 0 {
        0.0
    } else {
        pos as f64 / total as f64
    }
}

/// Reproducibility record written next to a generated corpus.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CorpusManifest {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub n_scenarios: usize,
    pub n_instances: usize,
    pub positive_fraction: f64,
    pub templates: BTreeMap<String, usize>,
    /// `(id, template, private seed)` of every scenario.
    pub scenarios: Vec<(u64, TemplateId, u64)>,
}

impl CorpusManifest {
    pub fn new(config_hash: &str, seed: u64, scenarios: &[Scenario], instances: &[Instance]) -> Self {
        let mut templates = BTreeMap::new();
        for s in scenarios {
            *templates.entry(s.template.name().to_string()).or_insert(0) += 1;
        }
        Self {
            schema_version: 1,
            config_hash: config_hash.to_string(),
            seed,
            n_scenarios: scenarios.len(),
            n_instances: instances.len(),
            positive_fraction: positive_fraction(instances),
            templates,
            scenarios: scenarios.iter().map(|s| (s.id, s.template, s.seed)).collect(),
        }
    }
}

/// Frames and kinematics for the simulator.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScenarioFile {
    pub schema_version: u32,
    pub config_hash: String,
    pub seed: u64,
    pub scenarios: Vec<Scenario>,
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::graph::Edge;
    use RelationCategory as R;

    fn strip_kind(g: &SceneGraph, actor: usize) -> ActorCategory {
        let e = g
            .edges
            .iter()
            .find(|e| e.head == actor && e.relation == R::IsIn)
            .unwrap();
        g.category(e.tail)
    }

    #[test]
    fn layouts_are_contiguous() {
        for n in 2..=4 {
            for road in [urban_road(n), motorway_road(n)] {
                for w in road.strips.windows(2) {
                    assert_eq!(w[0].y_max, w[1].y_min);
                }
            }
        }
        let r = urban_road(3);
        let dirs: Vec<f64> = r.lanes().map(|(_, s)| s.direction).collect();
        assert_eq!(dirs, vec![1.0, 1.0, -1.0]);
    }

    #[test]
    fn cyclist_pairing_structure() {
        let s = &generate(TemplateId::OncomingCyclistCutIn, 7, 1)[0];
        let g0 = build_scene_graph(&s.frames[0]).unwrap();
        let gn = build_scene_graph(s.corner_frame()).unwrap();
        let bike = g0.nodes.iter().find(|n| n.category == ActorCategory::Bicycle).unwrap().id;

        assert!(g0.has_edge(&Edge::new(bike, R::InFrontOf, 0)));
        assert!(g0.has_edge(&Edge::new(bike, R::SafeDistance, 0)));
        let lane_of = |g: &SceneGraph, a| g.edges.iter().find(|e| e.head == a && e.relation == R::IsIn).unwrap().tail;
        let opp = lane_of(&g0, bike);
        let strip = s.road().strips[opp - s.frames[0].actors.len()];
        assert!(strip.direction < 0.0);
        assert_ne!(opp, lane_of(&g0, 0));

        assert!(gn.has_edge(&Edge::new(bike, R::InFrontOf, 0)));
        assert!(gn.has_edge(&Edge::new(bike, R::UnsafeDistance, 0)));
        assert_eq!(lane_of(&gn, bike), lane_of(&gn, 0));
    }

    #[test]
    fn generation_is_deterministic() {
        for t in TemplateId::ALL {
            let a = serde_json::to_string(&generate(t, 3, 2)).unwrap();
            let b = serde_json::to_string(&generate(t, 3, 2)).unwrap();
            assert_eq!(a, b);
        }
        assert_ne!(generate(TemplateId::MotorwayMerge, 3, 1), generate(TemplateId::MotorwayMerge, 4, 1));
    }

    #[test]
    fn corpus_matches_per_template_generation() {
        let corpus = generate_corpus(5, 12);
        let per = generate(TemplateId::LeadVehicleBrake, 5, 2);
        assert_eq!(corpus[2].frames, per[0].frames);
        assert_eq!(corpus[8].frames, per[1].frames);
        assert_eq!(corpus[8].id, 8);
    }

    #[test]
    fn full_corpus_passes_grammar_on_every_frame() {
        let corpus = generate_corpus(11, 120);
        let mut frames = 0;
        for s in &corpus {
            for f in &s.frames {
                let g = build_scene_graph(f).unwrap();
                assert!(validate_grammar(&g).is_empty(), "scenario {} frame {}", s.id, f.frame_index);
                frames += 1;
            }
            assert!((MIN_FRAMES..=MAX_FRAMES).contains(&s.n()));
            assert_eq!(s.period, FRAME_PERIOD);
        }
        assert!(frames >= 120 * 5);
    }

    #[test]
    fn templates_balanced() {
        let corpus = generate_corpus(1, 60);
        let m = CorpusManifest::new("h", 1, &corpus, &[]);
        assert!(m.templates.values().all(|&c| c == 10));
        let corpus = generate_corpus(1, 61);
        let m = CorpusManifest::new("h", 1, &corpus, &[]);
        let (lo, hi) = (m.templates.values().min().unwrap(), m.templates.values().max().unwrap());
        assert!(hi - lo <= 1);
    }

    #[test]
    fn instance_count_matches_frame_count() {
        let corpus = generate_corpus(2, 50);
        let inst = corpus_instances(&corpus).unwrap();
        let regular_frames: usize = corpus
            .iter()
            .map(|s| s.frames.iter().filter(|f| !f.is_corner_case).count())
            .sum();
        assert_eq!(inst.len(), regular_frames);
        for s in &corpus {
            let ours: Vec<_> = inst.iter().filter(|i| i.scenario_id == s.id).collect();
            assert_eq!(ours.len(), s.n());
            let truth: Vec<Vec<Edge>> = ours
                .iter()
                .map(|i| i.ext.candidates.iter().filter(|c| c.label == Some(1)).map(|c| c.edge()).collect())
                .collect();
            assert!(truth.windows(2).all(|w| w[0] == w[1]));
        }
    }

    #[test]
    fn instances_have_both_labels_and_sane_positive_rate() {
        let corpus = generate_corpus(42, 60);
        let inst = corpus_instances(&corpus).unwrap();
        for i in &inst {
            let labels = i.ext.labels().unwrap();
            assert!(labels.contains(&1.0) && labels.contains(&0.0));
            assert_eq!(i.ext.target_frame, corpus[i.scenario_id as usize].n());
        }
        let f = positive_fraction(&inst);
        assert!((0.05..=0.6).contains(&f), "positive fraction {f}");
    }

    #[test]
    fn identity_instance_positives_equal_base_edges() {
        let mut s = generate(TemplateId::LaneChangeConflict, 9, 1).remove(0);
        let n = s.n();
        let mut last = s.frames[n].clone();
        last.frame_index = n - 1;
        last.is_corner_case = false;
        s.frames[n - 1] = last;
        let inst = to_instances(&s).unwrap();
        let fin = &inst[n - 1].ext;
        let mut pos: Vec<Edge> = fin.candidates.iter().filter(|c| c.label == Some(1)).map(|c| c.edge()).collect();
        let mut base: Vec<Edge> = fin.base.cross_edges().copied().collect();
        pos.sort_by_key(Edge::sort_key);
        base.sort_by_key(Edge::sort_key);
        assert_eq!(pos, base);
    }

    #[test]
    fn merge_starts_behind_and_ends_beside() {
        let s = &generate(TemplateId::MotorwayMerge, 4, 1)[0];
        let g0 = build_scene_graph(&s.frames[0]).unwrap();
        let gn = build_scene_graph(s.corner_frame()).unwrap();
        assert!(g0.has_edge(&Edge::new(1, R::AtRearOf, 0)));
        assert!(gn.has_edge(&Edge::new(1, R::ToLeftOf, 0)));
        assert_eq!(strip_kind(&gn, 0), ActorCategory::Shoulder);
        assert_eq!(s.frames[0].ego().unwrap().state.speed(), 0.0);
    }

    #[test]
    fn motion_is_continuous() {
        for s in generate_corpus(8, 30) {
            for w in s.frames.windows(2) {
                for (a, b) in w[0].actors.iter().zip(&w[1].actors) {
                    let (p, q) = (a.state.location, b.state.location);
                    assert!((q.0 - p.0).hypot(q.1 - p.1) <= max_speed(a.category) * FRAME_PERIOD + 1e-9);
                }
            }
        }
    }

    #[test]
    fn corrupted_corner_frame_rejected() {
        let mut s = generate(TemplateId::PedestrianCrossing, 1, 1).remove(0);
        let n = s.n();
        s.frames[n].actors[1].state.location.0 += 100.0;
        assert!(validate_scenario(&s).is_err());
    }
}
