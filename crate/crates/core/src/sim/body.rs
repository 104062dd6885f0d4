//! Oriented boxes, intersection-over-union and boundary clearance.

use serde::{Deserialize, Serialize};

use crate::graph::ActorCategory;

/// Length and width in meters.
pub fn body_dims(category: ActorCategory) -> (f64, f64) {
    match category {
        ActorCategory::Ego | ActorCategory::Car => (4.5, 2.0),
        ActorCategory::Bicycle => (1.8, 0.6),
        ActorCategory::Pedestrian => (0.6, 0.6),
        _ => (1.0, 1.0),
    }
}

/// A rectangle posed in the world. `heading` uses the compass convention
/// of the scene graphs: 0 faces +y, π/2 faces +x.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct AgentBody {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    pub speed: f64,
    pub length: f64,
    pub width: f64,
}

impl AgentBody {
    pub fn new(category: ActorCategory, (x, y): (f64, f64), heading: f64, speed: f64) -> Self {
        let (length, width) = body_dims(category);
        Self {
            x,
            y,
            heading,
            speed,
            length,
            width,
        }
    }

    pub fn forward(&self) -> (f64, f64) {
        (self.heading.sin(), self.heading.cos())
    }

    pub fn left(&self) -> (f64, f64) {
        (-self.heading.cos(), self.heading.sin())
    }

    /// Corners in counter-clockwise order.
    pub fn corners(&self) -> [(f64, f64); 4] {
        let (f, l) = (self.forward(), self.left());
        let (hl, hw) = (0.5 * self.length, 0.5 * self.width);
        let at = |a: f64, b: f64| (self.x + a * f.0 + b * l.0, self.y + a * f.1 + b * l.1);
        [at(hl, hw), at(-hl, hw), at(-hl, -hw), at(hl, -hw)]
    }

    pub fn area(&self) -> f64 {
        self.length * self.width
    }

    /// Half extent of the box projected on the unit axis `u`.
    pub fn half_extent(&self, u: (f64, f64)) -> f64 {
        let (f, l) = (self.forward(), self.left());
        0.5 * self.length * (f.0 * u.0 + f.1 * u.1).abs() + 0.5 * self.width * (l.0 * u.0 + l.1 * u.1).abs()
    }
}

fn cross(o: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    (a.0 - o.0) * (b.1 - o.1) - (a.1 - o.1) * (b.0 - o.0)
}

/// Shoelace area of a simple polygon, positive when counter-clockwise.
pub fn polygon_area(p: &[(f64, f64)]) -> f64 {
    let n = p.len();
    (0..n)
        .map(|i| {
            let (a, b) = (p[i], p[(i + 1) % n]);
            a.0 * b.1 - b.0 * a.1
        })
        .sum::<f64>()
        * 0.5
}

/// Intersection of `subject` with the convex counter-clockwise `clip`.
pub fn clip_polygon(subject: &[(f64, f64)], clip: &[(f64, f64)]) -> Vec<(f64, f64)> {
    let mut out = subject.to_vec();
    for i in 0..clip.len() {
        if out.is_empty() {
            break;
        }
        let (a, b) = (clip[i], clip[(i + 1) % clip.len()]);
        let input = std::mem::take(&mut out);
        for j in 0..input.len() {
            let (p, q) = (input[j], input[(j + 1) % input.len()]);
            let (cp, cq) = (cross(a, b, p), cross(a, b, q));
            if cp >= 0.0 {
                out.push(p);
            }
            if (cp >= 0.0) != (cq >= 0.0) {
                let s = cp / (cp - cq);
                out.push((p.0 + s * (q.0 - p.0), p.1 + s * (q.1 - p.1)));
            }
        }
    }
    out
}

pub fn intersection_area(a: &AgentBody, b: &AgentBody) -> f64 {
    let p = clip_polygon(&a.corners(), &b.corners());
    if p.len() < 3 {
        0.0
    } else {
        polygon_area(&p).abs()
    }
}

pub fn iou(a: &AgentBody, b: &AgentBody) -> f64 {
    let inter = intersection_area(a, b);
    let union = a.area() + b.area() - inter;
    if union <= 0.0 {
        0.0
    } else {
        (inter / union).clamp(0.0, 1.0)
    }
}

fn point_segment(p: (f64, f64), a: (f64, f64), b: (f64, f64)) -> f64 {
    let (dx, dy) = (b.0 - a.0, b.1 - a.1);
    let len2 = dx * dx + dy * dy;
    let s = if len2 == 0.0 {
        0.0
    } else {
        (((p.0 - a.0) * dx + (p.1 - a.1) * dy) / len2).clamp(0.0, 1.0)
    };
    (p.0 - a.0 - s * dx).hypot(p.1 - a.1 - s * dy)
}

fn inside(p: (f64, f64), poly: &[(f64, f64)]) -> bool {
    (0..poly.len()).all(|i| cross(poly[i], poly[(i + 1) % poly.len()], p) >= 0.0)
}

/// Boundary-to-boundary distance; zero when the boxes touch or overlap.
pub fn clearance(a: &AgentBody, b: &AgentBody) -> f64 {
    let (pa, pb) = (a.corners(), b.corners());
    if pa.iter().any(|&p| inside(p, &pb)) || pb.iter().any(|&p| inside(p, &pa)) {
        return 0.0;
    }
    if intersection_area(a, b) > 0.0 {
        return 0.0;
    }
    let mut best = f64::INFINITY;
    for (p, q) in [(&pa, &pb), (&pb, &pa)] {
        for &v in p.iter() {
            for i in 0..4 {
                best = best.min(point_segment(v, q[i], q[(i + 1) % 4]));
            }
        }
    }
    best
}
