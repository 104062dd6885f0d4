//! Discretization of continuous actor geometry into relation categories.

use std::f64::consts::{FRAC_PI_4, PI};

use super::{AgentState, GraphError, RelationCategory};

/// Locations closer than this are treated as coincident.
pub const COINCIDENT_EPS: f64 = 1e-9;

/// Highway Code typical stopping distances, speeds converted from 20-70 mph
/// to m/s, distances in meters.
pub const STOPPING_TABLE: [(f64, f64); 6] = [
    (8.9, 12.0),
    (13.4, 23.0),
    (17.9, 36.0),
    (22.4, 53.0),
    (26.8, 73.0),
    (31.3, 96.0),
];

/// Wraps an angle to `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let two_pi = 2.0 * PI;
    let mut w = a - two_pi * ((a + PI) / two_pi).floor();
    if w <= -PI {
        w += two_pi;
    }
    if w > PI {
        w -= two_pi;
    }
    w
}

/// Bearing of the head actor as seen from the tail actor's heading.
///
/// `atan2(x_head - x_tail, y_head - y_tail) - θ_tail`, wrapped to
/// `(-π, π]`. Zero means straight ahead of the tail actor, `π/2` means
/// directly to its right.
pub fn relative_angle(head_state: &AgentState, tail_state: &AgentState) -> Result<f64, GraphError> {
    let (x1, y1) = tail_state.location;
    let (x2, y2) = head_state.location;
    let (dx, dy) = (x2 - x1, y2 - y1);
    if dx.hypot(dy) < COINCIDENT_EPS {
        return Err(GraphError::DegenerateGeometry);
    }
    Ok(wrap_angle(dx.atan2(dy) - tail_state.heading))
}

/// Bins a relative angle into one of the four quadrant relations.
///
/// `(-π/4, π/4]` is in front, `(π/4, 3π/4]` to the right,
/// `(-3π/4, -π/4]` to the left, and everything else at the rear.
pub fn discretize_relative_position(delta_rot: f64) -> RelationCategory {
    let d = wrap_angle(delta_rot);
    if d > -FRAC_PI_4 && d <= FRAC_PI_4 {
        RelationCategory::InFrontOf
    } else if d > FRAC_PI_4 && d <= 3.0 * FRAC_PI_4 {
        RelationCategory::ToRightOf
    } else if d > -3.0 * FRAC_PI_4 && d <= -FRAC_PI_4 {
        RelationCategory::ToLeftOf
    } else {
        RelationCategory::AtRearOf
    }
}

/// Typical stopping distance at `speed` m/s, interpolated from
/// [`STOPPING_TABLE`]. Clamped to the first entry below the table and
/// extrapolated along the last segment above it.
pub fn stopping_distance(speed: f64) -> f64 {
    let (s0, d0) = STOPPING_TABLE[0];
    if speed <= s0 {
        return d0;
    }
    for w in STOPPING_TABLE.windows(2) {
        let ((sa, da), (sb, db)) = (w[0], w[1]);
        if speed <= sb {
            return da + (db - da) * (speed - sa) / (sb - sa);
        }
    }
    let n = STOPPING_TABLE.len();
    let ((sa, da), (sb, db)) = (STOPPING_TABLE[n - 2], STOPPING_TABLE[n - 1]);
    db + (db - da) / (sb - sa) * (speed - sb)
}

/// Safe iff the separation exceeds the stopping distance at `tail_speed`.
pub fn discretize_distance(separation: f64, tail_speed: f64) -> RelationCategory {
    if separation > stopping_distance(tail_speed) {
        RelationCategory::SafeDistance
    } else {
        RelationCategory::UnsafeDistance
    }
}
