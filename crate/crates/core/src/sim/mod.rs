//! Deterministic ball-on-tilting-tray simulation.
//!
//! The ball is a rolling sphere on an incline: tilt about the y axis drives it
//! along +x, tilt about the x axis drives it along -y. Tilt is rate
//! controlled and hard-clamped at `theta_max`. Integration is semi-implicit
//! Euler with a fixed substep.

mod layout;

use serde::{Deserialize, Serialize};
use thiserror::Error;

pub use layout::{default_layout, plan_waypoints, StartRegion, TrayLayout, Wall};

pub type Vec2 = [f64; 2];

#[derive(Debug, Error, PartialEq)]
pub enum SimError {
    #[error("invalid physics config: {0}")]
    InvalidConfig(String),
    #[error("invalid layout: {0}")]
    InvalidLayout(String),
    #[error("layout parse error: {0}")]
    LayoutParse(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PhysConfig {
    /// m/s²
    pub gravity: f64,
    /// Fraction of `g·sin(tilt)` that becomes linear acceleration (5/7 for a solid sphere).
    pub rolling_factor: f64,
    /// Viscous damping, 1/s.
    pub damping: f64,
    /// Normal restitution at walls, in [0, 1].
    pub restitution: f64,
    /// Integration substep, s.
    pub dt_sub: f64,
    /// Tilt limit per axis, rad.
    pub theta_max: f64,
    /// Tilt rate at full command, rad/s.
    pub omega_max: f64,
}

impl Default for PhysConfig {
    fn default() -> Self {
        Self {
            gravity: 9.81,
            rolling_factor: 5.0 / 7.0,
            damping: 0.3,
            restitution: 0.3,
            dt_sub: 0.005,
            theta_max: 0.2,
            omega_max: 0.5,
        }
    }
}

impl PhysConfig {
    pub fn validate(&self) -> Result<(), SimError> {
        let bad = |m: &str| Err(SimError::InvalidConfig(m.to_string()));
        if !(self.dt_sub > 0.0 && self.dt_sub.is_finite()) {
            return bad("dt_sub must be positive");
        }
        if !(0.0..=1.0).contains(&self.restitution) {
            return bad("restitution must lie in [0, 1]");
        }
        if !(self.rolling_factor > 0.0 && self.rolling_factor <= 1.0) {
            return bad("rolling_factor must lie in (0, 1]");
        }
        if !(self.theta_max > 0.0 && self.omega_max > 0.0) {
            return bad("theta_max and omega_max must be positive");
        }
        if !(self.gravity.is_finite() && self.damping >= 0.0) {
            return bad("gravity must be finite and damping non-negative");
        }
        Ok(())
    }
}

/// Continuous tray and ball configuration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct PhysState {
    /// Ball center in the tray frame, m.
    pub ball_pos: Vec2,
    /// m/s
    pub ball_vel: Vec2,
    /// Rotation about x and about y, rad.
    pub tray_rot: Vec2,
    /// s
    pub t_sim: f64,
}

impl PhysState {
    pub fn at_rest(pos: Vec2) -> Self {
        Self {
            ball_pos: pos,
            ball_vel: [0.0, 0.0],
            tray_rot: [0.0, 0.0],
            t_sim: 0.0,
        }
    }
}

/// Linear acceleration of the ball from gravity along the tilted tray.
pub fn ball_acceleration(tray_rot: Vec2, cfg: &PhysConfig) -> Vec2 {
    let kg = cfg.rolling_factor * cfg.gravity;
    [kg * tray_rot[1].sin(), -kg * tray_rot[0].sin()]
}

/// Advances the simulation by one substep.
pub fn step_physics(
    state: &PhysState,
    tilt_rates: Vec2,
    cfg: &PhysConfig,
    layout: &TrayLayout,
) -> PhysState {
    let dt = cfg.dt_sub;
    let mut rot = state.tray_rot;
    for i in 0..2 {
        rot[i] = (rot[i] + tilt_rates[i] * dt).clamp(-cfg.theta_max, cfg.theta_max);
    }
    let acc = ball_acceleration(rot, cfg);
    let mut vel = state.ball_vel;
    let mut pos = state.ball_pos;
    for i in 0..2 {
        vel[i] += (acc[i] - cfg.damping * vel[i]) * dt;
        pos[i] += vel[i] * dt;
    }
    let (pos, vel) = resolve_collisions(pos, vel, layout, cfg);
    PhysState {
        ball_pos: pos,
        ball_vel: vel,
        tray_rot: rot,
        t_sim: state.t_sim + dt,
    }
}

fn resolve_bounds(pos: &mut Vec2, vel: &mut Vec2, layout: &TrayLayout, e: f64) {
    let r = layout.ball_radius;
    let hi = [layout.width - r, layout.height - r];
    for i in 0..2 {
        if pos[i] < r {
            pos[i] = r;
            if vel[i] < 0.0 {
                vel[i] = -e * vel[i];
            }
        } else if pos[i] > hi[i] {
            pos[i] = hi[i];
            if vel[i] > 0.0 {
                vel[i] = -e * vel[i];
            }
        }
    }
}

/// Pushes a penetrating ball back to the surface it crossed and reflects the
/// normal velocity with restitution. The face is found by sweeping the last
/// substep of travel against each wall (grown by the ball radius); corners
/// resolve on x before y.
pub fn resolve_collisions(
    pos: Vec2,
    vel: Vec2,
    layout: &TrayLayout,
    cfg: &PhysConfig,
) -> (Vec2, Vec2) {
    let e = cfg.restitution;
    let mut pos = pos;
    let mut vel = vel;
    resolve_bounds(&mut pos, &mut vel, layout, e);

    // Two passes so a push off one wall cannot leave the ball inside another.
    for _ in 0..2 {
        let mut touched = false;
        for wall in layout.inflated_walls() {
            if !wall.contains_strict(pos) {
                continue;
            }
            let prev = [pos[0] - vel[0] * cfg.dt_sub, pos[1] - vel[1] * cfg.dt_sub];
            let (axis, to_min) = match wall.segment_entry(prev, pos) {
                Some((t, axis)) if t >= 0.0 => (axis, vel[axis] > 0.0),
                _ => {
                    let axis = shallowest_axis(&wall, pos);
                    (axis, pos[axis] - wall.min[axis] < wall.max[axis] - pos[axis])
                }
            };
            if to_min {
                pos[axis] = wall.min[axis];
                if vel[axis] > 0.0 {
                    vel[axis] = -e * vel[axis];
                }
            } else {
                pos[axis] = wall.max[axis];
                if vel[axis] < 0.0 {
                    vel[axis] = -e * vel[axis];
                }
            }
            touched = true;
        }
        if !touched {
            break;
        }
        resolve_bounds(&mut pos, &mut vel, layout, e);
    }
    (pos, vel)
}

fn shallowest_axis(wall: &Wall, p: Vec2) -> usize {
    let depth = |i: usize| (p[i] - wall.min[i]).min(wall.max[i] - p[i]);
    if depth(0) <= depth(1) {
        0
    } else {
        1
    }
}

/// Goal test on the ball center, boundary inclusive.
pub fn in_goal(pos: Vec2, layout: &TrayLayout) -> bool {
    let dx = pos[0] - layout.goal_center[0];
    let dy = pos[1] - layout.goal_center[1];
    dx.hypot(dy) <= layout.goal_radius
}
