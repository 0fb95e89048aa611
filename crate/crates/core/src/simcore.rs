//! Planar vehicle kinematics and trajectory cost functions.
//!
//! Vehicles follow a unicycle model: longitudinal acceleration changes the
//! speed, a turn rate changes the heading, and the updated velocity moves the
//! position (semi-implicit Euler).

use std::f64::consts::PI;
use std::ops::{Add, AddAssign, Mul, Neg, Sub};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// A point or vector in the plane. Meters when used as a position, m/s when
/// used as a velocity.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const ZERO: Vec2 = Vec2 { x: 0.0, y: 0.0 };

    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }

    pub fn from_polar(magnitude: f64, angle: f64) -> Self {
        let (s, c) = angle.sin_cos();
        Self::new(magnitude * c, magnitude * s)
    }

    pub fn norm(self) -> f64 {
        self.x.hypot(self.y)
    }

    pub fn distance(self, other: Vec2) -> f64 {
        (self - other).norm()
    }

    pub fn dot(self, other: Vec2) -> f64 {
        self.x * other.x + self.y * other.y
    }

    pub fn is_finite(self) -> bool {
        self.x.is_finite() && self.y.is_finite()
    }
}

impl Add for Vec2 {
    type Output = Vec2;
    fn add(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x + rhs.x, self.y + rhs.y)
    }
}

impl AddAssign for Vec2 {
    fn add_assign(&mut self, rhs: Vec2) {
        self.x += rhs.x;
        self.y += rhs.y;
    }
}

impl Sub for Vec2 {
    type Output = Vec2;
    fn sub(self, rhs: Vec2) -> Vec2 {
        Vec2::new(self.x - rhs.x, self.y - rhs.y)
    }
}

impl Mul<f64> for Vec2 {
    type Output = Vec2;
    fn mul(self, rhs: f64) -> Vec2 {
        Vec2::new(self.x * rhs, self.y * rhs)
    }
}

impl Neg for Vec2 {
    type Output = Vec2;
    fn neg(self) -> Vec2 {
        Vec2::new(-self.x, -self.y)
    }
}

/// Kinematic state of one vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct UavState {
    pub position: Vec2,
    /// m/s, within `[v_min, v_max]` of the vehicle's limits.
    pub speed: f64,
    /// Radians in `(-pi, pi]`.
    pub heading: f64,
}

impl UavState {
    pub fn new(position: Vec2, speed: f64, heading: f64) -> Self {
        Self {
            position,
            speed,
            heading: normalize_angle(heading),
        }
    }

    pub fn velocity(&self) -> Vec2 {
        Vec2::from_polar(self.speed, self.heading)
    }

    pub fn is_finite(&self) -> bool {
        self.position.is_finite() && self.speed.is_finite() && self.heading.is_finite()
    }
}

/// Longitudinal acceleration (m/s^2) and turn rate (rad/s).
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct ControlInput {
    pub accel: f64,
    pub turn_rate: f64,
}

impl ControlInput {
    pub const fn new(accel: f64, turn_rate: f64) -> Self {
        Self { accel, turn_rate }
    }

    /// Saturates both channels to the given limits.
    pub fn clamped(self, limits: &KinematicLimits) -> Self {
        Self {
            accel: self.accel.clamp(-limits.a_max, limits.a_max),
            turn_rate: self.turn_rate.clamp(-limits.turn_rate_max, limits.turn_rate_max),
        }
    }
}

/// Performance envelope and integration step of a vehicle.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct KinematicLimits {
    pub v_max: f64,
    pub v_min: f64,
    pub a_max: f64,
    pub turn_rate_max: f64,
    pub dt: f64,
}

impl Default for KinematicLimits {
    fn default() -> Self {
        Self {
            v_max: 25.0,
            v_min: 5.0,
            a_max: 5.0,
            turn_rate_max: 0.3,
            dt: 1.0,
        }
    }
}

impl KinematicLimits {
    pub fn validate(&self) -> Result<()> {
        let all = [self.v_max, self.v_min, self.a_max, self.turn_rate_max, self.dt];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation("kinematic limits must be finite"));
        }
        if !(self.v_max > self.v_min && self.v_min >= 0.0) {
            return Err(Error::validation(format!(
                "kinematic limits require v_max > v_min >= 0 (got v_max={}, v_min={})",
                self.v_max, self.v_min
            )));
        }
        if self.a_max <= 0.0 || self.turn_rate_max <= 0.0 || self.dt <= 0.0 {
            return Err(Error::validation(
                "kinematic limits require a_max, turn_rate_max and dt > 0",
            ));
        }
        Ok(())
    }
}

/// Maps an angle into `(-pi, pi]`.
pub fn normalize_angle(angle: f64) -> f64 {
    let mut a = angle % (2.0 * PI);
    if a <= -PI {
        a += 2.0 * PI;
    } else if a > PI {
        a -= 2.0 * PI;
    }
    a
}

/// Advances `state` by one step of `limits.dt` under `control`.
///
/// The control is saturated to the limits first. Speed is clamped to
/// `[v_min, v_max]` and the new velocity is used to move the position.
pub fn integrate(
    state: &UavState,
    control: ControlInput,
    limits: &KinematicLimits,
) -> Result<UavState> {
    if !state.is_finite() || !control.accel.is_finite() || !control.turn_rate.is_finite() {
        return Err(Error::validation("integrate received a non-finite state or control"));
    }
    if limits.dt <= 0.0 || !limits.dt.is_finite() {
        return Err(Error::validation("integrate requires dt > 0"));
    }
    let control = control.clamped(limits);
    let dt = limits.dt;
    let speed = (state.speed + control.accel * dt).clamp(limits.v_min, limits.v_max);
    let heading = normalize_angle(state.heading + control.turn_rate * dt);
    let position = state.position + Vec2::from_polar(speed, heading) * dt;
    Ok(UavState {
        position,
        speed,
        heading,
    })
}

/// Quadrant-aware direction of a velocity vector, in `(-pi, pi]`.
pub fn heading_of(v: Vec2) -> Result<f64> {
    if !v.is_finite() {
        return Err(Error::validation("heading_of received a non-finite vector"));
    }
    if v.x == 0.0 && v.y == 0.0 {
        return Err(Error::validation("heading of a zero vector is undefined"));
    }
    Ok(normalize_angle(v.y.atan2(v.x)))
}

/// A circular threat region with a penalty for passing through its center.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ThreatSource {
    pub center: Vec2,
    pub safety_radius: f64,
    pub penalty: f64,
}

impl ThreatSource {
    pub fn new(center: Vec2, safety_radius: f64, penalty: f64) -> Result<Self> {
        if !(safety_radius > 0.0 && penalty > 0.0) || !center.is_finite() {
            return Err(Error::validation(
                "threat source needs a finite center, safety_radius > 0 and penalty > 0",
            ));
        }
        Ok(Self {
            center,
            safety_radius,
            penalty,
        })
    }
}

/// Ordered waypoint sequence; never empty.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    waypoints: Vec<Vec2>,
}

impl Trajectory {
    pub fn new(waypoints: Vec<Vec2>) -> Result<Self> {
        if waypoints.is_empty() {
            return Err(Error::validation("trajectory must contain at least one waypoint"));
        }
        if waypoints.iter().any(|p| !p.is_finite()) {
            return Err(Error::validation("trajectory waypoints must be finite"));
        }
        Ok(Self { waypoints })
    }

    pub fn waypoints(&self) -> &[Vec2] {
        &self.waypoints
    }

    pub fn len(&self) -> usize {
        self.waypoints.len()
    }

    pub fn is_empty(&self) -> bool {
        self.waypoints.is_empty()
    }
}

/// Sum of Euclidean distances between consecutive waypoints.
pub fn path_length_cost(traj: &Trajectory) -> f64 {
    traj.waypoints
        .windows(2)
        .map(|pair| pair[0].distance(pair[1]))
        .sum()
}

/// Waypoint-sampled threat exposure. See [`threat_cost_with_tolerance`].
pub fn threat_cost(traj: &Trajectory, threats: &[ThreatSource]) -> f64 {
    threat_cost_with_tolerance(traj, threats, 0.0)
}

/// Per waypoint and threat: `0` outside the safety radius, `SF - d` inside it,
/// and the penalty `L` when `d <= center_tolerance` (exact hit for `0.0`).
pub fn threat_cost_with_tolerance(
    traj: &Trajectory,
    threats: &[ThreatSource],
    center_tolerance: f64,
) -> f64 {
    let mut total = 0.0;
    for p in &traj.waypoints {
        for threat in threats {
            let d = p.distance(threat.center);
            if d <= center_tolerance {
                total += threat.penalty;
            } else if d < threat.safety_radius {
                total += threat.safety_radius - d;
            }
        }
    }
    total
}

/// Weights of the path-length and threat terms in the trajectory score.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct CostWeights {
    pub path_length: f64,
    pub threat: f64,
}

impl Default for CostWeights {
    fn default() -> Self {
        Self {
            path_length: 1.0,
            threat: 1.0,
        }
    }
}

/// Weighted trajectory score `a1 * C_length + a2 * C_threat` (lower is better).
pub fn evaluate_trajectory(
    traj: &Trajectory,
    threats: &[ThreatSource],
    weights: CostWeights,
) -> Result<f64> {
    if !(weights.path_length.is_finite() && weights.threat.is_finite())
        || weights.path_length < 0.0
        || weights.threat < 0.0
    {
        return Err(Error::validation("cost weights must be finite and non-negative"));
    }
    Ok(weights.path_length * path_length_cost(traj) + weights.threat * threat_cost(traj, threats))
}
