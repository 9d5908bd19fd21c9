//! Lane-following control law and the perception staleness cut-off.

use thiserror::Error;

use crate::clock::Micros;
use crate::messages::{CenterLine, MAX_ACCEL, MAX_STEERING_RAD, MIN_ACCEL};

/// Deceleration commanded while in safe stop, m/s².
pub const SAFE_STOP_ACCEL: f64 = -2.0;
pub const STALE_REASON: &str = "stale perception";

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct FollowerParams {
    /// Meters.
    pub wheelbase: f64,
    /// Meters, at least 1.
    pub lookahead: f64,
    /// m/s.
    pub target_speed: f64,
    /// 1/s.
    pub speed_gain: f64,
    /// Largest accepted age of the perception behind a command.
    pub max_age: Micros,
}

impl Default for FollowerParams {
    fn default() -> Self {
        Self {
            wheelbase: 2.7,
            lookahead: 6.0,
            target_speed: 5.0,
            speed_gain: 0.5,
            max_age: 150_000,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("invalid follower parameters: {0}")]
pub struct InvalidParams(pub String);

impl FollowerParams {
    pub fn validate(&self) -> Result<(), InvalidParams> {
        let positive = [
            ("wheelbase", self.wheelbase),
            ("lookahead", self.lookahead),
            ("target speed", self.target_speed),
            ("speed gain", self.speed_gain),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(InvalidParams(format!("{name} must be positive, got {v}")));
            }
        }
        if self.lookahead < 1.0 {
            return Err(InvalidParams(format!(
                "lookahead must be at least 1 m, got {}",
                self.lookahead
            )));
        }
        if self.max_age == 0 {
            return Err(InvalidParams("max age must be positive".into()));
        }
        Ok(())
    }
}

/// Pure-pursuit steering angle toward the center line.
///
/// The goal is the first point at least `lookahead` away (or the farthest
/// point when none is). Result clamped to the actuator range.
pub fn steering_from_centerline(line: &CenterLine, p: &FollowerParams) -> f64 {
    let points = line.points();
    let la2 = p.lookahead * p.lookahead;
    let goal = points
        .iter()
        .find(|q| q.x * q.x + q.y * q.y >= la2)
        .or(points.last())
        .copied()
        .unwrap_or_default();
    let dist = goal.x.hypot(goal.y);
    let alpha = goal.y.atan2(goal.x);
    let delta = (2.0 * p.wheelbase * alpha.sin() / p.lookahead.max(dist)).atan();
    delta.clamp(-MAX_STEERING_RAD, MAX_STEERING_RAD)
}

/// Proportional speed control, clamped to the acceleration range.
pub fn acceleration_request(current_speed: f64, p: &FollowerParams) -> f64 {
    (p.speed_gain * (p.target_speed - current_speed)).clamp(MIN_ACCEL, MAX_ACCEL)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum SafetyMode {
    Active,
    SafeStop,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SafetyState {
    pub mode: SafetyMode,
    /// Sample time of the newest perception consumed so far.
    pub last_sample_ts: Option<Micros>,
    pub reason: String,
}

impl Default for SafetyState {
    fn default() -> Self {
        Self {
            mode: SafetyMode::Active,
            last_sample_ts: None,
            reason: String::new(),
        }
    }
}

impl SafetyState {
    pub fn is_safe_stop(&self) -> bool {
        self.mode == SafetyMode::SafeStop
    }
}

/// Advance the safety state. Enters safe stop once the perception is older
/// than `max_age`; safe stop is never left.
pub fn check_staleness(now: Micros, line_sample_ts: Micros, p: &FollowerParams, s: &SafetyState) -> SafetyState {
    if s.is_safe_stop() {
        return s.clone();
    }
    let newest = s.last_sample_ts.map_or(line_sample_ts, |t| t.max(line_sample_ts));
    let age = now.saturating_sub(newest);
    if age > p.max_age {
        SafetyState {
            mode: SafetyMode::SafeStop,
            last_sample_ts: Some(newest),
            reason: STALE_REASON.into(),
        }
    } else {
        SafetyState {
            mode: SafetyMode::Active,
            last_sample_ts: Some(newest),
            reason: String::new(),
        }
    }
}

/// Vehicle speed estimated by integrating the commanded acceleration.
/// The follower has no speed feedback on the bus.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CommandedSpeed {
    speed: f64,
    accel: f64,
    last: Option<Micros>,
}

impl CommandedSpeed {
    pub fn new(initial_speed: f64) -> Self {
        Self {
            speed: initial_speed.max(0.0),
            accel: 0.0,
            last: None,
        }
    }

    pub fn at(&mut self, now: Micros) -> f64 {
        if let Some(last) = self.last {
            let dt = now.saturating_sub(last) as f64 * 1e-6;
            self.speed = (self.speed + self.accel * dt).max(0.0);
        }
        self.last = Some(now);
        self.speed
    }

    pub fn command(&mut self, now: Micros, accel: f64) {
        self.at(now);
        self.accel = accel;
    }
}
