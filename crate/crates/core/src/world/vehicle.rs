use super::Pose2;

#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct VehicleState {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
    /// m/s, never negative.
    pub speed: f64,
}

impl VehicleState {
    pub fn at_pose(p: Pose2, speed: f64) -> Self {
        Self {
            x: p.x,
            y: p.y,
            heading: p.heading,
            speed: speed.max(0.0),
        }
    }

    pub fn pose(&self) -> Pose2 {
        Pose2 {
            x: self.x,
            y: self.y,
            heading: self.heading,
        }
    }
}

/// One explicit Euler step of the kinematic bicycle model, referenced at the
/// rear axle. Panics unless `0 < dt <= 0.1`.
pub fn bicycle_step(s: &VehicleState, steering: f64, accel: f64, wheelbase: f64, dt: f64) -> VehicleState {
    assert!(dt > 0.0 && dt <= 0.1, "bicycle_step: dt {dt} outside (0, 0.1]");
    let (sin, cos) = s.heading.sin_cos();
    VehicleState {
        x: s.x + s.speed * cos * dt,
        y: s.y + s.speed * sin * dt,
        heading: s.heading + s.speed / wheelbase * steering.tan() * dt,
        speed: (s.speed + accel * dt).max(0.0),
    }
}
