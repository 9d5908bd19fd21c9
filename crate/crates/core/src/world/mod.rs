//! Closed-loop environment: track geometry, a kinematic bicycle model and a
//! synthetic road renderer for the camera proxy.

mod render;
mod track;
mod vehicle;

pub use render::{add_noise, render, to_vehicle, to_world, MARKING, ROAD, SKY, STROKE_WIDTH};
pub use track::{Pose2, Projection, Segment, Track, TrackError};
pub use vehicle::{bicycle_step, VehicleState};

/// Signed distance of the vehicle from the track centerline, positive left.
pub fn lateral_error(s: &VehicleState, track: &Track) -> f64 {
    track.lateral_error(s.x, s.y)
}
