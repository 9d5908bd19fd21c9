use rand::Rng;
use rand_distr::{Distribution, Normal};

use super::{Track, VehicleState};
use crate::messages::GroundPoint;
use crate::vision::{CameraModel, RgbImage};

pub const ROAD: [u8; 3] = [80, 80, 80];
pub const MARKING: [u8; 3] = [255, 255, 255];
pub const SKY: [u8; 3] = [0, 0, 0];
/// Width of a painted boundary line, meters.
pub const STROKE_WIDTH: f64 = 0.15;

/// Vehicle-frame ground point to world coordinates.
pub fn to_world(s: &VehicleState, p: GroundPoint) -> (f64, f64) {
    let (sin, cos) = s.heading.sin_cos();
    (s.x + p.x * cos - p.y * sin, s.y + p.x * sin + p.y * cos)
}

/// World point to the vehicle frame.
pub fn to_vehicle(s: &VehicleState, x: f64, y: f64) -> GroundPoint {
    let (sin, cos) = s.heading.sin_cos();
    let (dx, dy) = (x - s.x, y - s.y);
    GroundPoint::new(dx * cos + dy * sin, -dx * sin + dy * cos)
}

/// Synthetic camera view of the track from the vehicle's pose.
///
/// Each pixel below the horizon is traced to the ground through `cam`; it is
/// painted white when it lands within half a stroke of a lane boundary
/// (±lane_width/2 from the centerline). The centerline continues straight
/// past both track ends so the road never stops in view.
pub fn render(s: &VehicleState, track: &Track, cam: &CameraModel, width: u32, height: u32) -> RgbImage {
    let mut img = RgbImage::filled(width, height, SKY);
    let half_lane = 0.5 * track.lane_width();
    let half_stroke = 0.5 * STROKE_WIDTH;
    for v in 0..height {
        for u in 0..width {
            let Some(g) = cam.back_project(u as f64, v as f64) else {
                continue;
            };
            let (x, y) = to_world(s, g);
            let d = track.project_extended(x, y).offset.abs();
            let color = if (d - half_lane).abs() <= half_stroke {
                MARKING
            } else {
                ROAD
            };
            img.set(u, v, color);
        }
    }
    img
}

/// Add zero-mean Gaussian noise with standard deviation `sigma` (gray levels)
/// to every channel, saturating at 0 and 255.
pub fn add_noise(img: &mut RgbImage, sigma: f64, rng: &mut impl Rng) {
    if !(sigma > 0.0) {
        return;
    }
    let normal = Normal::new(0.0, sigma).expect("finite positive sigma");
    for px in img.data.iter_mut() {
        let v = *px as f64 + normal.sample(rng);
        *px = v.round().clamp(0.0, 255.0) as u8;
    }
}
