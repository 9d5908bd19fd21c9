use serde::{Deserialize, Serialize};

use crate::messages::GroundPoint;

/// Pinhole camera looking forward over flat ground.
///
/// Vehicle frame: x ahead, y left, z up, origin on the ground below the
/// camera. Image frame: u to the right, v down, origin at the top-left pixel.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct CameraModel {
    /// Meters.
    pub height_above_ground: f64,
    /// Radians, positive tilts the optical axis down.
    pub pitch: f64,
    /// Pixels.
    pub focal_length: f64,
    pub cx: f64,
    pub cy: f64,
}

const MIN_DEPRESSION: f64 = 1e-9;

impl CameraModel {
    /// Camera with the principal point at the exact image center.
    pub fn centered(width: u32, height: u32, height_above_ground: f64, pitch: f64, focal_length: f64) -> Self {
        Self {
            height_above_ground,
            pitch,
            focal_length,
            cx: (width as f64 - 1.0) / 2.0,
            cy: (height as f64 - 1.0) / 2.0,
        }
    }

    /// Image row of the horizon (may lie outside the image).
    pub fn horizon_row(&self) -> f64 {
        self.cy - self.focal_length * self.pitch.tan()
    }

    /// Intersect the viewing ray of pixel (u, v) with the ground plane.
    /// `None` at or above the horizon.
    pub fn back_project(&self, u: f64, v: f64) -> Option<GroundPoint> {
        let a = (u - self.cx) / self.focal_length;
        let b = (v - self.cy) / self.focal_length;
        let (sp, cp) = self.pitch.sin_cos();
        let down = sp + b * cp;
        if down <= MIN_DEPRESSION {
            return None;
        }
        let t = self.height_above_ground / down;
        Some(GroundPoint::new(t * (cp - b * sp), -t * a))
    }

    /// Pixel coordinates of a ground point. `None` behind the camera.
    pub fn project(&self, p: GroundPoint) -> Option<(f64, f64)> {
        let h = self.height_above_ground;
        let (sp, cp) = self.pitch.sin_cos();
        let depth = p.x * cp + h * sp;
        if depth <= MIN_DEPRESSION {
            return None;
        }
        let right = -p.y;
        let down = -p.x * sp + h * cp;
        Some((
            self.cx + self.focal_length * right / depth,
            self.cy + self.focal_length * down / depth,
        ))
    }
}

impl Default for CameraModel {
    /// Matches the default 320x240 render: 1.2 m high, pitched 0.06 rad down, 200 px focal length.
    fn default() -> Self {
        Self::centered(320, 240, 1.2, 0.06, 200.0)
    }
}
