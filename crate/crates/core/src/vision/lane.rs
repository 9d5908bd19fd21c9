use std::f64::consts::FRAC_PI_2;

use super::{CameraModel, HoughLine, VisionError};
use crate::clock::Micros;
use crate::messages::{CenterLine, GroundPoint};

/// Lines closer than this to horizontal are clutter, not lane markings.
pub const MIN_TILT_FROM_HORIZONTAL: f64 = 15.0 * std::f64::consts::PI / 180.0;

/// Fraction of the image height (from the top) where center sampling stops.
pub const FAR_ROW_FRACTION: f64 = 0.6;

/// Pick the strongest candidate on each side of the principal point.
///
/// Candidates are lines at least 15° away from horizontal. Each is assigned
/// to the left or right by where it crosses the bottom image row. Within a
/// side the most votes win, then the smaller |rho|.
pub fn select_lane_pair(
    lines: &[HoughLine],
    image_height: u32,
    principal_column: f64,
) -> Result<(HoughLine, HoughLine), VisionError> {
    let bottom = image_height as f64 - 1.0;
    let mut left: Option<HoughLine> = None;
    let mut right: Option<HoughLine> = None;
    for line in lines {
        if (line.theta - FRAC_PI_2).abs() < MIN_TILT_FROM_HORIZONTAL {
            continue;
        }
        let Some(x) = line.x_at_row(bottom) else {
            continue;
        };
        let slot = if x < principal_column {
            &mut left
        } else if x > principal_column {
            &mut right
        } else {
            continue;
        };
        let better = match slot {
            None => true,
            Some(cur) => line.votes > cur.votes || (line.votes == cur.votes && line.rho.abs() < cur.rho.abs()),
        };
        if better {
            *slot = Some(*line);
        }
    }
    match (left, right) {
        (Some(l), Some(r)) => Ok((l, r)),
        (None, None) => Err(VisionError::NotFound("no lane marking on either side".into())),
        (None, _) => Err(VisionError::NotFound("no left lane marking".into())),
        (_, None) => Err(VisionError::NotFound("no right lane marking".into())),
    }
}

/// Image rows where center points are sampled: `n` rows evenly spaced from
/// the bottom row up to [`FAR_ROW_FRACTION`] of the image height.
pub fn sample_rows(image_height: u32, n: usize) -> Vec<f64> {
    let bottom = image_height as f64 - 1.0;
    let far = FAR_ROW_FRACTION * image_height as f64;
    if n < 2 {
        return vec![bottom];
    }
    (0..n)
        .map(|i| bottom - (bottom - far) * i as f64 / (n - 1) as f64)
        .collect()
}

/// Ground-plane points midway between the two lane boundaries.
pub fn center_points(
    left: &HoughLine,
    right: &HoughLine,
    cam: &CameraModel,
    image_height: u32,
    n: usize,
    sample_ts: Micros,
) -> Result<CenterLine, VisionError> {
    if n < 2 {
        return Err(VisionError::InvalidInput(format!(
            "need at least 2 center points, got {n}"
        )));
    }
    let mut points = Vec::with_capacity(n);
    for row in sample_rows(image_height, n) {
        let (Some(xl), Some(xr)) = (left.x_at_row(row), right.x_at_row(row)) else {
            return Err(VisionError::DegenerateGeometry(format!(
                "lane boundary does not cross row {row}"
            )));
        };
        let mid = 0.5 * (xl + xr);
        let p = cam
            .back_project(mid, row)
            .ok_or_else(|| VisionError::DegenerateGeometry(format!("row {row} is at or above the horizon")))?;
        points.push(p);
    }
    points.sort_by(|a, b| a.x.total_cmp(&b.x));
    CenterLine::new(points, sample_ts).map_err(|e| VisionError::DegenerateGeometry(e.to_string()))
}

/// Mirror of a ground point sequence about the vehicle axis.
pub fn mirrored(points: &[GroundPoint]) -> Vec<GroundPoint> {
    points.iter().map(|p| GroundPoint::new(p.x, -p.y)).collect()
}
