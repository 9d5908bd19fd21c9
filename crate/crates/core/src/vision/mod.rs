//! Lane detection: grayscale, edges, Hough lines, lane pair selection and
//! ground-plane center points.

mod camera;
mod edges;
mod hough;
mod image;
mod lane;

use std::path::Path;

use thiserror::Error;

pub use camera::CameraModel;
pub use edges::{edge_map, MAX_THRESHOLD};
pub use hough::{
    accumulator_peaks, hough_accumulator, hough_lines, rho_bin, theta_bin_count, theta_of_bin, Accumulator, HoughLine,
};
pub use image::{grayscale, GrayImage, RgbImage};
pub use lane::{center_points, mirrored, sample_rows, select_lane_pair, FAR_ROW_FRACTION, MIN_TILT_FROM_HORIZONTAL};

use crate::clock::Micros;
use crate::messages::CenterLine;

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum VisionError {
    #[error("invalid input: {0}")]
    InvalidInput(String),
    #[error("lane not found: {0}")]
    NotFound(String),
    #[error("degenerate geometry: {0}")]
    DegenerateGeometry(String),
}

/// Tunables of the detection pipeline. Defaults are tuned on the synthetic renderer.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionParams {
    pub low_threshold: u32,
    pub high_threshold: u32,
    pub rho_step: f64,
    pub theta_step: f64,
    pub min_votes: u32,
    pub center_points: usize,
    /// Edges closer than this many rows below the horizon are discarded.
    pub horizon_margin: f64,
}

impl Default for VisionParams {
    fn default() -> Self {
        Self {
            low_threshold: 100,
            high_threshold: 300,
            rho_step: 1.0,
            theta_step: std::f64::consts::PI / 180.0,
            min_votes: 30,
            center_points: 8,
            horizon_margin: 4.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct LaneDetection {
    pub center: CenterLine,
    pub left: HoughLine,
    pub right: HoughLine,
}

/// Intermediate images of one detection run, for debugging.
#[derive(Debug, Clone)]
pub struct DetectionTrace {
    pub gray: GrayImage,
    pub edges: GrayImage,
    pub lines: Vec<HoughLine>,
}

pub fn detect_lane(
    frame: &RgbImage,
    cam: &CameraModel,
    params: &VisionParams,
    sample_ts: Micros,
) -> Result<LaneDetection, VisionError> {
    detect_lane_traced(frame, cam, params, sample_ts).0
}

pub fn detect_lane_traced(
    frame: &RgbImage,
    cam: &CameraModel,
    params: &VisionParams,
    sample_ts: Micros,
) -> (Result<LaneDetection, VisionError>, Option<DetectionTrace>) {
    let gray = grayscale(frame);
    let mut edges = match edge_map(&gray, params.low_threshold, params.high_threshold) {
        Ok(e) => e,
        Err(e) => return (Err(e), None),
    };
    let cutoff = (cam.horizon_row() + params.horizon_margin).ceil();
    if cutoff > 0.0 {
        let rows = (cutoff as usize).min(edges.height as usize);
        edges.data[..rows * edges.width as usize].fill(0);
    }
    let lines = match hough_lines(&edges, params.rho_step, params.theta_step, params.min_votes) {
        Ok(l) => l,
        Err(e) => return (Err(e), None),
    };
    let result = select_lane_pair(&lines, frame.height, cam.cx).and_then(|(left, right)| {
        let center = center_points(&left, &right, cam, frame.height, params.center_points, sample_ts)?;
        Ok(LaneDetection { center, left, right })
    });
    (result, Some(DetectionTrace { gray, edges, lines }))
}

impl DetectionTrace {
    /// Write `gray.pgm` and `edges.pgm` under `dir` with the given prefix.
    pub fn dump(&self, dir: &Path, prefix: &str) -> std::io::Result<()> {
        std::fs::create_dir_all(dir)?;
        let gray = std::fs::File::create(dir.join(format!("{prefix}-gray.pgm")))?;
        self.gray.write_pgm(std::io::BufWriter::new(gray))?;
        let edges = std::fs::File::create(dir.join(format!("{prefix}-edges.pgm")))?;
        self.edges.write_pgm(std::io::BufWriter::new(edges))
    }
}
