//! Inputs shared by the benchmarks: one rendered road frame at the
//! reference track's start and the stages derived from it.

use lanepipe::vision::{edge_map, grayscale, CameraModel, GrayImage, RgbImage, VisionParams};
use lanepipe::world::{render, Track, VehicleState};

pub const WIDTH: u32 = 320;
pub const HEIGHT: u32 = 240;

pub struct Scene {
    pub camera: CameraModel,
    pub params: VisionParams,
    pub track: Track,
    pub state: VehicleState,
    pub frame: RgbImage,
    pub gray: GrayImage,
    pub edges: GrayImage,
}

impl Scene {
    pub fn reference() -> Self {
        let track = Track::reference();
        let camera = CameraModel::default();
        let params = VisionParams::default();
        let state = VehicleState::at_pose(track.start_pose(), 5.0);
        let frame = render(&state, &track, &camera, WIDTH, HEIGHT);
        let gray = grayscale(&frame);
        let edges = edge_map(&gray, params.low_threshold, params.high_threshold).expect("default thresholds are valid");
        Self {
            camera,
            params,
            track,
            state,
            frame,
            gray,
            edges,
        }
    }
}
