use std::path::{Path, PathBuf};
use std::sync::{Arc, Mutex};
use std::time::Duration;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use super::{diagnose, publish, Service, ServiceError, ServiceIdentity};
use crate::bus::{BusSession, Envelope};
use crate::clock::Micros;
use crate::framestore::FrameWriter;
use crate::messages::{HealthState, ImageNotice, Message, MessageKind, PixelFormat};
use crate::vision::{CameraModel, RgbImage};
use crate::world::{add_noise, render, Track, VehicleState};

/// Where the camera proxy gets its pictures.
pub trait FrameSource: Send {
    fn grab(&mut self, now: Micros) -> Result<RgbImage, String>;
}

/// Where the rendered vehicle is.
#[derive(Clone)]
pub enum PoseFeed {
    /// Ideal open-loop drive along the centerline at constant speed,
    /// starting at the first grab.
    Centerline { speed: f64, start: Option<Micros> },
    /// Pose owned by a simulation loop.
    Shared(Arc<Mutex<VehicleState>>),
}

pub struct RenderSource {
    pub track: Track,
    pub cam: CameraModel,
    pub width: u32,
    pub height: u32,
    pub feed: PoseFeed,
    noise_sigma: f64,
    rng: ChaCha8Rng,
}

impl RenderSource {
    pub fn new(track: Track, cam: CameraModel, width: u32, height: u32, feed: PoseFeed) -> Self {
        Self {
            track,
            cam,
            width,
            height,
            feed,
            noise_sigma: 0.0,
            rng: ChaCha8Rng::seed_from_u64(0),
        }
    }

    pub fn with_noise(mut self, sigma: f64, seed: u64) -> Self {
        self.noise_sigma = sigma;
        self.rng = ChaCha8Rng::seed_from_u64(seed);
        self
    }

    fn vehicle(&mut self, now: Micros) -> VehicleState {
        match &mut self.feed {
            PoseFeed::Centerline { speed, start } => {
                let t0 = *start.get_or_insert(now);
                let s = (now - t0) as f64 * 1e-6 * *speed;
                VehicleState::at_pose(self.track.pose_at(s), *speed)
            }
            PoseFeed::Shared(state) => *state.lock().unwrap(),
        }
    }
}

impl FrameSource for RenderSource {
    fn grab(&mut self, now: Micros) -> Result<RgbImage, String> {
        let v = self.vehicle(now);
        let mut img = render(&v, &self.track, &self.cam, self.width, self.height);
        add_noise(&mut img, self.noise_sigma, &mut self.rng);
        Ok(img)
    }
}

/// Plays back the `.ppm` files of a directory in file name order.
pub struct ReplaySource {
    files: Vec<PathBuf>,
    next: usize,
    looping: bool,
}

impl ReplaySource {
    pub fn open(dir: &Path, looping: bool) -> std::io::Result<Self> {
        let mut files: Vec<PathBuf> = std::fs::read_dir(dir)?
            .filter_map(|e| e.ok().map(|e| e.path()))
            .filter(|p| p.extension().is_some_and(|x| x == "ppm"))
            .collect();
        files.sort();
        Ok(Self {
            files,
            next: 0,
            looping,
        })
    }

    pub fn len(&self) -> usize {
        self.files.len()
    }

    pub fn is_empty(&self) -> bool {
        self.files.is_empty()
    }
}

impl FrameSource for ReplaySource {
    fn grab(&mut self, _now: Micros) -> Result<RgbImage, String> {
        if self.next >= self.files.len() {
            if !self.looping || self.files.is_empty() {
                return Err("replay exhausted".into());
            }
            self.next = 0;
        }
        let path = &self.files[self.next];
        self.next += 1;
        let file = std::fs::File::open(path).map_err(|e| format!("{}: {e}", path.display()))?;
        RgbImage::read_ppm(std::io::BufReader::new(file)).map_err(|e| format!("{}: {e}", path.display()))
    }
}

/// Grabs a frame every period, writes it to the store and announces it.
pub struct CameraProxy {
    identity: ServiceIdentity,
    source: Box<dyn FrameSource>,
    writer: FrameWriter,
    period: Duration,
}

impl CameraProxy {
    pub fn new(
        identity: ServiceIdentity,
        source: Box<dyn FrameSource>,
        writer: FrameWriter,
        fps: f64,
    ) -> Result<Self, ServiceError> {
        if !(fps > 0.0 && fps <= 1000.0) {
            return Err(ServiceError::Config(format!("fps {fps} outside (0, 1000]")));
        }
        if writer.geometry().format != PixelFormat::Rgb8 {
            return Err(ServiceError::Config("camera stores hold RGB frames".into()));
        }
        Ok(Self {
            identity,
            source,
            writer,
            period: Duration::from_secs_f64(1.0 / fps),
        })
    }
}

impl Service for CameraProxy {
    fn identity(&self) -> &ServiceIdentity {
        &self.identity
    }

    fn subscriptions(&self) -> Vec<MessageKind> {
        Vec::new()
    }

    fn period(&self) -> Option<Duration> {
        Some(self.period)
    }

    fn on_message(&mut self, _: &BusSession, _: &Envelope, _: Message, _: Micros) {}

    fn tick(&mut self, bus: &BusSession, now: Micros) {
        let img = match self.source.grab(now) {
            Ok(img) => img,
            Err(e) => return diagnose(bus, &self.identity, HealthState::Degraded, e, now),
        };
        let g = self.writer.geometry();
        match self.writer.write_frame(&img.data, now) {
            Ok(sequence) => {
                let notice = ImageNotice {
                    store_name: self.writer.name().to_string(),
                    width: g.width,
                    height: g.height,
                    format: g.format,
                    sequence,
                };
                publish(bus, notice, now);
            }
            Err(e) => diagnose(bus, &self.identity, HealthState::Degraded, e.to_string(), now),
        }
    }
}
