//! Deterministic closed loop: every service runs on its own bus session over
//! an in-memory hub, time is virtual, and the vehicle is driven by the CAN
//! frames the proxy emits.

use std::collections::HashSet;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use super::{
    CameraProxy, CanProxy, EmittedFrame, LaneDetector, LaneFollower, PoseFeed, RenderSource, ServiceError, ServiceHost,
    ServiceIdentity, VoteBuffer, VotePolicy, DEFAULT_VOTE_DEADLINE,
};
use crate::bus::{BusSession, Envelope, MemoryHub};
use crate::canlink::{ActuationCodec, SignalMap, SimBus};
use crate::clock::{Clock, ManualClock, Micros};
use crate::follower::FollowerParams;
use crate::framestore::FrameStores;
use crate::messages::{DiagnosticState, HealthState, Message, MessageKind, PixelFormat};
use crate::orchestrator::Deployment;
use crate::vision::{CameraModel, VisionParams};
use crate::world::{bicycle_step, Track, VehicleState};

pub const STORE_NAME: &str = "cam0";
const TAP_STAMP: u32 = u32::MAX;

#[derive(Debug, Clone)]
pub struct SimConfig {
    pub track: Track,
    pub cam: CameraModel,
    pub width: u32,
    pub height: u32,
    pub fps: f64,
    /// Physics step.
    pub dt: Duration,
    pub follower: FollowerParams,
    pub policy: VotePolicy,
    /// One lane detector per entry; the value is its injected y bias in meters.
    pub detectors: Vec<f64>,
    pub vision: VisionParams,
    pub initial_speed: f64,
    /// Virtual time limit.
    pub max_time: Duration,
    /// Virtual time (since start) at which the camera service is stopped.
    pub camera_stop_after: Option<Duration>,
    pub noise_sigma: f64,
    pub seed: u64,
    pub version_tag: String,
}

impl Default for SimConfig {
    fn default() -> Self {
        Self {
            track: Track::reference(),
            cam: CameraModel::default(),
            width: 320,
            height: 240,
            fps: 10.0,
            dt: Duration::from_millis(10),
            follower: FollowerParams::default(),
            policy: VotePolicy::First,
            detectors: vec![0.0],
            vision: VisionParams::default(),
            initial_speed: 5.0,
            max_time: Duration::from_secs(120),
            camera_stop_after: None,
            noise_sigma: 0.0,
            seed: 1,
            version_tag: "v1.0.0".into(),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SimSample {
    pub t: Micros,
    pub state: VehicleState,
    pub lateral_error: f64,
    /// Arc length of the nearest centerline point.
    pub progress: f64,
}

#[derive(Debug, Clone)]
pub struct SimReport {
    pub start: Micros,
    pub trajectory: Vec<SimSample>,
    /// Every envelope seen on the bus, in arrival order.
    pub envelopes: Vec<Envelope>,
    pub frames: Vec<EmittedFrame>,
    /// Whether the vehicle reached the end of the track.
    pub completed: bool,
    pub camera_stopped_at: Option<Micros>,
    pub stamps: SimStamps,
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct SimStamps {
    pub camera: u32,
    pub detectors: Vec<u32>,
    pub follower: u32,
    pub canproxy: u32,
}

impl SimReport {
    pub fn max_abs_lateral_error(&self) -> f64 {
        self.trajectory
            .iter()
            .map(|s| s.lateral_error.abs())
            .fold(0.0, f64::max)
    }

    pub fn messages(&self, kind: MessageKind) -> impl Iterator<Item = (&Envelope, Message)> + '_ {
        self.envelopes
            .iter()
            .filter(move |e| e.data_type_id == kind.type_id())
            .filter_map(|e| Message::from_envelope(e).ok().map(|m| (e, m)))
    }

    pub fn diagnostics(&self) -> Vec<(Micros, DiagnosticState)> {
        self.messages(MessageKind::DiagnosticState)
            .filter_map(|(e, m)| match m {
                Message::DiagnosticState(d) => Some((e.sent_ts, d)),
                _ => None,
            })
            .collect()
    }

    /// Send time of the first SAFE_STOP diagnostic.
    pub fn first_safe_stop(&self) -> Option<Micros> {
        self.diagnostics()
            .into_iter()
            .find(|(_, d)| d.state == HealthState::SafeStop)
            .map(|(t, _)| t)
    }
}

fn identity(name: &str, stamp: u32, tag: &str) -> Result<ServiceIdentity, ServiceError> {
    ServiceIdentity::new(name, stamp, tag)
}

pub fn run_closed_loop(cfg: &SimConfig) -> Result<SimReport, ServiceError> {
    if cfg.detectors.is_empty() {
        return Err(ServiceError::Config("need at least one lane detector".into()));
    }
    let start: Micros = 1_000_000;
    let clock = ManualClock::new(start);
    let shared_clock: Arc<dyn Clock> = Arc::new(clock.clone());
    let hub = MemoryHub::new();
    let session = |stamp: u32| BusSession::with_clock(hub.endpoint(), stamp, Arc::clone(&shared_clock));
    let stores = FrameStores::in_process();
    let can = SimBus::new();
    let codec = ActuationCodec::new(&SignalMap::default()).map_err(|e| ServiceError::Config(e.to_string()))?;
    let vehicle_node = can.attach(Some(HashSet::from([codec.frame_id()])));
    let decoder = codec.clone();

    let mut state = VehicleState::at_pose(cfg.track.start_pose(), cfg.initial_speed);
    let pose = Arc::new(Mutex::new(state));

    // stamps assigned sequentially from 1, like the supervisor does
    let mut next_stamp = 1u32;
    let mut take_stamp = || {
        let s = next_stamp;
        next_stamp += 1;
        s
    };
    let stamps = SimStamps {
        camera: take_stamp(),
        detectors: cfg.detectors.iter().map(|_| take_stamp()).collect(),
        follower: take_stamp(),
        canproxy: take_stamp(),
    };

    let source = RenderSource::new(
        cfg.track.clone(),
        cfg.cam,
        cfg.width,
        cfg.height,
        PoseFeed::Shared(Arc::clone(&pose)),
    )
    .with_noise(cfg.noise_sigma, cfg.seed);
    let writer = stores
        .create(STORE_NAME, cfg.width, cfg.height, PixelFormat::Rgb8)
        .map_err(|e| ServiceError::Config(e.to_string()))?;
    let camera = CameraProxy::new(
        identity("camera", stamps.camera, &cfg.version_tag)?,
        Box::new(source),
        writer,
        cfg.fps,
    )?;
    let mut camera_host = Some(ServiceHost::new(Box::new(camera), session(stamps.camera))?);

    let mut hosts = Vec::new();
    for (&bias, &stamp) in cfg.detectors.iter().zip(&stamps.detectors) {
        let det = LaneDetector::new(
            identity("lanedet", stamp, &cfg.version_tag)?,
            stores.clone(),
            STORE_NAME,
            cfg.cam,
            cfg.vision,
        )
        .with_wait(Duration::ZERO)
        .with_y_bias(bias);
        hosts.push(ServiceHost::new(Box::new(det), session(stamp))?);
    }
    let follower = LaneFollower::new(
        identity("follower", stamps.follower, &cfg.version_tag)?,
        cfg.follower,
        VoteBuffer::new(cfg.policy, cfg.detectors.len(), DEFAULT_VOTE_DEADLINE),
        cfg.initial_speed,
    )?;
    hosts.push(ServiceHost::new(Box::new(follower), session(stamps.follower))?);
    let frames = Arc::new(Mutex::new(Vec::new()));
    let sink_frames = Arc::clone(&frames);
    let proxy = CanProxy::new(
        identity("canproxy", stamps.canproxy, &cfg.version_tag)?,
        codec,
        can.clone(),
    )
    .with_sink(Box::new(move |f: &EmittedFrame| {
        sink_frames.lock().unwrap().push(f.clone())
    }));
    hosts.push(ServiceHost::new(Box::new(proxy), session(stamps.canproxy))?);

    let mut tap = session(TAP_STAMP);
    let seen = Arc::new(Mutex::new(Vec::new()));
    let tap_seen = Arc::clone(&seen);
    tap.subscribe_all(move |e: &Envelope| tap_seen.lock().unwrap().push(e.clone()));

    let dt_us = cfg.dt.as_micros() as Micros;
    let dt = cfg.dt.as_secs_f64();
    let end = start + cfg.max_time.as_micros() as Micros;
    let stop_camera_at = cfg.camera_stop_after.map(|d| start + d.as_micros() as Micros);
    let (mut steering, mut accel) = (0.0, 0.0);
    let mut trajectory = Vec::new();
    let mut completed = false;
    let mut moved = false;
    let mut camera_stopped_at = None;
    let mut t = start;
    loop {
        if stop_camera_at.is_some_and(|k| t >= k) && camera_host.is_some() {
            camera_host = None;
            camera_stopped_at = Some(t);
        }
        // settle: keep pumping until nobody has anything left to handle
        loop {
            let mut handled = 0;
            if let Some(h) = camera_host.as_mut() {
                handled += h.pump(Duration::ZERO);
            }
            for h in hosts.iter_mut() {
                handled += h.pump(Duration::ZERO);
            }
            if handled == 0 {
                break;
            }
        }
        tap.poll(Duration::ZERO);
        for frame in vehicle_node.drain() {
            if let Ok(a) = decoder.decode(&frame) {
                steering = a.steering;
                accel = a.acceleration;
            }
        }
        let proj = cfg.track.project(state.x, state.y);
        trajectory.push(SimSample {
            t,
            state,
            lateral_error: proj.offset,
            progress: proj.s,
        });
        if proj.s >= cfg.track.total_length() - 1e-6 {
            completed = true;
            break;
        }
        moved |= state.speed > 0.0;
        // halted for good, e.g. after a safe stop
        if t >= end || (moved && state.speed == 0.0 && accel <= 0.0) {
            break;
        }
        state = bicycle_step(&state, steering, accel, cfg.follower.wheelbase, dt);
        *pose.lock().unwrap() = state;
        t += dt_us;
        clock.set(t);
    }
    drop(hosts);
    let envelopes = std::mem::take(&mut *seen.lock().unwrap());
    let frames = std::mem::take(&mut *frames.lock().unwrap());
    Ok(SimReport {
        start,
        trajectory,
        envelopes,
        frames,
        completed,
        camera_stopped_at,
        stamps,
    })
}

fn flag<'a>(argv: &'a [String], name: &str) -> Option<&'a str> {
    argv.iter()
        .position(|a| a == name)
        .and_then(|i| argv.get(i + 1))
        .map(String::as_str)
        .or_else(|| {
            let prefix = format!("{name}=");
            argv.iter().find_map(|a| a.strip_prefix(&prefix))
        })
}

fn flag_f64(argv: &[String], name: &str, default: f64) -> Result<f64, ServiceError> {
    match flag(argv, name) {
        None => Ok(default),
        Some(v) => v
            .parse()
            .map_err(|_| ServiceError::Config(format!("{name}: `{v}` is not a number"))),
    }
}

fn program(argv: &[String]) -> &str {
    argv.first().map_or("", |p| p.rsplit('/').next().unwrap_or(p))
}

impl SimConfig {
    /// Harness configuration for a deployment: the camera rate, every lane
    /// detector instance (replicas and fault injection) and the follower's
    /// control and vote settings come from the services' command lines.
    pub fn from_deployment(dep: &Deployment) -> Result<Self, ServiceError> {
        let mut cfg = SimConfig {
            detectors: Vec::new(),
            ..Default::default()
        };
        let mut roles = [false; 4];
        for s in &dep.services {
            let argv = &s.command.value;
            match program(argv) {
                "lanepipe-camera" => {
                    roles[0] = true;
                    cfg.fps = flag_f64(argv, "--fps", cfg.fps)?;
                    cfg.noise_sigma = flag_f64(argv, "--noise", cfg.noise_sigma)?;
                    cfg.initial_speed = flag_f64(argv, "--speed", cfg.initial_speed)?;
                }
                "lanepipe-lanedet" => {
                    roles[1] = true;
                    let bias = flag_f64(argv, "--y-bias", 0.0)?;
                    cfg.detectors
                        .extend(std::iter::repeat_n(bias, s.replicas.value as usize));
                }
                "lanepipe-follower" => {
                    roles[2] = true;
                    let f = &mut cfg.follower;
                    f.target_speed = flag_f64(argv, "--target-speed", f.target_speed)?;
                    f.lookahead = flag_f64(argv, "--lookahead", f.lookahead)?;
                    f.wheelbase = flag_f64(argv, "--wheelbase", f.wheelbase)?;
                    f.speed_gain = flag_f64(argv, "--speed-gain", f.speed_gain)?;
                    f.max_age = (flag_f64(argv, "--max-age-ms", f.max_age as f64 / 1000.0)? * 1000.0) as Micros;
                    if let Some(p) = flag(argv, "--policy") {
                        cfg.policy = p.parse().map_err(ServiceError::Config)?;
                    }
                }
                "lanepipe-canproxy" => roles[3] = true,
                _ => {}
            }
        }
        let names = [
            "lanepipe-camera",
            "lanepipe-lanedet",
            "lanepipe-follower",
            "lanepipe-canproxy",
        ];
        if let Some(i) = roles.iter().position(|r| !r) {
            return Err(ServiceError::Config(format!("deployment has no {} service", names[i])));
        }
        Ok(cfg)
    }
}
