//! Services driven on virtual time over an in-memory hub.

use std::collections::HashSet;
use std::path::Path;
use std::sync::{Arc, Mutex};
use std::time::Duration;

use lanepipe::bus::{BusSession, MemoryHub};
use lanepipe::canlink::{ActuationCodec, SignalMap, SimBus};
use lanepipe::framestore::FrameStores;
use lanepipe::services::{
    CameraProxy, CanProxy, FrameSource, LaneDetector, PoseFeed, RenderSource, ReplaySource, ServiceHost,
    ServiceIdentity,
};
use lanepipe::vision::{CameraModel, RgbImage, VisionParams};
use lanepipe::world::Track;
use lanepipe::{
    AccelerationRequest, Clock, Envelope, HealthState, ManualClock, Message, MessageKind, Micros, PixelFormat,
    SteeringRequest,
};

const START: Micros = 1_000_000;

struct Rig {
    hub: MemoryHub,
    clock: ManualClock,
    tap: BusSession,
    seen: Arc<Mutex<Vec<Envelope>>>,
    hosts: Vec<ServiceHost>,
}

impl Rig {
    fn new() -> Self {
        let hub = MemoryHub::new();
        let clock = ManualClock::new(START);
        let mut tap = BusSession::with_clock(hub.endpoint(), 999, Arc::new(clock.clone()) as Arc<dyn Clock>);
        let seen = Arc::new(Mutex::new(Vec::new()));
        let s = Arc::clone(&seen);
        tap.subscribe_all(move |e| s.lock().unwrap().push(e.clone()));
        Self {
            hub,
            clock,
            tap,
            seen,
            hosts: Vec::new(),
        }
    }

    fn session(&self, stamp: u32) -> BusSession {
        BusSession::with_clock(
            self.hub.endpoint(),
            stamp,
            Arc::new(self.clock.clone()) as Arc<dyn Clock>,
        )
    }

    fn add(&mut self, service: impl lanepipe::services::Service + 'static) {
        let stamp = service.identity().sender_stamp;
        let host = ServiceHost::new(Box::new(service), self.session(stamp)).unwrap();
        self.hosts.push(host);
    }

    /// Pump every host until nothing moves, then drain the tap.
    fn settle(&mut self) {
        loop {
            let handled: usize = self.hosts.iter_mut().map(|h| h.pump(Duration::ZERO)).sum();
            if handled == 0 {
                break;
            }
        }
        self.tap.poll(Duration::ZERO);
    }

    fn run_for(&mut self, span: Duration, step: Duration) {
        let end = self.clock.now_us() + span.as_micros() as Micros;
        while self.clock.now_us() < end {
            self.settle();
            self.clock.advance(step);
        }
        self.settle();
    }

    fn messages(&self, kind: MessageKind) -> Vec<(Envelope, Message)> {
        self.seen
            .lock()
            .unwrap()
            .iter()
            .filter(|e| e.data_type_id == kind.type_id())
            .map(|e| (e.clone(), Message::from_envelope(e).unwrap()))
            .collect()
    }

    fn health(&self) -> Vec<HealthState> {
        self.messages(MessageKind::DiagnosticState)
            .into_iter()
            .map(|(_, m)| match m {
                Message::DiagnosticState(d) => d.state,
                _ => unreachable!(),
            })
            .collect()
    }
}

fn id(name: &str, stamp: u32) -> ServiceIdentity {
    ServiceIdentity::new(name, stamp, "v1.0.0").unwrap()
}

fn rendered(feed: PoseFeed) -> RenderSource {
    RenderSource::new(Track::reference(), CameraModel::default(), 320, 240, feed)
}

fn write_ppms(dir: &Path, n: usize, w: u32, h: u32) {
    for i in 0..n {
        let img = RgbImage::filled(w, h, [0, 0, 0]);
        let f = std::fs::File::create(dir.join(format!("frame{i:03}.ppm"))).unwrap();
        img.write_ppm(f).unwrap();
    }
}

fn camera(stores: &FrameStores, source: Box<dyn FrameSource>, w: u32, h: u32) -> CameraProxy {
    let writer = stores.create("cam0", w, h, PixelFormat::Rgb8).unwrap();
    CameraProxy::new(id("camera", 1), source, writer, 10.0).unwrap()
}

#[test]
fn camera_announces_at_its_rate() {
    let mut rig = Rig::new();
    let stores = FrameStores::in_process();
    let feed = PoseFeed::Centerline {
        speed: 5.0,
        start: None,
    };
    rig.add(camera(&stores, Box::new(rendered(feed)), 320, 240));
    rig.run_for(Duration::from_secs(2), Duration::from_millis(10));
    let notices = rig.messages(MessageKind::ImageNotice);
    assert!((19..=21).contains(&notices.len()), "{} notices", notices.len());
    let seqs: Vec<u64> = notices
        .iter()
        .map(|(_, m)| match m {
            Message::ImageNotice(n) => n.sequence,
            _ => unreachable!(),
        })
        .collect();
    assert!(seqs.windows(2).all(|w| w[1] == w[0] + 1));
    // sample time is the grab time
    assert!(notices.iter().all(|(e, _)| e.sample_ts == e.sent_ts));
}

#[test]
fn replay_runs_out_then_degrades() {
    let dir = tempfile::tempdir().unwrap();
    write_ppms(dir.path(), 5, 16, 12);
    let mut rig = Rig::new();
    let stores = FrameStores::in_process();
    let source = ReplaySource::open(dir.path(), false).unwrap();
    assert_eq!(source.len(), 5);
    rig.add(camera(&stores, Box::new(source), 16, 12));
    rig.run_for(Duration::from_millis(800), Duration::from_millis(10));
    assert_eq!(rig.messages(MessageKind::ImageNotice).len(), 5);
    let health = rig.health();
    assert!(!health.is_empty());
    assert!(health.iter().all(|&h| h == HealthState::Degraded));
}

#[test]
fn looping_replay_keeps_going() {
    let dir = tempfile::tempdir().unwrap();
    write_ppms(dir.path(), 3, 16, 12);
    let mut rig = Rig::new();
    let stores = FrameStores::in_process();
    rig.add(camera(
        &stores,
        Box::new(ReplaySource::open(dir.path(), true).unwrap()),
        16,
        12,
    ));
    rig.run_for(Duration::from_millis(750), Duration::from_millis(10));
    assert_eq!(rig.messages(MessageKind::ImageNotice).len(), 8);
    assert!(rig.health().is_empty());
}

#[test]
fn wrong_frame_size_degrades_instead_of_writing() {
    let dir = tempfile::tempdir().unwrap();
    write_ppms(dir.path(), 2, 8, 6);
    let mut rig = Rig::new();
    let stores = FrameStores::in_process();
    rig.add(camera(
        &stores,
        Box::new(ReplaySource::open(dir.path(), false).unwrap()),
        16,
        12,
    ));
    rig.run_for(Duration::from_millis(150), Duration::from_millis(10));
    assert!(rig.messages(MessageKind::ImageNotice).is_empty());
    assert_eq!(rig.health(), [HealthState::Degraded, HealthState::Degraded]);
    assert_eq!(stores.attach("cam0").unwrap().sequence().unwrap(), 0);
}

fn detector(stores: &FrameStores, stamp: u32) -> LaneDetector {
    LaneDetector::new(
        id("lanedet", stamp),
        stores.clone(),
        "cam0",
        CameraModel::default(),
        VisionParams::default(),
    )
    .with_wait(Duration::from_millis(50))
}

#[test]
fn black_frames_give_only_diagnostics() {
    let dir = tempfile::tempdir().unwrap();
    write_ppms(dir.path(), 3, 320, 240);
    let mut rig = Rig::new();
    let stores = FrameStores::in_process();
    rig.add(camera(
        &stores,
        Box::new(ReplaySource::open(dir.path(), false).unwrap()),
        320,
        240,
    ));
    rig.add(detector(&stores, 2));
    rig.run_for(Duration::from_millis(250), Duration::from_millis(10));
    assert_eq!(rig.messages(MessageKind::ImageNotice).len(), 3);
    assert!(rig.messages(MessageKind::CenterLine).is_empty());
    let from_detector: Vec<_> = rig
        .messages(MessageKind::DiagnosticState)
        .into_iter()
        .filter(|(e, _)| e.sender_stamp == 2)
        .collect();
    assert_eq!(from_detector.len(), 3);
    assert!(rig.health().iter().all(|&h| h == HealthState::Degraded));
}

#[test]
fn cloned_detectors_each_answer_every_frame() {
    let mut rig = Rig::new();
    let stores = FrameStores::in_process();
    let feed = PoseFeed::Centerline {
        speed: 5.0,
        start: None,
    };
    rig.add(camera(&stores, Box::new(rendered(feed)), 320, 240));
    rig.add(detector(&stores, 2));
    rig.add(detector(&stores, 3));
    rig.run_for(Duration::from_millis(450), Duration::from_millis(10));
    let notices: Vec<Micros> = rig
        .messages(MessageKind::ImageNotice)
        .iter()
        .map(|(e, _)| e.sample_ts)
        .collect();
    assert_eq!(notices.len(), 5);
    let lines = rig.messages(MessageKind::CenterLine);
    assert_eq!(lines.len(), 10);
    for ts in notices {
        let same: Vec<_> = lines
            .iter()
            .filter_map(|(e, m)| match m {
                Message::CenterLine(c) if c.source_sample_ts() == ts => Some((e.sender_stamp, c.clone())),
                _ => None,
            })
            .collect();
        assert_eq!(same.len(), 2);
        assert_ne!(same[0].0, same[1].0);
        assert_eq!(same[0].1, same[1].1);
    }
}

struct CanRig {
    rig: Rig,
    sender: BusSession,
    node: lanepipe::canlink::CanNode,
    codec: ActuationCodec,
}

fn can_rig() -> CanRig {
    let mut rig = Rig::new();
    let codec = ActuationCodec::new(&SignalMap::default()).unwrap();
    let can = SimBus::new();
    let node = can.attach(Some(HashSet::from([codec.frame_id()])));
    rig.add(CanProxy::new(id("canproxy", 4), codec.clone(), can));
    let sender = rig.session(3);
    CanRig {
        rig,
        sender,
        node,
        codec,
    }
}

impl CanRig {
    fn steer(&self, angle: f64, ts: Micros) {
        let msg: Message = SteeringRequest::clamped(angle, ts).0.into();
        self.sender.publish_message(&msg, ts).unwrap();
    }

    fn accel(&self, a: f64, ts: Micros) {
        let msg: Message = AccelerationRequest::clamped(a, ts).0.into();
        self.sender.publish_message(&msg, ts).unwrap();
    }

    fn decoded(&self) -> Vec<lanepipe::canlink::DecodedActuation> {
        self.node
            .drain()
            .iter()
            .map(|f| self.codec.decode(f).unwrap())
            .collect()
    }
}

#[test]
fn paired_requests_roll_the_counter() {
    let mut c = can_rig();
    for i in 0..50u64 {
        let ts = START + i * 100_000;
        c.steer(0.01 * i as f64 - 0.2, ts);
        c.accel(0.5, ts);
        c.rig.run_for(Duration::from_millis(100), Duration::from_millis(5));
    }
    let frames = c.decoded();
    assert_eq!(frames.len(), 50);
    let counters: Vec<u8> = frames.iter().map(|d| d.counter).collect();
    assert_eq!(counters, (0..50).collect::<Vec<u8>>());
    for (i, d) in frames.iter().enumerate() {
        assert!((d.steering - (0.01 * i as f64 - 0.2)).abs() <= 0.0005);
        assert_eq!(d.acceleration, 0.5);
    }
}

#[test]
fn lone_steering_reuses_the_last_acceleration() {
    let mut c = can_rig();
    c.steer(0.1, START);
    c.accel(-1.0, START);
    c.rig.settle();
    c.steer(0.2, START + 100_000);
    c.rig.run_for(Duration::from_millis(20), Duration::from_millis(5));
    assert_eq!(c.decoded().len(), 1, "waits for the partner until the deadline");
    c.rig.run_for(Duration::from_millis(20), Duration::from_millis(5));
    let late = c.decoded();
    assert_eq!(late.len(), 1);
    assert_eq!((late[0].steering, late[0].acceleration), (0.2, -1.0));
    // the partner arriving after the deadline does not produce a second frame
    c.accel(2.0, START + 100_000);
    c.rig.run_for(Duration::from_millis(50), Duration::from_millis(5));
    assert!(c.decoded().is_empty());
}

#[test]
fn duplicate_requests_emit_once() {
    let mut c = can_rig();
    for _ in 0..3 {
        c.steer(0.1, START);
        c.accel(1.0, START);
    }
    c.rig.run_for(Duration::from_millis(60), Duration::from_millis(5));
    assert_eq!(c.decoded().len(), 1);
}
