use std::collections::{BTreeMap, BTreeSet};
use std::io::Write;
use std::time::Duration;

use super::{diagnose, Service, ServiceIdentity};
use crate::bus::{BusSession, Envelope};
use crate::canlink::{format_log_line, ActuationCodec, CanFrame, SimBus};
use crate::clock::Micros;
use crate::messages::{AccelerationRequest, HealthState, Message, MessageKind, SteeringRequest};

/// How long a lone request waits for its partner before the other channel's
/// last value is used.
pub const PAIRING_DEADLINE: Micros = 30_000;
const TICK: Duration = Duration::from_millis(5);
const EMITTED_MEMORY: usize = 4096;

/// One actuation frame put on the CAN bus.
#[derive(Debug, Clone, PartialEq)]
pub struct EmittedFrame {
    pub source_sample_ts: Micros,
    /// When the frame went out.
    pub ts: Micros,
    pub steering: f64,
    pub acceleration: f64,
    pub frame: CanFrame,
}

pub type FrameSink = Box<dyn FnMut(&EmittedFrame) + Send>;

#[derive(Default)]
struct Pair {
    opened: Micros,
    steering: Option<f64>,
    accel: Option<f64>,
}

/// Pairs steering and acceleration requests by source sample time and
/// emits one actuation frame per pair.
pub struct CanProxy {
    identity: ServiceIdentity,
    codec: ActuationCodec,
    can: SimBus,
    pending: BTreeMap<Micros, Pair>,
    emitted: BTreeSet<Micros>,
    held_steering: f64,
    held_accel: f64,
    log: Option<Box<dyn Write + Send>>,
    sink: Option<FrameSink>,
}

impl CanProxy {
    pub fn new(identity: ServiceIdentity, codec: ActuationCodec, can: SimBus) -> Self {
        Self {
            identity,
            codec,
            can,
            pending: BTreeMap::new(),
            emitted: BTreeSet::new(),
            held_steering: 0.0,
            held_accel: 0.0,
            log: None,
            sink: None,
        }
    }

    /// Append `ts ID#DATA` lines for every frame sent.
    pub fn with_log(mut self, log: Box<dyn Write + Send>) -> Self {
        self.log = Some(log);
        self
    }

    pub fn with_sink(mut self, sink: FrameSink) -> Self {
        self.sink = Some(sink);
        self
    }

    fn already_sent(&self, ts: Micros) -> bool {
        self.emitted.contains(&ts) || self.emitted.first().is_some_and(|&o| ts < o)
    }

    fn offer(&mut self, bus: &BusSession, ts: Micros, steering: Option<f64>, accel: Option<f64>, now: Micros) {
        if self.already_sent(ts) {
            return;
        }
        let pair = self.pending.entry(ts).or_insert_with(|| Pair {
            opened: now,
            ..Default::default()
        });
        if steering.is_some() {
            pair.steering = steering;
        }
        if accel.is_some() {
            pair.accel = accel;
        }
        if pair.steering.is_some() && pair.accel.is_some() {
            self.emit(bus, ts, now);
        }
    }

    fn emit(&mut self, bus: &BusSession, ts: Micros, now: Micros) {
        let Some(pair) = self.pending.remove(&ts) else {
            return;
        };
        self.emitted.insert(ts);
        while self.emitted.len() > EMITTED_MEMORY {
            self.emitted.pop_first();
        }
        let steering = pair.steering.unwrap_or(self.held_steering);
        let accel = pair.accel.unwrap_or(self.held_accel);
        let frame = match self.codec.encode(
            &SteeringRequest::clamped(steering, ts).0,
            &AccelerationRequest::clamped(accel, ts).0,
        ) {
            Ok(f) => f,
            Err(e) => {
                return diagnose(
                    bus,
                    &self.identity,
                    HealthState::Degraded,
                    format!("frame for {ts} skipped: {e}"),
                    now,
                )
            }
        };
        self.held_steering = steering;
        self.held_accel = accel;
        self.can.broadcast(&frame);
        if let Some(log) = self.log.as_mut() {
            if writeln!(log, "{}", format_log_line(now, &frame))
                .and_then(|_| log.flush())
                .is_err()
            {
                self.log = None;
                diagnose(
                    bus,
                    &self.identity,
                    HealthState::Degraded,
                    "frame log write failed",
                    now,
                );
            }
        }
        let out = EmittedFrame {
            source_sample_ts: ts,
            ts: now,
            steering,
            acceleration: accel,
            frame,
        };
        if let Some(sink) = self.sink.as_mut() {
            sink(&out);
        }
    }
}

impl Service for CanProxy {
    fn identity(&self) -> &ServiceIdentity {
        &self.identity
    }

    fn subscriptions(&self) -> Vec<MessageKind> {
        vec![MessageKind::SteeringRequest, MessageKind::AccelerationRequest]
    }

    fn period(&self) -> Option<Duration> {
        Some(TICK)
    }

    fn on_message(&mut self, bus: &BusSession, _env: &Envelope, msg: Message, now: Micros) {
        match msg {
            Message::SteeringRequest(r) => {
                self.offer(bus, r.source_sample_ts, Some(r.ground_steering_angle), None, now)
            }
            Message::AccelerationRequest(r) => self.offer(bus, r.source_sample_ts, None, Some(r.acceleration), now),
            _ => {}
        }
    }

    fn tick(&mut self, bus: &BusSession, now: Micros) {
        let due: Vec<Micros> = self
            .pending
            .iter()
            .filter(|(_, p)| now.saturating_sub(p.opened) >= PAIRING_DEADLINE)
            .map(|(&ts, _)| ts)
            .collect();
        for ts in due {
            self.emit(bus, ts, now);
        }
    }
}
