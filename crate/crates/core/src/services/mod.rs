//! The four pipeline services (camera proxy, lane detector, lane follower,
//! CAN proxy), the host loop that drives any of them over a bus session,
//! and a deterministic closed-loop harness that runs them all in one process.

mod camera;
mod canproxy;
mod follower;
mod lanedet;
pub mod sim;

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::{Arc, Mutex, OnceLock};
use std::time::Duration;

use regex::Regex;
use thiserror::Error;

pub use camera::{CameraProxy, FrameSource, PoseFeed, RenderSource, ReplaySource};
pub use canproxy::{CanProxy, EmittedFrame, FrameSink, PAIRING_DEADLINE};
pub use follower::{vote, LaneFollower, VoteBuffer, VotePolicy, DEFAULT_CONTROL_PERIOD, DEFAULT_VOTE_DEADLINE};
pub use lanedet::LaneDetector;

use crate::bus::{BusError, BusSession, Envelope};
use crate::clock::Micros;
use crate::messages::{DiagnosticState, HealthState, Message, MessageKind};

#[derive(Debug, Error)]
pub enum ServiceError {
    #[error("invalid identity: {0}")]
    InvalidIdentity(String),
    #[error("invalid configuration: {0}")]
    Config(String),
    #[error(transparent)]
    Bus(#[from] BusError),
}

/// `[0-9a-f]{7,40}` (commit-hash-like) or `v` followed by dotted numerals.
pub fn is_valid_version_tag(tag: &str) -> bool {
    static RE: OnceLock<Regex> = OnceLock::new();
    RE.get_or_init(|| Regex::new(r"^(?:[0-9a-f]{7,40}|v[0-9]+(?:\.[0-9]+)*)$").unwrap())
        .is_match(tag)
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ServiceIdentity {
    pub name: String,
    pub sender_stamp: u32,
    pub version_tag: String,
}

impl ServiceIdentity {
    pub fn new(
        name: impl Into<String>,
        sender_stamp: u32,
        version_tag: impl Into<String>,
    ) -> Result<Self, ServiceError> {
        let name = name.into();
        let version_tag = version_tag.into();
        if name.is_empty() {
            return Err(ServiceError::InvalidIdentity("empty service name".into()));
        }
        if !is_valid_version_tag(&version_tag) {
            return Err(ServiceError::InvalidIdentity(format!(
                "version tag `{version_tag}` is neither a commit hash nor v<major>.<minor>..."
            )));
        }
        Ok(Self {
            name,
            sender_stamp,
            version_tag,
        })
    }
}

/// One pipeline stage. The host hands it decoded messages of the subscribed
/// kinds and calls `tick` once per period.
pub trait Service: Send {
    fn identity(&self) -> &ServiceIdentity;
    fn subscriptions(&self) -> Vec<MessageKind>;
    /// `None` for purely message-driven services.
    fn period(&self) -> Option<Duration>;
    fn on_message(&mut self, bus: &BusSession, env: &Envelope, msg: Message, now: Micros);
    fn tick(&mut self, bus: &BusSession, now: Micros);
}

/// Publish, reporting failures on stderr. Services never stop over a lost datagram.
pub(crate) fn publish(bus: &BusSession, msg: impl Into<Message>, sample_ts: Micros) {
    let msg = msg.into();
    if let Err(e) = bus.publish_message(&msg, sample_ts) {
        eprintln!("publish {} failed: {e}", msg.kind());
    }
}

pub(crate) fn diagnose(
    bus: &BusSession,
    id: &ServiceIdentity,
    state: HealthState,
    detail: impl Into<String>,
    now: Micros,
) {
    publish(bus, DiagnosticState::new(id.name.clone(), state, detail), now);
}

/// Drives one [`Service`] over its own bus session.
pub struct ServiceHost {
    service: Box<dyn Service>,
    session: BusSession,
    inbox: Arc<Mutex<VecDeque<Envelope>>>,
    next_tick: Option<Micros>,
}

impl ServiceHost {
    pub fn new(service: Box<dyn Service>, mut session: BusSession) -> Result<Self, ServiceError> {
        if session.sender_stamp() != service.identity().sender_stamp {
            return Err(ServiceError::InvalidIdentity(format!(
                "session stamp {} differs from identity stamp {}",
                session.sender_stamp(),
                service.identity().sender_stamp
            )));
        }
        let inbox = Arc::new(Mutex::new(VecDeque::new()));
        for kind in service.subscriptions() {
            let q = Arc::clone(&inbox);
            session.subscribe(kind.type_id(), move |env: &Envelope| {
                q.lock().unwrap().push_back(env.clone())
            })?;
        }
        Ok(Self {
            service,
            session,
            inbox,
            next_tick: None,
        })
    }

    pub fn identity(&self) -> &ServiceIdentity {
        self.service.identity()
    }

    pub fn session(&self) -> &BusSession {
        &self.session
    }

    /// Receive for up to `timeout`, hand over whatever arrived, then tick if
    /// a period boundary has passed. Returns the number of messages handled.
    pub fn pump(&mut self, timeout: Duration) -> usize {
        self.session.poll_some(timeout);
        let handled = self.deliver();
        let now = self.session.now_us();
        if let Some(period) = self.service.period() {
            let period = (period.as_micros() as Micros).max(1);
            let due = *self.next_tick.get_or_insert(now);
            if now >= due {
                self.service.tick(&self.session, now);
                let mut next = due + period;
                if next <= now {
                    next = now + period - (now - due) % period;
                }
                self.next_tick = Some(next);
            }
        }
        handled
    }

    fn deliver(&mut self) -> usize {
        let mut handled = 0;
        loop {
            let Some(env) = self.inbox.lock().unwrap().pop_front() else {
                break;
            };
            let now = self.session.now_us();
            match Message::from_envelope(&env) {
                Ok(msg) => self.service.on_message(&self.session, &env, msg, now),
                Err(e) => diagnose(
                    &self.session,
                    self.service.identity(),
                    HealthState::Degraded,
                    format!("malformed message from stamp {}: {e}", env.sender_stamp),
                    now,
                ),
            }
            handled += 1;
        }
        handled
    }

    /// Time until the next tick, capped at `cap`.
    fn until_tick(&self, cap: Duration) -> Duration {
        match self.next_tick {
            Some(t) => Duration::from_micros(t.saturating_sub(self.session.now_us())).min(cap),
            None => Duration::ZERO,
        }
    }

    /// Run until `stop` is raised.
    pub fn run(&mut self, stop: &AtomicBool) {
        const SLICE: Duration = Duration::from_millis(20);
        while !stop.load(Ordering::Relaxed) {
            let wait = if self.service.period().is_some() {
                self.until_tick(SLICE)
            } else {
                SLICE
            };
            self.pump(wait);
        }
    }
}
