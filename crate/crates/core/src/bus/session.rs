use std::collections::HashMap;
use std::io;
use std::sync::atomic::{AtomicU64, Ordering};
use std::sync::Arc;
use std::time::{Duration, Instant};

use thiserror::Error;

use super::envelope::{decode_envelope, encode_envelope, CodecError, Envelope};
use super::transport::Transport;
use crate::clock::{Clock, Micros, SystemClock};

pub type Handler = Box<dyn FnMut(&Envelope) + Send>;

#[derive(Debug, Error)]
pub enum BusError {
    #[error(transparent)]
    Codec(#[from] CodecError),
    #[error("transport failure: {0}")]
    Transport(#[from] io::Error),
    #[error("data type id {0} already has a handler in this session")]
    DuplicateHandler(i32),
}

/// Snapshot of a session's counters.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq)]
pub struct BusStats {
    pub sent: u64,
    /// Well-formed envelopes taken off the transport, own traffic included.
    pub received: u64,
    /// Handler invocations.
    pub delivered: u64,
    /// Envelopes of a type nobody in this session subscribed to.
    pub dropped: u64,
    /// Own envelopes withheld from handlers.
    pub self_filtered: u64,
    pub malformed: u64,
}

#[derive(Default)]
struct Counters {
    sent: AtomicU64,
    received: AtomicU64,
    delivered: AtomicU64,
    dropped: AtomicU64,
    self_filtered: AtomicU64,
    malformed: AtomicU64,
}

/// A member of the publish/subscribe group.
///
/// Publishing takes `&self` and may happen from any thread. Polling runs the
/// handlers on the calling thread. Envelopes carrying this session's own
/// sender stamp are never handed to a handler.
pub struct BusSession {
    transport: Box<dyn Transport>,
    clock: Arc<dyn Clock>,
    own_stamp: u32,
    handlers: HashMap<i32, Handler>,
    catch_all: Option<Handler>,
    counters: Counters,
}

impl BusSession {
    pub fn new(transport: impl Transport + 'static, own_stamp: u32) -> Self {
        Self::with_clock(transport, own_stamp, Arc::new(SystemClock))
    }

    pub fn with_clock(transport: impl Transport + 'static, own_stamp: u32, clock: Arc<dyn Clock>) -> Self {
        Self {
            transport: Box::new(transport),
            clock,
            own_stamp,
            handlers: HashMap::new(),
            catch_all: None,
            counters: Counters::default(),
        }
    }

    pub fn sender_stamp(&self) -> u32 {
        self.own_stamp
    }

    pub fn clock(&self) -> &Arc<dyn Clock> {
        &self.clock
    }

    pub fn now_us(&self) -> Micros {
        self.clock.now_us()
    }

    pub fn subscribe(
        &mut self,
        data_type_id: i32,
        handler: impl FnMut(&Envelope) + Send + 'static,
    ) -> Result<(), BusError> {
        if self.handlers.contains_key(&data_type_id) {
            return Err(BusError::DuplicateHandler(data_type_id));
        }
        self.handlers.insert(data_type_id, Box::new(handler));
        Ok(())
    }

    /// Receive every envelope whose type has no dedicated handler.
    /// Used by recorders and monitors.
    pub fn subscribe_all(&mut self, handler: impl FnMut(&Envelope) + Send + 'static) {
        self.catch_all = Some(Box::new(handler));
    }

    pub fn publish(&self, data_type_id: i32, payload: Vec<u8>, sample_ts: Micros) -> Result<(), BusError> {
        let env = Envelope {
            data_type_id,
            payload,
            sample_ts,
            sent_ts: self.clock.now_us(),
            received_ts: 0,
            sender_stamp: self.own_stamp,
        };
        let bytes = encode_envelope(&env)?;
        self.transport.send(&bytes)?;
        self.counters.sent.fetch_add(1, Ordering::Relaxed);
        Ok(())
    }

    /// Receive and dispatch everything that arrives within `timeout`.
    /// Returns the number of handler invocations.
    pub fn poll(&mut self, timeout: Duration) -> usize {
        let deadline = Instant::now() + timeout;
        let mut delivered = 0;
        loop {
            let remaining = deadline.saturating_duration_since(Instant::now());
            match self.transport.recv(remaining) {
                Ok(Some(datagram)) => delivered += self.dispatch(&datagram),
                Ok(None) if remaining.is_zero() => break,
                Ok(None) => {}
                Err(_) => {
                    self.counters.malformed.fetch_add(1, Ordering::Relaxed);
                    if remaining.is_zero() {
                        break;
                    }
                }
            }
        }
        delivered
    }

    /// Like [`poll`](Self::poll) but returns as soon as at least one envelope
    /// was delivered and the transport has nothing more queued.
    pub fn poll_some(&mut self, timeout: Duration) -> usize {
        let deadline = Instant::now() + timeout;
        let mut delivered = 0;
        loop {
            let remaining = if delivered > 0 {
                Duration::ZERO
            } else {
                deadline.saturating_duration_since(Instant::now())
            };
            match self.transport.recv(remaining) {
                Ok(Some(datagram)) => delivered += self.dispatch(&datagram),
                Ok(None) if remaining.is_zero() => break,
                Ok(None) => {}
                Err(_) => {
                    self.counters.malformed.fetch_add(1, Ordering::Relaxed);
                    if remaining.is_zero() {
                        break;
                    }
                }
            }
        }
        delivered
    }

    fn dispatch(&mut self, datagram: &[u8]) -> usize {
        let mut env = match decode_envelope(datagram) {
            Ok(env) => env,
            Err(_) => {
                self.counters.malformed.fetch_add(1, Ordering::Relaxed);
                return 0;
            }
        };
        env.received_ts = self.clock.now_us();
        self.counters.received.fetch_add(1, Ordering::Relaxed);
        if env.sender_stamp == self.own_stamp {
            self.counters.self_filtered.fetch_add(1, Ordering::Relaxed);
            return 0;
        }
        let handler = match self.handlers.get_mut(&env.data_type_id) {
            Some(h) => h,
            None => match self.catch_all.as_mut() {
                Some(h) => h,
                None => {
                    self.counters.dropped.fetch_add(1, Ordering::Relaxed);
                    return 0;
                }
            },
        };
        handler(&env);
        self.counters.delivered.fetch_add(1, Ordering::Relaxed);
        1
    }

    pub fn stats(&self) -> BusStats {
        let c = &self.counters;
        BusStats {
            sent: c.sent.load(Ordering::Relaxed),
            received: c.received.load(Ordering::Relaxed),
            delivered: c.delivered.load(Ordering::Relaxed),
            dropped: c.dropped.load(Ordering::Relaxed),
            self_filtered: c.self_filtered.load(Ordering::Relaxed),
            malformed: c.malformed.load(Ordering::Relaxed),
        }
    }
}
