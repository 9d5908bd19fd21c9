use std::io::{self, Write};
use std::sync::atomic::{AtomicBool, Ordering};
use std::time::{Duration, Instant};

use thiserror::Error;

use crate::bus::{decode_envelope, encode_envelope, BusError, BusSession, Envelope};
use crate::messages::MessageKind;

/// Appends envelopes as `u32 little-endian length` + wire encoding.
pub struct Recorder<W: Write> {
    out: W,
    count: usize,
}

impl<W: Write> Recorder<W> {
    pub fn new(out: W) -> Self {
        Self { out, count: 0 }
    }

    pub fn append(&mut self, env: &Envelope) -> io::Result<()> {
        let bytes = encode_envelope(env).map_err(|e| io::Error::new(io::ErrorKind::InvalidInput, e))?;
        self.out.write_all(&(bytes.len() as u32).to_le_bytes())?;
        self.out.write_all(&bytes)?;
        self.count += 1;
        Ok(())
    }

    pub fn count(&self) -> usize {
        self.count
    }

    pub fn flush(&mut self) -> io::Result<()> {
        self.out.flush()
    }

    pub fn into_inner(self) -> W {
        self.out
    }
}

/// Where and why reading a recording stopped early.
#[derive(Debug, Clone, PartialEq, Eq, Error)]
#[error("recording corrupt at byte {offset}: {reason}")]
pub struct CorruptRecording {
    pub offset: usize,
    pub reason: String,
}

/// Every valid envelope of a recording, stopping at the first damaged entry.
pub fn read_recording(bytes: &[u8]) -> (Vec<Envelope>, Option<CorruptRecording>) {
    let mut out = Vec::new();
    let mut off = 0;
    while off < bytes.len() {
        let corrupt = |reason: String| Some(CorruptRecording { offset: off, reason });
        let Some(len_bytes) = bytes.get(off..off + 4) else {
            return (out, corrupt("truncated length prefix".into()));
        };
        let len = u32::from_le_bytes(len_bytes.try_into().unwrap()) as usize;
        let Some(body) = bytes.get(off + 4..off + 4 + len) else {
            return (out, corrupt(format!("entry of {len} bytes runs past the end")));
        };
        match decode_envelope(body) {
            Ok(env) => out.push(env),
            Err(e) => return (out, corrupt(e.to_string())),
        }
        off += 4 + len;
    }
    (out, None)
}

/// Record everything the session receives until `stop` is raised or
/// `limit` envelopes have been written.
pub fn record<W: Write>(
    session: &mut BusSession,
    out: W,
    stop: &AtomicBool,
    limit: Option<usize>,
) -> io::Result<usize> {
    let queue = std::sync::Arc::new(std::sync::Mutex::new(Vec::<Envelope>::new()));
    let q = std::sync::Arc::clone(&queue);
    session.subscribe_all(move |e: &Envelope| q.lock().unwrap().push(e.clone()));
    let mut rec = Recorder::new(out);
    while !stop.load(Ordering::Relaxed) && limit.is_none_or(|l| rec.count() < l) {
        session.poll_some(Duration::from_millis(50));
        let batch = std::mem::take(&mut *queue.lock().unwrap());
        for env in batch {
            if limit.is_some_and(|l| rec.count() >= l) {
                break;
            }
            rec.append(&env)?;
        }
        rec.flush()?;
    }
    Ok(rec.count())
}

/// Re-publish recorded payloads with the original receive-time gaps divided
/// by `speed`. Sample times are kept; the sender stamp becomes the session's.
pub fn replay(envs: &[Envelope], session: &BusSession, speed: f64, stop: &AtomicBool) -> Result<usize, BusError> {
    assert!(speed > 0.0 && speed.is_finite(), "replay speed must be positive");
    let Some(first) = envs.first() else {
        return Ok(0);
    };
    let t0 = Instant::now();
    let mut sent = 0;
    for env in envs {
        if stop.load(Ordering::Relaxed) {
            break;
        }
        let offset_us = env.received_ts.saturating_sub(first.received_ts) as f64 / speed;
        let due = t0 + Duration::from_secs_f64(offset_us * 1e-6);
        let now = Instant::now();
        if due > now {
            std::thread::sleep(due - now);
        }
        session.publish(env.data_type_id, env.payload.clone(), env.sample_ts)?;
        sent += 1;
    }
    Ok(sent)
}

/// One monitor line: receive time, kind, sender stamp, payload size.
pub fn monitor_line(env: &Envelope) -> String {
    let kind = MessageKind::from_type_id(env.data_type_id)
        .map_or_else(|| format!("type{}", env.data_type_id), |k| k.name().to_string());
    format!(
        "{} {} {} {}",
        env.received_ts,
        kind,
        env.sender_stamp,
        env.payload.len()
    )
}
