use thiserror::Error;

use crate::clock::Micros;

/// Leading bytes of every encoded envelope.
pub const MAGIC: [u8; 2] = [0xAD, 0x45];
/// Largest payload an envelope may carry. Keeps one envelope inside one datagram.
pub const MAX_PAYLOAD: usize = 60_000;

const HEADER_LEN: usize = 6;
/// Body bytes preceding the payload: type id, three timestamps, stamp, payload length.
const FIXED_BODY_LEN: usize = 4 + 8 * 3 + 4 + 4;

/// One message on the bus.
#[derive(Debug, Clone, PartialEq, Eq, Default)]
pub struct Envelope {
    pub data_type_id: i32,
    pub payload: Vec<u8>,
    /// When the underlying phenomenon was sampled.
    pub sample_ts: Micros,
    pub sent_ts: Micros,
    pub received_ts: Micros,
    pub sender_stamp: u32,
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum CodecError {
    #[error("payload of {0} bytes exceeds the {MAX_PAYLOAD} byte limit")]
    PayloadTooLarge(usize),
    #[error("bad magic bytes")]
    BadMagic,
    #[error("input truncated: need {needed} bytes, have {available}")]
    Truncated { needed: usize, available: usize },
    #[error("declared body length {declared} does not match the {actual} bytes present")]
    LengthMismatch { declared: usize, actual: usize },
}

/// Serialize an envelope into its wire form.
///
/// Layout: `AD 45`, `u32` body length, then the body: `i32` type id,
/// `u64` sample/sent/received timestamps, `u32` sender stamp, `u32`
/// payload length and the payload bytes. All integers little-endian.
pub fn encode_envelope(env: &Envelope) -> Result<Vec<u8>, CodecError> {
    if env.payload.len() > MAX_PAYLOAD {
        return Err(CodecError::PayloadTooLarge(env.payload.len()));
    }
    let body_len = FIXED_BODY_LEN + env.payload.len();
    let mut out = Vec::with_capacity(HEADER_LEN + body_len);
    out.extend_from_slice(&MAGIC);
    out.extend_from_slice(&(body_len as u32).to_le_bytes());
    out.extend_from_slice(&env.data_type_id.to_le_bytes());
    out.extend_from_slice(&env.sample_ts.to_le_bytes());
    out.extend_from_slice(&env.sent_ts.to_le_bytes());
    out.extend_from_slice(&env.received_ts.to_le_bytes());
    out.extend_from_slice(&env.sender_stamp.to_le_bytes());
    out.extend_from_slice(&(env.payload.len() as u32).to_le_bytes());
    out.extend_from_slice(&env.payload);
    Ok(out)
}

pub fn decode_envelope(bytes: &[u8]) -> Result<Envelope, CodecError> {
    if bytes.is_empty() {
        return Err(CodecError::Truncated {
            needed: HEADER_LEN,
            available: 0,
        });
    }
    if bytes[0] != MAGIC[0] || (bytes.len() > 1 && bytes[1] != MAGIC[1]) {
        return Err(CodecError::BadMagic);
    }
    if bytes.len() < HEADER_LEN + FIXED_BODY_LEN {
        return Err(CodecError::Truncated {
            needed: HEADER_LEN + FIXED_BODY_LEN,
            available: bytes.len(),
        });
    }
    let body = &bytes[HEADER_LEN..];
    let declared = u32_at(bytes, 2) as usize;
    if declared != body.len() {
        return Err(CodecError::LengthMismatch {
            declared,
            actual: body.len(),
        });
    }
    let payload_len = u32_at(body, 32) as usize;
    if FIXED_BODY_LEN + payload_len != body.len() {
        return Err(CodecError::LengthMismatch {
            declared: FIXED_BODY_LEN + payload_len,
            actual: body.len(),
        });
    }
    if payload_len > MAX_PAYLOAD {
        return Err(CodecError::PayloadTooLarge(payload_len));
    }
    Ok(Envelope {
        data_type_id: i32::from_le_bytes(body[0..4].try_into().unwrap()),
        sample_ts: u64_at(body, 4),
        sent_ts: u64_at(body, 12),
        received_ts: u64_at(body, 20),
        sender_stamp: u32_at(body, 28),
        payload: body[FIXED_BODY_LEN..].to_vec(),
    })
}

fn u32_at(b: &[u8], at: usize) -> u32 {
    u32::from_le_bytes(b[at..at + 4].try_into().unwrap())
}

fn u64_at(b: &[u8], at: usize) -> u64 {
    u64::from_le_bytes(b[at..at + 8].try_into().unwrap())
}
