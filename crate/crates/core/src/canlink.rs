//! CAN link: fixed-point signal packing, the actuation frame codec and an
//! in-process broadcast bus where every node filters by identifier.

use std::collections::{HashSet, VecDeque};
use std::fmt;
use std::str::FromStr;
use std::sync::{Arc, Mutex};

use thiserror::Error;

use crate::clock::Micros;
use crate::messages::{AccelerationRequest, SteeringRequest};

pub const ACTUATION_ID: u16 = 0x12D;
pub const MAX_STANDARD_ID: u16 = 0x7FF;

/// Signal map used by the CAN proxy unless another one is supplied.
pub const DEFAULT_SIGNAL_MAP: &str = "\
# name          id     start len signedness scale  offset
steering        0x12D  0     16  signed     0.001  0
acceleration    0x12D  16    16  signed     0.001  0
counter         0x12D  32    8   unsigned   1      0
checksum        0x12D  40    8   unsigned   1      0
";

#[derive(Debug, Clone, PartialEq, Error)]
pub enum CanError {
    #[error("value {value} is not representable in signal `{signal}`")]
    Range { signal: String, value: f64 },
    #[error("invalid frame: {0}")]
    InvalidFrame(String),
    #[error("signal map line {line}: {msg}")]
    SignalMap { line: usize, msg: String },
    #[error("signal map lacks signal `{0}`")]
    MissingSignal(String),
    #[error("checksum mismatch: computed {computed:#04x}, frame carries {carried:#04x}")]
    Checksum { computed: u8, carried: u8 },
    #[error("frame id {got:#05x} is not the actuation id {expected:#05x}")]
    WrongId { expected: u16, got: u16 },
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct CanFrame {
    id: u16,
    dlc: u8,
    data: [u8; 8],
}

impl CanFrame {
    pub fn new(id: u16, payload: &[u8]) -> Result<Self, CanError> {
        if id > MAX_STANDARD_ID {
            return Err(CanError::InvalidFrame(format!("id {id:#x} exceeds 11 bits")));
        }
        if payload.len() > 8 {
            return Err(CanError::InvalidFrame(format!("{} data bytes", payload.len())));
        }
        let mut data = [0u8; 8];
        data[..payload.len()].copy_from_slice(payload);
        Ok(Self {
            id,
            dlc: payload.len() as u8,
            data,
        })
    }

    pub fn id(&self) -> u16 {
        self.id
    }

    pub fn dlc(&self) -> u8 {
        self.dlc
    }

    pub fn data(&self) -> &[u8] {
        &self.data[..self.dlc as usize]
    }

    pub fn data_mut(&mut self) -> &mut [u8] {
        &mut self.data[..self.dlc as usize]
    }

    /// `ID#HEXDATA`, the usual text rendering of a frame.
    pub fn to_log_string(&self) -> String {
        let hex: String = self.data().iter().map(|b| format!("{b:02X}")).collect();
        format!("{:03X}#{hex}", self.id)
    }
}

impl fmt::Display for CanFrame {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(&self.to_log_string())
    }
}

impl FromStr for CanFrame {
    type Err = CanError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        let (id, hex) = s
            .split_once('#')
            .ok_or_else(|| CanError::InvalidFrame(format!("missing `#` in `{s}`")))?;
        let id = u16::from_str_radix(id, 16).map_err(|_| CanError::InvalidFrame(format!("bad id `{id}`")))?;
        if hex.len() % 2 != 0 {
            return Err(CanError::InvalidFrame(format!("odd hex length in `{hex}`")));
        }
        let bytes = (0..hex.len())
            .step_by(2)
            .map(|i| u8::from_str_radix(&hex[i..i + 2], 16))
            .collect::<Result<Vec<_>, _>>()
            .map_err(|_| CanError::InvalidFrame(format!("bad hex `{hex}`")))?;
        CanFrame::new(id, &bytes)
    }
}

/// One log line: `<timestamp µs> <ID>#<HEXDATA>`.
pub fn format_log_line(ts: Micros, frame: &CanFrame) -> String {
    format!("{ts} {frame}")
}

pub fn parse_log_line(line: &str) -> Result<(Micros, CanFrame), CanError> {
    let (ts, frame) = line
        .trim()
        .split_once(' ')
        .ok_or_else(|| CanError::InvalidFrame(format!("bad log line `{line}`")))?;
    let ts = ts
        .parse()
        .map_err(|_| CanError::InvalidFrame(format!("bad timestamp `{ts}`")))?;
    Ok((ts, frame.trim().parse()?))
}

/// Placement and scaling of one little-endian signal inside a frame.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalSpec {
    pub name: String,
    pub frame_id: u16,
    pub start_bit: u32,
    pub bit_length: u32,
    pub signed: bool,
    pub scale: f64,
    pub offset: f64,
}

impl SignalSpec {
    fn check(&self) -> Result<(), String> {
        if self.bit_length == 0 || self.bit_length > 32 {
            return Err(format!("bit length {} not in 1..=32", self.bit_length));
        }
        if self.start_bit + self.bit_length > 64 {
            return Err("signal extends past bit 63".into());
        }
        if self.scale == 0.0 || !self.scale.is_finite() || !self.offset.is_finite() {
            return Err("scale must be finite and non-zero".into());
        }
        if self.frame_id > MAX_STANDARD_ID {
            return Err(format!("frame id {:#x} exceeds 11 bits", self.frame_id));
        }
        Ok(())
    }

    fn raw_bounds(&self) -> (i64, i64) {
        if self.signed {
            (-(1i64 << (self.bit_length - 1)), (1i64 << (self.bit_length - 1)) - 1)
        } else {
            (0, (1i64 << self.bit_length) - 1)
        }
    }

    fn mask(&self) -> u64 {
        ((1u64 << self.bit_length) - 1) << self.start_bit
    }
}

fn frame_bits(data: &[u8]) -> u64 {
    let mut b = [0u8; 8];
    b[..data.len()].copy_from_slice(data);
    u64::from_le_bytes(b)
}

fn store_bits(data: &mut [u8], bits: u64) {
    let b = bits.to_le_bytes();
    let n = data.len();
    data.copy_from_slice(&b[..n]);
}

/// Write `physical` into the signal's bits, leaving other bits untouched.
pub fn pack_signal(data: &mut [u8], spec: &SignalSpec, physical: f64) -> Result<(), CanError> {
    let range = || CanError::Range {
        signal: spec.name.clone(),
        value: physical,
    };
    if (spec.start_bit + spec.bit_length) as usize > data.len() * 8 {
        return Err(range());
    }
    let raw = ((physical - spec.offset) / spec.scale).round();
    let (lo, hi) = spec.raw_bounds();
    if !raw.is_finite() || raw < lo as f64 || raw > hi as f64 {
        return Err(range());
    }
    let raw = raw as i64;
    let field = (raw as u64) & ((1u64 << spec.bit_length) - 1);
    let bits = (frame_bits(data) & !spec.mask()) | (field << spec.start_bit);
    store_bits(data, bits);
    Ok(())
}

pub fn unpack_signal(data: &[u8], spec: &SignalSpec) -> f64 {
    let field = (frame_bits(data) & spec.mask()) >> spec.start_bit;
    let raw = if spec.signed && field & (1u64 << (spec.bit_length - 1)) != 0 {
        field as i64 - (1i64 << spec.bit_length)
    } else {
        field as i64
    };
    raw as f64 * spec.scale + spec.offset
}

/// Parsed signal-map file.
#[derive(Debug, Clone, PartialEq)]
pub struct SignalMap {
    signals: Vec<SignalSpec>,
}

impl SignalMap {
    /// Parse `name id start_bit length signed|unsigned scale offset` lines.
    /// Blank lines and `#` comments are ignored.
    pub fn parse(text: &str) -> Result<Self, CanError> {
        let mut signals: Vec<SignalSpec> = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let err = |msg: String| CanError::SignalMap { line, msg };
            let f: Vec<&str> = content.split_whitespace().collect();
            if f.len() != 7 {
                return Err(err(format!("expected 7 fields, found {}", f.len())));
            }
            let frame_id = parse_id(f[1]).ok_or_else(|| err(format!("bad id `{}`", f[1])))?;
            let num = |s: &str| s.parse::<u32>().map_err(|_| err(format!("bad number `{s}`")));
            let real = |s: &str| s.parse::<f64>().map_err(|_| err(format!("bad number `{s}`")));
            let signed = match f[4] {
                "signed" => true,
                "unsigned" => false,
                other => return Err(err(format!("expected signed|unsigned, found `{other}`"))),
            };
            let spec = SignalSpec {
                name: f[0].to_string(),
                frame_id,
                start_bit: num(f[2])?,
                bit_length: num(f[3])?,
                signed,
                scale: real(f[5])?,
                offset: real(f[6])?,
            };
            spec.check().map_err(err)?;
            if signals.iter().any(|s| s.name == spec.name) {
                return Err(err(format!("duplicate signal `{}`", spec.name)));
            }
            signals.push(spec);
        }
        Ok(Self { signals })
    }

    pub fn get(&self, name: &str) -> Option<&SignalSpec> {
        self.signals.iter().find(|s| s.name == name)
    }

    pub fn signals(&self) -> &[SignalSpec] {
        &self.signals
    }
}

impl Default for SignalMap {
    fn default() -> Self {
        Self::parse(DEFAULT_SIGNAL_MAP).expect("built-in signal map parses")
    }
}

fn parse_id(s: &str) -> Option<u16> {
    match s.strip_prefix("0x").or_else(|| s.strip_prefix("0X")) {
        Some(hex) => u16::from_str_radix(hex, 16).ok(),
        None => s.parse().ok(),
    }
}

/// Steering and acceleration recovered from an actuation frame.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct DecodedActuation {
    pub steering: f64,
    pub acceleration: f64,
    pub counter: u8,
}

/// Encodes actuation requests into frames. Owns the rolling counter, so one
/// instance corresponds to one sending proxy.
#[derive(Debug, Clone)]
pub struct ActuationCodec {
    steering: SignalSpec,
    acceleration: SignalSpec,
    counter: SignalSpec,
    checksum: SignalSpec,
    next_counter: u8,
}

impl ActuationCodec {
    pub fn new(map: &SignalMap) -> Result<Self, CanError> {
        let get = |n: &str| map.get(n).cloned().ok_or_else(|| CanError::MissingSignal(n.into()));
        let codec = Self {
            steering: get("steering")?,
            acceleration: get("acceleration")?,
            counter: get("counter")?,
            checksum: get("checksum")?,
            next_counter: 0,
        };
        let id = codec.steering.frame_id;
        for s in [&codec.acceleration, &codec.counter, &codec.checksum] {
            if s.frame_id != id {
                return Err(CanError::SignalMap {
                    line: 0,
                    msg: format!("signal `{}` is not on frame {id:#x}", s.name),
                });
            }
        }
        if !codec.checksum.start_bit.is_multiple_of(8) || codec.checksum.bit_length != 8 {
            return Err(CanError::SignalMap {
                line: 0,
                msg: "checksum must be one whole byte".into(),
            });
        }
        Ok(codec)
    }

    pub fn frame_id(&self) -> u16 {
        self.steering.frame_id
    }

    pub fn next_counter(&self) -> u8 {
        self.next_counter
    }

    /// Pack both requests, stamp the rolling counter and the checksum.
    /// The counter advances only when a frame is produced.
    pub fn encode(&mut self, steering: &SteeringRequest, accel: &AccelerationRequest) -> Result<CanFrame, CanError> {
        let mut data = [0u8; 8];
        pack_signal(&mut data, &self.steering, steering.ground_steering_angle)?;
        pack_signal(&mut data, &self.acceleration, accel.acceleration)?;
        pack_signal(&mut data, &self.counter, self.next_counter as f64)?;
        let sum = self.checksum_of(&data);
        pack_signal(&mut data, &self.checksum, sum as f64)?;
        self.next_counter = self.next_counter.wrapping_add(1);
        CanFrame::new(self.frame_id(), &data)
    }

    /// XOR of every byte before the checksum byte.
    fn checksum_of(&self, data: &[u8]) -> u8 {
        let end = (self.checksum.start_bit / 8) as usize;
        data[..end].iter().fold(0, |acc, b| acc ^ b)
    }

    pub fn decode(&self, frame: &CanFrame) -> Result<DecodedActuation, CanError> {
        if frame.id() != self.frame_id() {
            return Err(CanError::WrongId {
                expected: self.frame_id(),
                got: frame.id(),
            });
        }
        let data = frame.data();
        let need = ((self.checksum.start_bit + 8) / 8) as usize;
        if data.len() < need {
            return Err(CanError::InvalidFrame(format!("dlc {} too short", data.len())));
        }
        let computed = self.checksum_of(data);
        let carried = unpack_signal(data, &self.checksum) as u8;
        if computed != carried {
            return Err(CanError::Checksum { computed, carried });
        }
        Ok(DecodedActuation {
            steering: unpack_signal(data, &self.steering),
            acceleration: unpack_signal(data, &self.acceleration),
            counter: unpack_signal(data, &self.counter) as u8,
        })
    }
}

/// Encode one actuation pair with the default signal map.
pub fn encode_actuation(
    codec: &mut ActuationCodec,
    steering: &SteeringRequest,
    accel: &AccelerationRequest,
) -> Result<CanFrame, CanError> {
    codec.encode(steering, accel)
}

/// Broadcast medium: every attached node sees every frame in one global
/// order and keeps only the ids its filter accepts.
#[derive(Clone, Default)]
pub struct SimBus {
    inner: Arc<Mutex<BusInner>>,
}

#[derive(Default)]
struct BusInner {
    next_node: u64,
    nodes: Vec<(u64, Arc<Mutex<NodeState>>)>,
    broadcasts: u64,
}

#[derive(Default)]
struct NodeState {
    filter: Option<HashSet<u16>>,
    inbox: VecDeque<CanFrame>,
    processed: u64,
    dropped: u64,
}

impl SimBus {
    pub fn new() -> Self {
        Self::default()
    }

    /// Attach a node accepting only `filter` ids, or everything for `None`.
    pub fn attach(&self, filter: Option<HashSet<u16>>) -> CanNode {
        let mut inner = self.inner.lock().unwrap();
        let id = inner.next_node;
        inner.next_node += 1;
        let state = Arc::new(Mutex::new(NodeState {
            filter,
            ..Default::default()
        }));
        inner.nodes.push((id, state.clone()));
        CanNode {
            bus: self.clone(),
            id,
            state,
        }
    }

    /// Deliver to every node; returns how many nodes accepted the frame.
    pub fn broadcast(&self, frame: &CanFrame) -> usize {
        let mut inner = self.inner.lock().unwrap();
        inner.broadcasts += 1;
        let mut accepted = 0;
        for (_, node) in &inner.nodes {
            let mut n = node.lock().unwrap();
            let take = n.filter.as_ref().is_none_or(|f| f.contains(&frame.id()));
            if take {
                n.inbox.push_back(*frame);
                n.processed += 1;
                accepted += 1;
            } else {
                n.dropped += 1;
            }
        }
        accepted
    }

    pub fn node_count(&self) -> usize {
        self.inner.lock().unwrap().nodes.len()
    }

    pub fn broadcasts(&self) -> u64 {
        self.inner.lock().unwrap().broadcasts
    }
}

/// A node on a [`SimBus`]. Detaches when dropped.
pub struct CanNode {
    bus: SimBus,
    id: u64,
    state: Arc<Mutex<NodeState>>,
}

impl CanNode {
    pub fn try_recv(&self) -> Option<CanFrame> {
        self.state.lock().unwrap().inbox.pop_front()
    }

    pub fn drain(&self) -> Vec<CanFrame> {
        self.state.lock().unwrap().inbox.drain(..).collect()
    }

    pub fn processed(&self) -> u64 {
        self.state.lock().unwrap().processed
    }

    pub fn dropped(&self) -> u64 {
        self.state.lock().unwrap().dropped
    }
}

impl Drop for CanNode {
    fn drop(&mut self) {
        if let Ok(mut inner) = self.bus.inner.lock() {
            inner.nodes.retain(|(id, _)| *id != self.id);
        }
    }
}
