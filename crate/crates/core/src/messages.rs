//! The standard message set: typed message bodies exchanged over the bus,
//! their numeric type ids and their fixed-layout payload codecs.
//!
//! Body encoding is little-endian, fields in declaration order. Floats are
//! IEEE-754 binary64, text is a `u16` byte length followed by UTF-8, lists
//! are a `u16` element count followed by the elements.

use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::bus::{BusError, BusSession, Envelope};
use crate::clock::Micros;

pub const MAX_STEERING_RAD: f64 = 0.6;
pub const MIN_ACCEL: f64 = -6.0;
pub const MAX_ACCEL: f64 = 3.0;
pub const MIN_CENTER_POINTS: usize = 2;
pub const MAX_CENTER_POINTS: usize = 32;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum MessageKind {
    ImageNotice,
    CenterLine,
    SteeringRequest,
    AccelerationRequest,
    DiagnosticState,
}

impl MessageKind {
    pub const ALL: [MessageKind; 5] = [
        MessageKind::ImageNotice,
        MessageKind::CenterLine,
        MessageKind::SteeringRequest,
        MessageKind::AccelerationRequest,
        MessageKind::DiagnosticState,
    ];

    pub const fn type_id(self) -> i32 {
        match self {
            MessageKind::ImageNotice => 14,
            MessageKind::CenterLine => 21,
            MessageKind::SteeringRequest => 31,
            MessageKind::AccelerationRequest => 32,
            MessageKind::DiagnosticState => 40,
        }
    }

    pub fn from_type_id(id: i32) -> Option<Self> {
        Self::ALL.into_iter().find(|k| k.type_id() == id)
    }

    pub const fn name(self) -> &'static str {
        match self {
            MessageKind::ImageNotice => "ImageNotice",
            MessageKind::CenterLine => "CenterLine",
            MessageKind::SteeringRequest => "SteeringRequest",
            MessageKind::AccelerationRequest => "AccelerationRequest",
            MessageKind::DiagnosticState => "DiagnosticState",
        }
    }
}

/// Registry lookup: numeric id of a message kind.
pub fn message_type_id(kind: MessageKind) -> i32 {
    kind.type_id()
}

impl fmt::Display for MessageKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.name())
    }
}

impl FromStr for MessageKind {
    type Err = String;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Self::ALL
            .into_iter()
            .find(|k| k.name() == s)
            .ok_or_else(|| format!("unknown message kind `{s}`"))
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Error)]
pub enum MessageError {
    #[error("message body truncated")]
    Truncated,
    #[error("{0} trailing bytes after message body")]
    TrailingBytes(usize),
    #[error("invariant violated: {0}")]
    InvariantViolation(String),
    #[error("envelope type id {0} is not a registered message kind")]
    UnknownType(i32),
}

fn violation(msg: impl Into<String>) -> MessageError {
    MessageError::InvariantViolation(msg.into())
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum PixelFormat {
    Gray8,
    Rgb8,
}

impl PixelFormat {
    pub const fn bytes_per_pixel(self) -> usize {
        match self {
            PixelFormat::Gray8 => 1,
            PixelFormat::Rgb8 => 3,
        }
    }

    fn code(self) -> u8 {
        match self {
            PixelFormat::Gray8 => 0,
            PixelFormat::Rgb8 => 1,
        }
    }

    fn from_code(c: u8) -> Result<Self, MessageError> {
        match c {
            0 => Ok(PixelFormat::Gray8),
            1 => Ok(PixelFormat::Rgb8),
            other => Err(violation(format!("unknown pixel format code {other}"))),
        }
    }
}

/// Announces that a new frame is available in a frame store.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ImageNotice {
    pub store_name: String,
    pub width: u32,
    pub height: u32,
    pub format: PixelFormat,
    pub sequence: u64,
}

/// A point on the ground plane in the vehicle frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct GroundPoint {
    /// Meters ahead.
    pub x: f64,
    /// Meters to the left.
    pub y: f64,
}

impl GroundPoint {
    pub const fn new(x: f64, y: f64) -> Self {
        Self { x, y }
    }
}

/// Points along the middle of the detected lane, ordered by distance ahead.
#[derive(Debug, Clone, PartialEq)]
pub struct CenterLine {
    points: Vec<GroundPoint>,
    source_sample_ts: Micros,
}

impl CenterLine {
    pub fn new(points: Vec<GroundPoint>, source_sample_ts: Micros) -> Result<Self, MessageError> {
        if !(MIN_CENTER_POINTS..=MAX_CENTER_POINTS).contains(&points.len()) {
            return Err(violation(format!(
                "center line needs {MIN_CENTER_POINTS}..={MAX_CENTER_POINTS} points, got {}",
                points.len()
            )));
        }
        if points.iter().any(|p| !p.x.is_finite() || !p.y.is_finite()) {
            return Err(violation("center line point is not finite"));
        }
        if points[0].x <= 0.0 {
            return Err(violation("center line x must be positive"));
        }
        if points.windows(2).any(|w| w[1].x <= w[0].x) {
            return Err(violation("center line x must be strictly increasing"));
        }
        Ok(Self {
            points,
            source_sample_ts,
        })
    }

    pub fn points(&self) -> &[GroundPoint] {
        &self.points
    }

    pub fn source_sample_ts(&self) -> Micros {
        self.source_sample_ts
    }

    /// Same points, lateral coordinate shifted by `dy`.
    pub fn offset_y(&self, dy: f64) -> Self {
        Self {
            points: self.points.iter().map(|p| GroundPoint::new(p.x, p.y + dy)).collect(),
            source_sample_ts: self.source_sample_ts,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct SteeringRequest {
    /// Radians, positive turns left.
    pub ground_steering_angle: f64,
    pub source_sample_ts: Micros,
}

impl SteeringRequest {
    /// Build a request, clamping the angle into the actuator range.
    /// The flag tells whether clamping changed the value.
    pub fn clamped(angle: f64, source_sample_ts: Micros) -> (Self, bool) {
        let a = angle.clamp(-MAX_STEERING_RAD, MAX_STEERING_RAD);
        (
            Self {
                ground_steering_angle: a,
                source_sample_ts,
            },
            a != angle,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct AccelerationRequest {
    /// m/s², positive accelerates.
    pub acceleration: f64,
    pub source_sample_ts: Micros,
}

impl AccelerationRequest {
    pub fn clamped(accel: f64, source_sample_ts: Micros) -> (Self, bool) {
        let a = accel.clamp(MIN_ACCEL, MAX_ACCEL);
        (
            Self {
                acceleration: a,
                source_sample_ts,
            },
            a != accel,
        )
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum HealthState {
    Active,
    Degraded,
    SafeStop,
}

impl HealthState {
    fn code(self) -> u8 {
        match self {
            HealthState::Active => 0,
            HealthState::Degraded => 1,
            HealthState::SafeStop => 2,
        }
    }

    fn from_code(c: u8) -> Result<Self, MessageError> {
        match c {
            0 => Ok(HealthState::Active),
            1 => Ok(HealthState::Degraded),
            2 => Ok(HealthState::SafeStop),
            other => Err(violation(format!("unknown health state code {other}"))),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct DiagnosticState {
    pub service: String,
    pub state: HealthState,
    pub detail: String,
}

impl DiagnosticState {
    pub fn new(service: impl Into<String>, state: HealthState, detail: impl Into<String>) -> Self {
        Self {
            service: service.into(),
            state,
            detail: detail.into(),
        }
    }
}

/// Any message of the standard set.
#[derive(Debug, Clone, PartialEq)]
pub enum Message {
    ImageNotice(ImageNotice),
    CenterLine(CenterLine),
    SteeringRequest(SteeringRequest),
    AccelerationRequest(AccelerationRequest),
    DiagnosticState(DiagnosticState),
}

impl Message {
    pub fn kind(&self) -> MessageKind {
        match self {
            Message::ImageNotice(_) => MessageKind::ImageNotice,
            Message::CenterLine(_) => MessageKind::CenterLine,
            Message::SteeringRequest(_) => MessageKind::SteeringRequest,
            Message::AccelerationRequest(_) => MessageKind::AccelerationRequest,
            Message::DiagnosticState(_) => MessageKind::DiagnosticState,
        }
    }

    pub fn encode_body(&self) -> Vec<u8> {
        let mut w = BodyWriter::default();
        match self {
            Message::ImageNotice(m) => m.write(&mut w),
            Message::CenterLine(m) => m.write(&mut w),
            Message::SteeringRequest(m) => m.write(&mut w),
            Message::AccelerationRequest(m) => m.write(&mut w),
            Message::DiagnosticState(m) => m.write(&mut w),
        }
        w.buf
    }

    pub fn decode_body(kind: MessageKind, bytes: &[u8]) -> Result<Self, MessageError> {
        Ok(match kind {
            MessageKind::ImageNotice => Message::ImageNotice(ImageNotice::decode(bytes)?),
            MessageKind::CenterLine => Message::CenterLine(CenterLine::decode(bytes)?),
            MessageKind::SteeringRequest => Message::SteeringRequest(SteeringRequest::decode(bytes)?),
            MessageKind::AccelerationRequest => Message::AccelerationRequest(AccelerationRequest::decode(bytes)?),
            MessageKind::DiagnosticState => Message::DiagnosticState(DiagnosticState::decode(bytes)?),
        })
    }

    pub fn from_envelope(env: &Envelope) -> Result<Self, MessageError> {
        let kind = MessageKind::from_type_id(env.data_type_id).ok_or(MessageError::UnknownType(env.data_type_id))?;
        Self::decode_body(kind, &env.payload)
    }
}

/// A message type with a fixed kind and body codec.
pub trait BusMessage: Sized {
    const KIND: MessageKind;

    fn write(&self, w: &mut BodyWriter);
    fn read(r: &mut BodyReader<'_>) -> Result<Self, MessageError>;

    fn encode(&self) -> Vec<u8> {
        let mut w = BodyWriter::default();
        self.write(&mut w);
        w.buf
    }

    fn decode(bytes: &[u8]) -> Result<Self, MessageError> {
        let mut r = BodyReader::new(bytes);
        let m = Self::read(&mut r)?;
        r.finish()?;
        Ok(m)
    }
}

#[derive(Default)]
pub struct BodyWriter {
    buf: Vec<u8>,
}

impl BodyWriter {
    fn u8(&mut self, v: u8) {
        self.buf.push(v);
    }
    fn u16(&mut self, v: u16) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u32(&mut self, v: u32) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn u64(&mut self, v: u64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn f64(&mut self, v: f64) {
        self.buf.extend_from_slice(&v.to_le_bytes());
    }
    fn text(&mut self, s: &str) {
        let bytes = s.as_bytes();
        let n = bytes.len().min(u16::MAX as usize);
        self.u16(n as u16);
        self.buf.extend_from_slice(&bytes[..n]);
    }
}

pub struct BodyReader<'a> {
    bytes: &'a [u8],
    at: usize,
}

impl<'a> BodyReader<'a> {
    fn new(bytes: &'a [u8]) -> Self {
        Self { bytes, at: 0 }
    }

    fn take(&mut self, n: usize) -> Result<&'a [u8], MessageError> {
        let end = self.at.checked_add(n).ok_or(MessageError::Truncated)?;
        let s = self.bytes.get(self.at..end).ok_or(MessageError::Truncated)?;
        self.at = end;
        Ok(s)
    }
    fn u8(&mut self) -> Result<u8, MessageError> {
        Ok(self.take(1)?[0])
    }
    fn u16(&mut self) -> Result<u16, MessageError> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().unwrap()))
    }
    fn u32(&mut self) -> Result<u32, MessageError> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().unwrap()))
    }
    fn u64(&mut self) -> Result<u64, MessageError> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn f64(&mut self) -> Result<f64, MessageError> {
        Ok(f64::from_le_bytes(self.take(8)?.try_into().unwrap()))
    }
    fn text(&mut self) -> Result<String, MessageError> {
        let n = self.u16()? as usize;
        let raw = self.take(n)?;
        String::from_utf8(raw.to_vec()).map_err(|_| violation("text is not UTF-8"))
    }
    fn finish(&self) -> Result<(), MessageError> {
        match self.bytes.len() - self.at {
            0 => Ok(()),
            n => Err(MessageError::TrailingBytes(n)),
        }
    }
}

impl BusMessage for ImageNotice {
    const KIND: MessageKind = MessageKind::ImageNotice;

    fn write(&self, w: &mut BodyWriter) {
        w.text(&self.store_name);
        w.u32(self.width);
        w.u32(self.height);
        w.u8(self.format.code());
        w.u64(self.sequence);
    }

    fn read(r: &mut BodyReader<'_>) -> Result<Self, MessageError> {
        let m = ImageNotice {
            store_name: r.text()?,
            width: r.u32()?,
            height: r.u32()?,
            format: PixelFormat::from_code(r.u8()?)?,
            sequence: r.u64()?,
        };
        if m.store_name.is_empty() {
            return Err(violation("store name is empty"));
        }
        if m.width == 0 || m.height == 0 {
            return Err(violation("image dimensions must be positive"));
        }
        Ok(m)
    }
}

impl BusMessage for CenterLine {
    const KIND: MessageKind = MessageKind::CenterLine;

    fn write(&self, w: &mut BodyWriter) {
        w.u16(self.points.len() as u16);
        for p in &self.points {
            w.f64(p.x);
            w.f64(p.y);
        }
        w.u64(self.source_sample_ts);
    }

    fn read(r: &mut BodyReader<'_>) -> Result<Self, MessageError> {
        let n = r.u16()? as usize;
        let mut points = Vec::with_capacity(n.min(MAX_CENTER_POINTS));
        for _ in 0..n {
            points.push(GroundPoint::new(r.f64()?, r.f64()?));
        }
        let ts = r.u64()?;
        CenterLine::new(points, ts)
    }
}

impl BusMessage for SteeringRequest {
    const KIND: MessageKind = MessageKind::SteeringRequest;

    fn write(&self, w: &mut BodyWriter) {
        w.f64(self.ground_steering_angle);
        w.u64(self.source_sample_ts);
    }

    fn read(r: &mut BodyReader<'_>) -> Result<Self, MessageError> {
        let m = SteeringRequest {
            ground_steering_angle: r.f64()?,
            source_sample_ts: r.u64()?,
        };
        if !(m.ground_steering_angle.abs() <= MAX_STEERING_RAD) {
            return Err(violation(format!(
                "steering angle {} outside ±{MAX_STEERING_RAD}",
                m.ground_steering_angle
            )));
        }
        Ok(m)
    }
}

impl BusMessage for AccelerationRequest {
    const KIND: MessageKind = MessageKind::AccelerationRequest;

    fn write(&self, w: &mut BodyWriter) {
        w.f64(self.acceleration);
        w.u64(self.source_sample_ts);
    }

    fn read(r: &mut BodyReader<'_>) -> Result<Self, MessageError> {
        let m = AccelerationRequest {
            acceleration: r.f64()?,
            source_sample_ts: r.u64()?,
        };
        if !(MIN_ACCEL..=MAX_ACCEL).contains(&m.acceleration) {
            return Err(violation(format!(
                "acceleration {} outside [{MIN_ACCEL}, {MAX_ACCEL}]",
                m.acceleration
            )));
        }
        Ok(m)
    }
}

impl BusMessage for DiagnosticState {
    const KIND: MessageKind = MessageKind::DiagnosticState;

    fn write(&self, w: &mut BodyWriter) {
        w.text(&self.service);
        w.u8(self.state.code());
        w.text(&self.detail);
    }

    fn read(r: &mut BodyReader<'_>) -> Result<Self, MessageError> {
        Ok(DiagnosticState {
            service: r.text()?,
            state: HealthState::from_code(r.u8()?)?,
            detail: r.text()?,
        })
    }
}

impl From<ImageNotice> for Message {
    fn from(m: ImageNotice) -> Self {
        Message::ImageNotice(m)
    }
}
impl From<CenterLine> for Message {
    fn from(m: CenterLine) -> Self {
        Message::CenterLine(m)
    }
}
impl From<SteeringRequest> for Message {
    fn from(m: SteeringRequest) -> Self {
        Message::SteeringRequest(m)
    }
}
impl From<AccelerationRequest> for Message {
    fn from(m: AccelerationRequest) -> Self {
        Message::AccelerationRequest(m)
    }
}
impl From<DiagnosticState> for Message {
    fn from(m: DiagnosticState) -> Self {
        Message::DiagnosticState(m)
    }
}

impl BusSession {
    /// Publish a typed message under its registered type id.
    pub fn publish_message(&self, msg: &Message, sample_ts: Micros) -> Result<(), BusError> {
        self.publish(msg.kind().type_id(), msg.encode_body(), sample_ts)
    }
}

/// Render the registry as `Name=id` lines, in kind order.
pub fn registry_listing() -> String {
    MessageKind::ALL
        .iter()
        .map(|k| format!("{}={}\n", k.name(), k.type_id()))
        .collect()
}
