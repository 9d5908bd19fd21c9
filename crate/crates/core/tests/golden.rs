//! Byte-level wire formats pinned against checked-in files.
//! Run with `LANEPIPE_BLESS=1` to rewrite them after an intended change.

use std::fmt::Write;
use std::path::PathBuf;

use lanepipe::bus::encode_envelope;
use lanepipe::canlink::{format_log_line, ActuationCodec, SignalMap};
use lanepipe::messages::registry_listing;
use lanepipe::{
    AccelerationRequest, CenterLine, DiagnosticState, Envelope, GroundPoint, HealthState, ImageNotice, Message,
    PixelFormat, SteeringRequest,
};

fn check(name: &str, actual: &str) {
    let path = PathBuf::from(env!("CARGO_MANIFEST_DIR"))
        .join("tests/fixtures/golden")
        .join(name);
    if std::env::var_os("LANEPIPE_BLESS").is_some() {
        std::fs::write(&path, actual).unwrap();
        return;
    }
    let expected = std::fs::read_to_string(&path).unwrap_or_else(|e| panic!("{}: {e}", path.display()));
    assert_eq!(actual, expected, "{name} drifted from the golden file");
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect::<Vec<_>>().join(" ")
}

fn samples() -> Vec<Message> {
    vec![
        ImageNotice {
            store_name: "cam0".into(),
            width: 320,
            height: 240,
            format: PixelFormat::Rgb8,
            sequence: 7,
        }
        .into(),
        CenterLine::new(vec![GroundPoint::new(1.0, 0.0), GroundPoint::new(2.0, 0.5)], 1000)
            .unwrap()
            .into(),
        SteeringRequest::clamped(0.25, 1000).0.into(),
        AccelerationRequest::clamped(-1.0, 1000).0.into(),
        DiagnosticState::new("follower.3", HealthState::SafeStop, "stale perception").into(),
    ]
}

#[test]
fn message_ids() {
    check("message_ids.txt", &registry_listing());
}

#[test]
fn message_bodies() {
    let mut out = String::new();
    for m in samples() {
        writeln!(out, "{} {}", m.kind().name(), hex(&m.encode_body())).unwrap();
    }
    check("message_bodies.txt", &out);
}

#[test]
fn envelope_bytes() {
    let msg: Message = SteeringRequest::clamped(0.25, 1000).0.into();
    let env = Envelope {
        data_type_id: msg.kind().type_id(),
        payload: msg.encode_body(),
        sample_ts: 1000,
        sent_ts: 1500,
        received_ts: 2000,
        sender_stamp: 3,
    };
    check("envelope.txt", &format!("{}\n", hex(&encode_envelope(&env).unwrap())));
}

#[test]
fn can_frame_log() {
    let mut codec = ActuationCodec::new(&SignalMap::default()).unwrap();
    let mut out = String::new();
    for (i, (s, a)) in [(0.25, -1.0), (0.0, -2.0), (-0.6, 3.0)].into_iter().enumerate() {
        let f = codec
            .encode(&SteeringRequest::clamped(s, 0).0, &AccelerationRequest::clamped(a, 0).0)
            .unwrap();
        writeln!(out, "{}", format_log_line(1_000_000 + i as u64 * 20_000, &f)).unwrap();
    }
    check("can_frames.log", &out);
}
