//! Desk-scale lane-following driver assistance built as cooperating
//! microservices: a multicast message bus, a shared frame store, a lane
//! detector, a pure-pursuit follower, a CAN proxy, a closed-loop world
//! simulator, a process supervisor and a manifest linter.

pub mod bus;
pub mod canlink;
pub mod clock;
pub mod follower;
pub mod framestore;
pub mod lint;
pub mod messages;
pub mod orchestrator;
pub mod services;
pub mod vision;
pub mod world;

pub use bus::{BusSession, Envelope, GroupAddr};
pub use clock::{Clock, ManualClock, Micros, SystemClock};
pub use messages::{
    AccelerationRequest, CenterLine, DiagnosticState, GroundPoint, HealthState, ImageNotice, Message, MessageKind,
    PixelFormat, SteeringRequest,
};
