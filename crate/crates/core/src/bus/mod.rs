//! Publish/subscribe middleware: envelope wire codec, datagram transports
//! and the session every service uses to talk to the others.

mod envelope;
mod session;
mod transport;

pub use envelope::{decode_envelope, encode_envelope, CodecError, Envelope, MAGIC, MAX_PAYLOAD};
pub use session::{BusError, BusSession, BusStats, Handler};
pub use transport::{GroupAddr, MemoryHub, MemoryTransport, Transport, UdpMulticast, DEFAULT_CID, DEFAULT_PORT};
