//! Compose-style deployment: manifest parsing, a process supervisor that
//! starts and stops every service instance, and bus recording and replay.

mod manifest;
mod record;
mod supervisor;

pub use manifest::{parse_manifest, At, Deployment, ManifestError, ServiceManifest, StoreDecl, LOCK_DISCIPLINES};
pub use record::{monitor_line, read_recording, record, replay, CorruptRecording, Recorder};
pub use supervisor::{
    up, ExitReport, InstanceReport, InstanceState, Supervisor, UpOptions, DEFAULT_GRACE, SPAWN_FAILED,
};
