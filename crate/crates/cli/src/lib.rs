//! Shared plumbing for the service binaries: identity flags, signal
//! handling, bus and frame store setup.

use std::path::PathBuf;
use std::sync::atomic::AtomicBool;
use std::sync::Arc;

use anyhow::Context;
use clap::Args;
use lanepipe::bus::{GroupAddr, UdpMulticast, DEFAULT_CID};
use lanepipe::framestore::FrameStores;
use lanepipe::services::{Service, ServiceHost, ServiceIdentity};
use lanepipe::vision::CameraModel;
use lanepipe::BusSession;

/// Flags every service accepts; the supervisor fills them in.
#[derive(Debug, Clone, Args)]
pub struct IdentityArgs {
    /// Bus group selector.
    #[arg(long, default_value_t = DEFAULT_CID)]
    pub cid: u8,
    /// Sender stamp, unique per running instance.
    #[arg(long)]
    pub stamp: u32,
    /// Commit hash or v<major>.<minor>... of the running code.
    #[arg(long, default_value = "v0")]
    pub version_tag: String,
}

impl IdentityArgs {
    pub fn identity(&self, name: &str) -> anyhow::Result<ServiceIdentity> {
        Ok(ServiceIdentity::new(name, self.stamp, &self.version_tag)?)
    }
}

/// Flat-ground pinhole camera, shared by the renderer and the detector.
#[derive(Debug, Clone, Args)]
pub struct CameraArgs {
    #[arg(long, default_value_t = 320)]
    pub width: u32,
    #[arg(long, default_value_t = 240)]
    pub height: u32,
    /// Meters above ground.
    #[arg(long, default_value_t = 1.2)]
    pub cam_height: f64,
    /// Radians, positive looks down.
    #[arg(long, default_value_t = 0.06)]
    pub cam_pitch: f64,
    /// Pixels.
    #[arg(long, default_value_t = 200.0)]
    pub focal: f64,
}

impl CameraArgs {
    pub fn model(&self) -> CameraModel {
        CameraModel::centered(self.width, self.height, self.cam_height, self.cam_pitch, self.focal)
    }
}

/// Directory holding the frame store files; host shared memory by default.
#[derive(Debug, Clone, Args)]
pub struct StoreArgs {
    #[arg(long, default_value = "cam0")]
    pub store: String,
    #[arg(long, env = "LANEPIPE_STORE_DIR")]
    pub store_dir: Option<PathBuf>,
}

impl StoreArgs {
    pub fn namespace(&self) -> FrameStores {
        match &self.store_dir {
            Some(d) => FrameStores::directory(d),
            None => FrameStores::host_shared(),
        }
    }
}

/// Raised by SIGTERM or SIGINT.
pub fn stop_flag() -> anyhow::Result<Arc<AtomicBool>> {
    let stop = Arc::new(AtomicBool::new(false));
    for sig in [signal_hook::consts::SIGTERM, signal_hook::consts::SIGINT] {
        signal_hook::flag::register(sig, Arc::clone(&stop)).context("installing signal handler")?;
    }
    Ok(stop)
}

pub fn join_bus(cid: u8, stamp: u32) -> anyhow::Result<BusSession> {
    let addr = GroupAddr::from_cid(cid);
    let transport = UdpMulticast::join(addr).with_context(|| format!("joining {addr:?}"))?;
    Ok(BusSession::new(transport, stamp))
}

/// Run a service over the multicast bus until SIGTERM/SIGINT.
pub fn serve(service: impl Service + 'static, id: &IdentityArgs) -> anyhow::Result<()> {
    let stop = stop_flag()?;
    let session = join_bus(id.cid, id.stamp)?;
    let mut host = ServiceHost::new(Box::new(service), session)?;
    eprintln!(
        "{} stamp={} version={} cid={}",
        host.identity().name,
        id.stamp,
        id.version_tag,
        id.cid
    );
    host.run(&stop);
    Ok(())
}
