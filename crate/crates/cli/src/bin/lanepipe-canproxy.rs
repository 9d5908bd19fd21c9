//! CAN proxy: pairs actuation requests and puts one frame per pair on the
//! simulated CAN bus, logging every frame.

use std::path::PathBuf;

use anyhow::Context;
use clap::Parser;
use lanepipe::canlink::{ActuationCodec, SignalMap, SimBus};
use lanepipe::services::CanProxy;
use lanepipe_cli::{serve, IdentityArgs};

#[derive(Debug, Parser)]
#[command(name = "lanepipe-canproxy", version, about)]
struct Cli {
    #[command(flatten)]
    id: IdentityArgs,
    /// Signal map file; the built-in actuation map by default.
    #[arg(long)]
    signal_map: Option<PathBuf>,
    /// Append `ts ID#DATA` lines here.
    #[arg(long)]
    frame_log: Option<PathBuf>,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let map = match &cli.signal_map {
        Some(p) => SignalMap::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?,
        None => SignalMap::default(),
    };
    let mut proxy = CanProxy::new(cli.id.identity("canproxy")?, ActuationCodec::new(&map)?, SimBus::new());
    if let Some(p) = &cli.frame_log {
        let f = std::fs::OpenOptions::new()
            .create(true)
            .append(true)
            .open(p)
            .with_context(|| format!("opening {}", p.display()))?;
        proxy = proxy.with_log(Box::new(std::io::BufWriter::new(f)));
    }
    serve(proxy, &cli.id)
}
