//! Camera proxy: renders (or replays) frames into a frame store and
//! announces each one on the bus.

use std::path::PathBuf;

use anyhow::Context;
use clap::{Parser, ValueEnum};
use lanepipe::messages::PixelFormat;
use lanepipe::services::{CameraProxy, FrameSource, PoseFeed, RenderSource, ReplaySource};
use lanepipe::world::Track;
use lanepipe_cli::{serve, CameraArgs, IdentityArgs, StoreArgs};

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Source {
    Sim,
    Replay,
}

#[derive(Debug, Parser)]
#[command(name = "lanepipe-camera", version, about)]
struct Cli {
    #[command(flatten)]
    id: IdentityArgs,
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    cam: CameraArgs,
    #[arg(long, value_enum, default_value = "sim")]
    source: Source,
    #[arg(long, default_value_t = 10.0)]
    fps: f64,
    /// Track file for the renderer; the reference track by default.
    #[arg(long)]
    track: Option<PathBuf>,
    /// Speed of the open-loop drive along the centerline, m/s.
    #[arg(long, default_value_t = 5.0)]
    speed: f64,
    /// Standard deviation of added pixel noise.
    #[arg(long, default_value_t = 0.0)]
    noise: f64,
    #[arg(long, default_value_t = 1)]
    seed: u64,
    /// Directory of .ppm frames for `--source replay`.
    #[arg(long)]
    replay_dir: Option<PathBuf>,
    /// Start over when the replay directory is exhausted.
    #[arg(long = "loop")]
    looping: bool,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let source: Box<dyn FrameSource> = match cli.source {
        Source::Sim => {
            let track = match &cli.track {
                Some(p) => {
                    Track::parse(&std::fs::read_to_string(p).with_context(|| format!("reading {}", p.display()))?)?
                }
                None => Track::reference(),
            };
            let feed = PoseFeed::Centerline {
                speed: cli.speed,
                start: None,
            };
            Box::new(
                RenderSource::new(track, cli.cam.model(), cli.cam.width, cli.cam.height, feed)
                    .with_noise(cli.noise, cli.seed),
            )
        }
        Source::Replay => {
            let dir = cli.replay_dir.as_ref().context("--source replay needs --replay-dir")?;
            Box::new(ReplaySource::open(dir, cli.looping).with_context(|| format!("opening {}", dir.display()))?)
        }
    };
    let writer = cli
        .store
        .namespace()
        .create(&cli.store.store, cli.cam.width, cli.cam.height, PixelFormat::Rgb8)?;
    let proxy = CameraProxy::new(cli.id.identity("camera")?, source, writer, cli.fps)?;
    serve(proxy, &cli.id)
}
