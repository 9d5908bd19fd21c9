//! Lane detector: turns announced frames into center lines.

use std::time::Duration;

use clap::Parser;
use lanepipe::services::LaneDetector;
use lanepipe::vision::VisionParams;
use lanepipe_cli::{serve, CameraArgs, IdentityArgs, StoreArgs};

#[derive(Debug, Parser)]
#[command(name = "lanepipe-lanedet", version, about)]
struct Cli {
    #[command(flatten)]
    id: IdentityArgs,
    #[command(flatten)]
    store: StoreArgs,
    #[command(flatten)]
    cam: CameraArgs,
    /// Hysteresis thresholds on the L1 Sobel magnitude.
    #[arg(long, default_value_t = 100)]
    low: u32,
    #[arg(long, default_value_t = 300)]
    high: u32,
    #[arg(long, default_value_t = 30)]
    min_votes: u32,
    /// Hough theta resolution in degrees.
    #[arg(long, default_value_t = 1.0)]
    theta_step_deg: f64,
    /// Hough rho resolution in pixels.
    #[arg(long, default_value_t = 1.0)]
    rho_step: f64,
    #[arg(long, default_value_t = 8)]
    points: usize,
    /// Fault injection: sideways shift of every published point, meters.
    #[arg(long, default_value_t = 0.0)]
    y_bias: f64,
    #[arg(long, default_value_t = 500)]
    wait_ms: u64,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let params = VisionParams {
        low_threshold: cli.low,
        high_threshold: cli.high,
        rho_step: cli.rho_step,
        theta_step: cli.theta_step_deg.to_radians(),
        min_votes: cli.min_votes,
        center_points: cli.points,
        ..Default::default()
    };
    let det = LaneDetector::new(
        cli.id.identity("lanedet")?,
        cli.store.namespace(),
        cli.store.store.clone(),
        cli.cam.model(),
        params,
    )
    .with_wait(Duration::from_millis(cli.wait_ms))
    .with_y_bias(cli.y_bias);
    serve(det, &cli.id)
}
