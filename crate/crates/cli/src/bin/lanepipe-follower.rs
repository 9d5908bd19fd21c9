//! Lane follower: votes over center lines from detector clones and issues
//! steering and acceleration requests.

use std::time::Duration;

use clap::Parser;
use lanepipe::follower::FollowerParams;
use lanepipe::services::{LaneFollower, VoteBuffer, VotePolicy};
use lanepipe_cli::{serve, IdentityArgs};

#[derive(Debug, Parser)]
#[command(name = "lanepipe-follower", version, about)]
struct Cli {
    #[command(flatten)]
    id: IdentityArgs,
    /// first or median.
    #[arg(long, default_value = "first")]
    policy: VotePolicy,
    /// Detector clones a median vote waits for.
    #[arg(long, default_value_t = 1)]
    clones: usize,
    #[arg(long, default_value_t = 30)]
    vote_deadline_ms: u64,
    #[arg(long, default_value_t = 2.7)]
    wheelbase: f64,
    #[arg(long, default_value_t = 6.0)]
    lookahead: f64,
    #[arg(long, default_value_t = 5.0)]
    target_speed: f64,
    #[arg(long, default_value_t = 0.5)]
    speed_gain: f64,
    /// Perception older than this triggers the safe stop.
    #[arg(long, default_value_t = 150)]
    max_age_ms: u64,
    #[arg(long, default_value_t = 20)]
    period_ms: u64,
    #[arg(long, default_value_t = 0.0)]
    initial_speed: f64,
}

fn main() -> anyhow::Result<()> {
    let cli = Cli::parse();
    let params = FollowerParams {
        wheelbase: cli.wheelbase,
        lookahead: cli.lookahead,
        target_speed: cli.target_speed,
        speed_gain: cli.speed_gain,
        max_age: cli.max_age_ms * 1000,
    };
    let buffer = VoteBuffer::new(cli.policy, cli.clones, cli.vote_deadline_ms * 1000);
    let follower = LaneFollower::new(cli.id.identity("follower")?, params, buffer, cli.initial_speed)?
        .with_period(Duration::from_millis(cli.period_ms.max(1)));
    serve(follower, &cli.id)
}
