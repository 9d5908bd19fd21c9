//! `lanepipe`: bring the pipeline up and down, lint manifests, record,
//! replay and watch bus traffic, and run the closed-loop simulation.

use std::io::Write;
use std::path::{Path, PathBuf};
use std::process::ExitCode;
use std::sync::atomic::Ordering;
use std::time::{Duration, Instant};

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};
use lanepipe::bus::DEFAULT_CID;
use lanepipe::lint;
use lanepipe::orchestrator::{self, parse_manifest, Deployment, UpOptions, DEFAULT_GRACE};
use lanepipe::services::sim::{run_closed_loop, SimConfig};
use lanepipe::world::Track;
use lanepipe_cli::{join_bus, stop_flag};

#[derive(Debug, Parser)]
#[command(name = "lanepipe", version, about = "Lane-following microservice pipeline")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Debug, Clone, Copy, ValueEnum)]
enum Format {
    Text,
    Json,
}

#[derive(Debug, Subcommand)]
enum Cmd {
    /// Start every service of a manifest and supervise until stopped.
    Up {
        #[arg(short = 'f', long)]
        file: PathBuf,
        /// Per-instance log files go here; output is inherited otherwise.
        #[arg(long)]
        log_dir: Option<PathBuf>,
        /// Extra directory searched for service programs.
        #[arg(long)]
        bin_dir: Option<PathBuf>,
        #[arg(long)]
        pid_file: Option<PathBuf>,
        /// Working directory for the instances.
        #[arg(long)]
        work_dir: Option<PathBuf>,
    },
    /// Stop the deployment started by `up`.
    Down {
        #[arg(long, default_value_t = DEFAULT_CID)]
        cid: u8,
        #[arg(long)]
        pid_file: Option<PathBuf>,
    },
    /// Check a manifest for architectural smells.
    Lint {
        #[arg(short = 'f', long)]
        file: PathBuf,
        #[arg(long, value_enum, default_value = "text")]
        format: Format,
    },
    /// Write every envelope on the bus to a recording.
    Record {
        #[arg(short = 'o', long)]
        output: PathBuf,
        #[arg(long, default_value_t = DEFAULT_CID)]
        cid: u8,
        #[arg(long, default_value_t = 9000)]
        stamp: u32,
        /// Stop after this many envelopes.
        #[arg(long)]
        count: Option<usize>,
    },
    /// Publish a recording again with its original timing.
    Replay {
        file: PathBuf,
        #[arg(long, default_value_t = 1.0)]
        speed: f64,
        #[arg(long, default_value_t = DEFAULT_CID)]
        cid: u8,
        #[arg(long, default_value_t = 9001)]
        stamp: u32,
    },
    /// Print one line per envelope: receive time, kind, sender stamp, size.
    Monitor {
        #[arg(long, default_value_t = DEFAULT_CID)]
        cid: u8,
        #[arg(long, default_value_t = 9002)]
        stamp: u32,
        #[arg(long)]
        count: Option<usize>,
    },
    /// Run the deterministic closed-loop simulation in this process.
    Sim {
        /// Take camera rate, detector clones and follower settings from a manifest.
        #[arg(short = 'f', long)]
        file: Option<PathBuf>,
        #[arg(long)]
        track: Option<PathBuf>,
        /// Stop the camera this many seconds into the run.
        #[arg(long)]
        kill_camera_after: Option<f64>,
        /// Write the trajectory as CSV.
        #[arg(long)]
        csv: Option<PathBuf>,
    },
}

fn read_manifest(path: &Path) -> anyhow::Result<Deployment> {
    let text = std::fs::read_to_string(path).with_context(|| format!("reading {}", path.display()))?;
    parse_manifest(&text).with_context(|| format!("in {}", path.display()))
}

fn default_pid_file(cid: u8) -> PathBuf {
    std::env::temp_dir().join(format!("lanepipe-{cid}.pid"))
}

fn up(
    file: &Path,
    log_dir: Option<PathBuf>,
    bin_dir: Option<PathBuf>,
    pid_file: Option<PathBuf>,
    work_dir: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let dep = read_manifest(file)?;
    let stop = stop_flag()?;
    let mut search_dirs: Vec<PathBuf> = bin_dir.into_iter().collect();
    if let Some(dir) = std::env::current_exe()
        .ok()
        .and_then(|p| p.parent().map(Path::to_path_buf))
    {
        search_dirs.push(dir);
    }
    let pid_file = pid_file.unwrap_or_else(|| default_pid_file(dep.cid));
    std::fs::write(&pid_file, format!("{}\n", std::process::id()))
        .with_context(|| format!("writing {}", pid_file.display()))?;
    let sup = orchestrator::up(
        &dep,
        &UpOptions {
            search_dirs,
            log_dir,
            work_dir,
            ..Default::default()
        },
    );
    for r in sup.states() {
        let pid = r.pid.map_or("-".into(), |p| p.to_string());
        let err = r.spawn_error.map(|e| format!(" ({e})")).unwrap_or_default();
        println!("{:<20} stamp={:<3} pid={:<8} {}{err}", r.name, r.stamp, pid, r.state);
    }
    while !stop.load(Ordering::Relaxed) && sup.running() > 0 {
        std::thread::sleep(Duration::from_millis(100));
    }
    let report = sup.down();
    let _ = std::fs::remove_file(&pid_file);
    print!("{report}");
    Ok(if report.is_clean() {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn down(cid: u8, pid_file: Option<PathBuf>) -> anyhow::Result<ExitCode> {
    let pid_file = pid_file.unwrap_or_else(|| default_pid_file(cid));
    let text = match std::fs::read_to_string(&pid_file) {
        Ok(t) => t,
        Err(e) if e.kind() == std::io::ErrorKind::NotFound => {
            println!("nothing running (no {})", pid_file.display());
            return Ok(ExitCode::SUCCESS);
        }
        Err(e) => return Err(e).with_context(|| format!("reading {}", pid_file.display())),
    };
    let pid: libc::pid_t = text.trim().parse().context("pid file is garbled")?;
    // SAFETY: kill(2) with a pid read from our own pid file.
    if unsafe { libc::kill(pid, libc::SIGTERM) } != 0 {
        let _ = std::fs::remove_file(&pid_file);
        println!("supervisor {pid} already gone");
        return Ok(ExitCode::SUCCESS);
    }
    // the supervisor itself waits the grace period per instance before killing
    let deadline = Instant::now() + DEFAULT_GRACE + Duration::from_secs(5);
    while alive(pid) {
        if Instant::now() > deadline {
            bail!("supervisor {pid} still running");
        }
        std::thread::sleep(Duration::from_millis(50));
    }
    println!("stopped supervisor {pid}");
    Ok(ExitCode::SUCCESS)
}

/// A zombie counts as gone: its parent may not have reaped it yet.
fn alive(pid: libc::pid_t) -> bool {
    // SAFETY: signal 0 only probes for existence.
    if unsafe { libc::kill(pid, 0) } != 0 {
        return false;
    }
    match std::fs::read_to_string(format!("/proc/{pid}/stat")) {
        // the state letter follows the parenthesised command name
        Ok(stat) => !matches!(stat.rsplit_once(')').map(|(_, rest)| rest.trim_start()), Some(r) if r.starts_with('Z')),
        Err(_) => false,
    }
}

fn lint_cmd(file: &Path, format: Format) -> ExitCode {
    let dep = match read_manifest(file) {
        Ok(d) => d,
        Err(e) => {
            eprintln!("error: {e:#}");
            return ExitCode::from(2);
        }
    };
    let findings = lint::check(&dep);
    match format {
        Format::Text => print!("{}", lint::to_text(&findings)),
        Format::Json => println!("{}", lint::to_json(&findings)),
    }
    ExitCode::from(lint::exit_code(&findings) as u8)
}

fn record_cmd(output: &Path, cid: u8, stamp: u32, count: Option<usize>) -> anyhow::Result<ExitCode> {
    let stop = stop_flag()?;
    let mut session = join_bus(cid, stamp)?;
    let file = std::fs::File::create(output).with_context(|| format!("creating {}", output.display()))?;
    let n = orchestrator::record(&mut session, std::io::BufWriter::new(file), &stop, count)?;
    eprintln!("recorded {n} envelopes to {}", output.display());
    Ok(ExitCode::SUCCESS)
}

fn replay_cmd(file: &Path, speed: f64, cid: u8, stamp: u32) -> anyhow::Result<ExitCode> {
    if !(speed > 0.0 && speed.is_finite()) {
        bail!("--speed must be positive");
    }
    let bytes = std::fs::read(file).with_context(|| format!("reading {}", file.display()))?;
    let (envs, damage) = orchestrator::read_recording(&bytes);
    if let Some(d) = &damage {
        eprintln!("warning: {d}; replaying the {} envelopes before it", envs.len());
    }
    let stop = stop_flag()?;
    let session = join_bus(cid, stamp)?;
    let n = orchestrator::replay(&envs, &session, speed, &stop)?;
    eprintln!("replayed {n} envelopes");
    Ok(ExitCode::SUCCESS)
}

fn monitor_cmd(cid: u8, stamp: u32, count: Option<usize>) -> anyhow::Result<ExitCode> {
    let stop = stop_flag()?;
    let mut session = join_bus(cid, stamp)?;
    let (tx, rx) = std::sync::mpsc::channel();
    session.subscribe_all(move |e| {
        let _ = tx.send(orchestrator::monitor_line(e));
    });
    let mut seen = 0;
    let stdout = std::io::stdout();
    while !stop.load(Ordering::Relaxed) && count.is_none_or(|c| seen < c) {
        session.poll_some(Duration::from_millis(100));
        let mut out = stdout.lock();
        for line in rx.try_iter() {
            writeln!(out, "{line}")?;
            seen += 1;
        }
        out.flush()?;
    }
    Ok(ExitCode::SUCCESS)
}

fn sim_cmd(
    file: Option<PathBuf>,
    track: Option<PathBuf>,
    kill: Option<f64>,
    csv: Option<PathBuf>,
) -> anyhow::Result<ExitCode> {
    let mut cfg = match &file {
        Some(f) => SimConfig::from_deployment(&read_manifest(f)?)?,
        None => SimConfig::default(),
    };
    if let Some(t) = &track {
        cfg.track = Track::parse(&std::fs::read_to_string(t).with_context(|| format!("reading {}", t.display()))?)?;
    }
    cfg.camera_stop_after = kill.map(Duration::from_secs_f64);
    let wall = Instant::now();
    let report = run_closed_loop(&cfg)?;
    if let Some(path) = &csv {
        let mut f = std::io::BufWriter::new(std::fs::File::create(path)?);
        writeln!(f, "t_s,x,y,heading,speed,lateral_error,progress")?;
        for s in &report.trajectory {
            writeln!(
                f,
                "{:.3},{:.4},{:.4},{:.5},{:.3},{:.4},{:.3}",
                (s.t - report.start) as f64 * 1e-6,
                s.state.x,
                s.state.y,
                s.state.heading,
                s.state.speed,
                s.lateral_error,
                s.progress
            )?;
        }
    }
    let last = report
        .trajectory
        .last()
        .map_or(0.0, |s| (s.t - report.start) as f64 * 1e-6);
    println!("track length      {:.1} m", cfg.track.total_length());
    println!("completed         {}", report.completed);
    println!("simulated time    {last:.2} s");
    println!("wall time         {:.2} s", wall.elapsed().as_secs_f64());
    println!("max |lateral err| {:.3} m", report.max_abs_lateral_error());
    println!("CAN frames        {}", report.frames.len());
    match report.first_safe_stop() {
        Some(t) => println!("safe stop at      {:.2} s", (t - report.start) as f64 * 1e-6),
        None => println!("safe stop         none"),
    }
    Ok(if report.completed {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    })
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.cmd {
        Cmd::Up {
            file,
            log_dir,
            bin_dir,
            pid_file,
            work_dir,
        } => up(&file, log_dir, bin_dir, pid_file, work_dir),
        Cmd::Down { cid, pid_file } => down(cid, pid_file),
        Cmd::Lint { file, format } => Ok(lint_cmd(&file, format)),
        Cmd::Record {
            output,
            cid,
            stamp,
            count,
        } => record_cmd(&output, cid, stamp, count),
        Cmd::Replay {
            file,
            speed,
            cid,
            stamp,
        } => replay_cmd(&file, speed, cid, stamp),
        Cmd::Monitor { cid, stamp, count } => monitor_cmd(cid, stamp, count),
        Cmd::Sim {
            file,
            track,
            kill_camera_after,
            csv,
        } => sim_cmd(file, track, kill_camera_after, csv),
    };
    match result {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::FAILURE
        }
    }
}
