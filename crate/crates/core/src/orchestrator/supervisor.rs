use std::fmt;
use std::path::{Path, PathBuf};
use std::process::{Child, Command, Stdio};
use std::sync::Mutex;
use std::time::{Duration, Instant};

use super::Deployment;

pub const DEFAULT_GRACE: Duration = Duration::from_secs(3);
/// Exit code reported for an instance that could not be started.
pub const SPAWN_FAILED: i32 = 127;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum InstanceState {
    Pending,
    Running,
    Exited(i32),
    /// Force-killed after the grace period.
    Killed,
}

impl fmt::Display for InstanceState {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            InstanceState::Pending => f.write_str("PENDING"),
            InstanceState::Running => f.write_str("RUNNING"),
            InstanceState::Exited(c) => write!(f, "EXITED({c})"),
            InstanceState::Killed => f.write_str("KILLED"),
        }
    }
}

impl InstanceState {
    pub fn is_final(self) -> bool {
        matches!(self, InstanceState::Exited(_) | InstanceState::Killed)
    }
}

#[derive(Debug, Clone, PartialEq, Eq)]
pub struct InstanceReport {
    /// `<service>.<replica>`, replicas counted from 1.
    pub name: String,
    pub service: String,
    pub stamp: u32,
    pub pid: Option<u32>,
    pub state: InstanceState,
    pub spawn_error: Option<String>,
}

/// Final state of every instance after [`Supervisor::down`].
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct ExitReport {
    pub instances: Vec<InstanceReport>,
    /// Pids still alive after shutdown. Empty on a clean stop.
    pub orphans: Vec<u32>,
}

impl ExitReport {
    pub fn is_clean(&self) -> bool {
        self.orphans.is_empty() && self.instances.iter().all(|i| i.state == InstanceState::Exited(0))
    }
}

impl fmt::Display for ExitReport {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        for i in &self.instances {
            let pid = i.pid.map_or("-".to_string(), |p| p.to_string());
            write!(f, "{:<20} stamp={:<3} pid={:<8} {}", i.name, i.stamp, pid, i.state)?;
            if let Some(e) = &i.spawn_error {
                write!(f, " ({e})")?;
            }
            writeln!(f)?;
        }
        writeln!(f, "orphans: {}", self.orphans.len())
    }
}

#[derive(Debug, Clone, Default)]
pub struct UpOptions {
    /// Directories searched for service programs before `PATH`.
    pub search_dirs: Vec<PathBuf>,
    /// Extra arguments appended to every instance (after the identity flags).
    pub extra_args: Vec<String>,
    /// Where per-instance stdout/stderr go; inherited when `None`.
    pub log_dir: Option<PathBuf>,
    /// Environment variables added to every instance.
    pub env: Vec<(String, String)>,
    /// Working directory of every instance; inherited when `None`.
    pub work_dir: Option<PathBuf>,
    pub grace: Option<Duration>,
}

struct Instance {
    report: InstanceReport,
    child: Option<Child>,
}

/// Owns the launched instances. All state changes go through one lock.
pub struct Supervisor {
    instances: Mutex<Vec<Instance>>,
    grace: Duration,
}

fn resolve(program: &str, dirs: &[PathBuf]) -> PathBuf {
    if program.contains('/') {
        return PathBuf::from(program);
    }
    dirs.iter()
        .map(|d| d.join(program))
        .find(|p| p.is_file())
        .unwrap_or_else(|| PathBuf::from(program))
}

fn exit_code(status: std::process::ExitStatus) -> i32 {
    use std::os::unix::process::ExitStatusExt;
    status.code().unwrap_or_else(|| 128 + status.signal().unwrap_or(0))
}

fn open_log(dir: &Path, name: &str) -> std::io::Result<(Stdio, Stdio)> {
    std::fs::create_dir_all(dir)?;
    let f = std::fs::File::create(dir.join(format!("{name}.log")))?;
    Ok((Stdio::from(f.try_clone()?), Stdio::from(f)))
}

fn pid_alive(pid: u32) -> bool {
    // SAFETY: signal 0 only checks for existence and permission.
    unsafe { libc::kill(pid as libc::pid_t, 0) == 0 }
}

fn signal(pid: u32, sig: libc::c_int) {
    // SAFETY: plain kill(2) on a pid we spawned and have not reaped yet.
    unsafe {
        libc::kill(pid as libc::pid_t, sig);
    }
}

/// Launch every instance of the deployment. Replicas are expanded and sender
/// stamps assigned sequentially from 1 in manifest order. A failed spawn is
/// recorded and does not stop the others.
pub fn up(dep: &Deployment, opts: &UpOptions) -> Supervisor {
    let mut instances = Vec::with_capacity(dep.instance_count());
    let mut stamp = 0u32;
    for svc in &dep.services {
        for replica in 1..=svc.replicas.value {
            stamp += 1;
            let name = format!("{}.{}", svc.name, replica);
            let mut report = InstanceReport {
                name: name.clone(),
                service: svc.name.clone(),
                stamp,
                pid: None,
                state: InstanceState::Pending,
                spawn_error: None,
            };
            let argv = &svc.command.value;
            let cid = svc.cid.as_ref().map_or(dep.cid, |c| c.value);
            let mut cmd = Command::new(resolve(&argv[0], &opts.search_dirs));
            cmd.args(&argv[1..])
                .args(["--cid", &cid.to_string(), "--stamp", &stamp.to_string()])
                .stdin(Stdio::null());
            if let Some(tag) = &svc.version_tag {
                cmd.args(["--version-tag", &tag.value]);
            }
            cmd.args(&opts.extra_args).envs(opts.env.iter().cloned());
            if let Some(dir) = &opts.work_dir {
                cmd.current_dir(dir);
            }
            if let Some(dir) = &opts.log_dir {
                match open_log(dir, &name) {
                    Ok((out, err)) => {
                        cmd.stdout(out).stderr(err);
                    }
                    Err(e) => eprintln!("{name}: cannot open log: {e}"),
                }
            }
            let child = match cmd.spawn() {
                Ok(child) => {
                    report.pid = Some(child.id());
                    report.state = InstanceState::Running;
                    Some(child)
                }
                Err(e) => {
                    report.state = InstanceState::Exited(SPAWN_FAILED);
                    report.spawn_error = Some(format!("{}: {e}", argv[0]));
                    None
                }
            };
            instances.push(Instance { report, child });
        }
    }
    Supervisor {
        instances: Mutex::new(instances),
        grace: opts.grace.unwrap_or(DEFAULT_GRACE),
    }
}

impl Supervisor {
    /// Reap instances that exited on their own.
    pub fn poll(&self) {
        let mut all = self.instances.lock().unwrap();
        for inst in all.iter_mut() {
            if let Some(child) = inst.child.as_mut() {
                if let Ok(Some(status)) = child.try_wait() {
                    inst.report.state = InstanceState::Exited(exit_code(status));
                    inst.child = None;
                }
            }
        }
    }

    pub fn states(&self) -> Vec<InstanceReport> {
        self.poll();
        self.instances
            .lock()
            .unwrap()
            .iter()
            .map(|i| i.report.clone())
            .collect()
    }

    pub fn running(&self) -> usize {
        self.states()
            .iter()
            .filter(|r| r.state == InstanceState::Running)
            .count()
    }

    /// Stop everything: SIGTERM, wait up to the grace period, SIGKILL the
    /// rest. Safe to call more than once.
    pub fn down(&self) -> ExitReport {
        let mut all = self.instances.lock().unwrap();
        for inst in all.iter() {
            if let Some(child) = &inst.child {
                signal(child.id(), libc::SIGTERM);
            }
        }
        let deadline = Instant::now() + self.grace;
        loop {
            let mut live = 0;
            for inst in all.iter_mut() {
                if let Some(child) = inst.child.as_mut() {
                    match child.try_wait() {
                        Ok(Some(status)) => {
                            inst.report.state = InstanceState::Exited(exit_code(status));
                            inst.child = None;
                        }
                        _ => live += 1,
                    }
                }
            }
            if live == 0 || Instant::now() >= deadline {
                break;
            }
            std::thread::sleep(Duration::from_millis(10));
        }
        for inst in all.iter_mut() {
            if let Some(mut child) = inst.child.take() {
                let _ = child.kill();
                let _ = child.wait();
                inst.report.state = InstanceState::Killed;
            }
        }
        let instances: Vec<InstanceReport> = all.iter().map(|i| i.report.clone()).collect();
        let orphans = instances
            .iter()
            .filter_map(|i| i.pid)
            .filter(|&p| pid_alive(p))
            .collect();
        ExitReport { instances, orphans }
    }
}

impl Drop for Supervisor {
    fn drop(&mut self) {
        let any_live = self.instances.lock().unwrap().iter().any(|i| i.child.is_some());
        if any_live {
            self.down();
        }
    }
}
