use std::collections::{BTreeMap, BTreeSet};
use std::fmt;
use std::str::FromStr;
use std::time::Duration;

use super::{diagnose, publish, Service, ServiceError, ServiceIdentity};
use crate::bus::{BusSession, Envelope};
use crate::clock::Micros;
use crate::follower::{
    acceleration_request, check_staleness, steering_from_centerline, CommandedSpeed, FollowerParams, SafetyState,
    SAFE_STOP_ACCEL,
};
use crate::messages::{
    AccelerationRequest, CenterLine, GroundPoint, HealthState, Message, MessageKind, SteeringRequest,
};

pub const DEFAULT_VOTE_DEADLINE: Micros = 30_000;
pub const DEFAULT_CONTROL_PERIOD: Duration = Duration::from_millis(20);

/// How lines from cloned detectors for one frame become one line.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum VotePolicy {
    /// Take the earliest arrival, drop later duplicates.
    First,
    /// Wait for all clones (or the deadline), then take the pointwise median.
    Median,
}

impl fmt::Display for VotePolicy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            VotePolicy::First => "first",
            VotePolicy::Median => "median",
        })
    }
}

impl FromStr for VotePolicy {
    type Err = String;
    fn from_str(s: &str) -> Result<Self, Self::Err> {
        match s.to_ascii_lowercase().as_str() {
            "first" => Ok(VotePolicy::First),
            "median" => Ok(VotePolicy::Median),
            other => Err(format!("unknown vote policy `{other}` (first|median)")),
        }
    }
}

fn median(values: &mut [f64]) -> f64 {
    values.sort_by(f64::total_cmp);
    let n = values.len();
    if n % 2 == 1 {
        values[n / 2]
    } else {
        0.5 * (values[n / 2 - 1] + values[n / 2])
    }
}

/// Combine lines that share a source sample time. Median works index by
/// index over the common prefix; an even count takes the mean of the middle two.
pub fn vote(entries: &[CenterLine], policy: VotePolicy) -> Option<CenterLine> {
    let first = entries.first()?;
    if policy == VotePolicy::First || entries.len() == 1 {
        return Some(first.clone());
    }
    let n = entries.iter().map(|l| l.points().len()).min()?;
    let points = (0..n)
        .map(|i| {
            let mut xs: Vec<f64> = entries.iter().map(|l| l.points()[i].x).collect();
            let mut ys: Vec<f64> = entries.iter().map(|l| l.points()[i].y).collect();
            GroundPoint::new(median(&mut xs), median(&mut ys))
        })
        .collect();
    // order statistics of strictly increasing sequences stay strictly increasing
    CenterLine::new(points, first.source_sample_ts()).ok()
}

struct Pending {
    opened: Micros,
    entries: Vec<(u32, CenterLine)>,
}

/// Collects center lines per source sample time and releases at most one
/// decision for each.
pub struct VoteBuffer {
    policy: VotePolicy,
    expected: usize,
    deadline: Micros,
    pending: BTreeMap<Micros, Pending>,
    decided: BTreeSet<Micros>,
}

/// Decided timestamps remembered for duplicate suppression.
const DECIDED_MEMORY: usize = 4096;

impl VoteBuffer {
    pub fn new(policy: VotePolicy, expected: usize, deadline: Micros) -> Self {
        Self {
            policy,
            expected: expected.max(1),
            deadline,
            pending: BTreeMap::new(),
            decided: BTreeSet::new(),
        }
    }

    pub fn policy(&self) -> VotePolicy {
        self.policy
    }

    fn decide(&mut self, ts: Micros) -> Option<CenterLine> {
        let p = self.pending.remove(&ts)?;
        self.decided.insert(ts);
        while self.decided.len() > DECIDED_MEMORY {
            self.decided.pop_first();
        }
        let lines: Vec<CenterLine> = p.entries.into_iter().map(|(_, l)| l).collect();
        vote(&lines, self.policy)
    }

    /// Add one arrival; returns the decision if this arrival completes one.
    pub fn offer(&mut self, stamp: u32, line: CenterLine, now: Micros) -> Option<CenterLine> {
        let ts = line.source_sample_ts();
        let oldest_remembered = self.decided.first().copied();
        if self.decided.contains(&ts) || oldest_remembered.is_some_and(|o| ts < o) {
            return None;
        }
        let p = self.pending.entry(ts).or_insert_with(|| Pending {
            opened: now,
            entries: Vec::new(),
        });
        if p.entries.iter().any(|(s, _)| *s == stamp) {
            return None;
        }
        p.entries.push((stamp, line));
        let complete = match self.policy {
            VotePolicy::First => true,
            VotePolicy::Median => p.entries.len() >= self.expected,
        };
        if complete {
            self.decide(ts)
        } else {
            None
        }
    }

    /// Release every collection whose deadline has passed, oldest first.
    pub fn expire(&mut self, now: Micros) -> Vec<CenterLine> {
        let due: Vec<Micros> = self
            .pending
            .iter()
            .filter(|(_, p)| now.saturating_sub(p.opened) >= self.deadline)
            .map(|(&ts, _)| ts)
            .collect();
        due.into_iter().filter_map(|ts| self.decide(ts)).collect()
    }
}

/// Votes over incoming center lines, applies the control law and guards
/// against stale perception.
pub struct LaneFollower {
    identity: ServiceIdentity,
    params: FollowerParams,
    buffer: VoteBuffer,
    safety: SafetyState,
    speed: CommandedSpeed,
    period: Duration,
}

impl LaneFollower {
    pub fn new(
        identity: ServiceIdentity,
        params: FollowerParams,
        buffer: VoteBuffer,
        initial_speed: f64,
    ) -> Result<Self, ServiceError> {
        params.validate().map_err(|e| ServiceError::Config(e.to_string()))?;
        Ok(Self {
            identity,
            params,
            buffer,
            safety: SafetyState::default(),
            speed: CommandedSpeed::new(initial_speed),
            period: DEFAULT_CONTROL_PERIOD,
        })
    }

    pub fn with_period(mut self, period: Duration) -> Self {
        self.period = period;
        self
    }

    pub fn safety(&self) -> &SafetyState {
        &self.safety
    }

    fn act(&mut self, bus: &BusSession, line: &CenterLine, now: Micros) {
        self.safety = check_staleness(now, line.source_sample_ts(), &self.params, &self.safety);
        if self.safety.is_safe_stop() {
            return self.safe_stop(bus, now);
        }
        let ts = line.source_sample_ts();
        let steering = steering_from_centerline(line, &self.params);
        let accel = acceleration_request(self.speed.at(now), &self.params);
        self.speed.command(now, accel);
        publish(bus, SteeringRequest::clamped(steering, ts).0, ts);
        publish(bus, AccelerationRequest::clamped(accel, ts).0, ts);
    }

    fn safe_stop(&mut self, bus: &BusSession, now: Micros) {
        diagnose(
            bus,
            &self.identity,
            HealthState::SafeStop,
            self.safety.reason.clone(),
            now,
        );
        self.speed.command(now, SAFE_STOP_ACCEL);
        publish(bus, SteeringRequest::clamped(0.0, now).0, now);
        publish(bus, AccelerationRequest::clamped(SAFE_STOP_ACCEL, now).0, now);
    }
}

impl Service for LaneFollower {
    fn identity(&self) -> &ServiceIdentity {
        &self.identity
    }

    fn subscriptions(&self) -> Vec<MessageKind> {
        vec![MessageKind::CenterLine]
    }

    fn period(&self) -> Option<Duration> {
        Some(self.period)
    }

    fn on_message(&mut self, bus: &BusSession, env: &Envelope, msg: Message, now: Micros) {
        let Message::CenterLine(line) = msg else {
            return;
        };
        if self.safety.is_safe_stop() {
            return;
        }
        if let Some(decided) = self.buffer.offer(env.sender_stamp, line, now) {
            self.act(bus, &decided, now);
        }
    }

    fn tick(&mut self, bus: &BusSession, now: Micros) {
        for line in self.buffer.expire(now) {
            if !self.safety.is_safe_stop() {
                self.act(bus, &line, now);
            }
        }
        if self.safety.is_safe_stop() {
            return self.safe_stop(bus, now);
        }
        // armed by the first consumed line
        if let Some(last) = self.safety.last_sample_ts {
            self.safety = check_staleness(now, last, &self.params, &self.safety);
            if self.safety.is_safe_stop() {
                self.safe_stop(bus, now);
            }
        }
    }
}
