use std::f64::consts::{PI, TAU};

use thiserror::Error;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TrackError {
    #[error("track line {line}: {msg}")]
    Syntax { line: usize, msg: String },
    #[error("invalid track: {0}")]
    Invalid(String),
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Straight {
        length: f64,
    },
    /// Positive angle turns left.
    Arc {
        radius: f64,
        angle: f64,
    },
}

impl Segment {
    pub fn length(&self) -> f64 {
        match *self {
            Segment::Straight { length } => length,
            Segment::Arc { radius, angle } => radius * angle.abs(),
        }
    }
}

/// Position and heading in the world frame.
#[derive(Debug, Clone, Copy, PartialEq, Default)]
pub struct Pose2 {
    pub x: f64,
    pub y: f64,
    pub heading: f64,
}

/// Nearest centerline point to a query position.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Projection {
    /// Arc length of the nearest point along the track.
    pub s: f64,
    /// Signed distance, positive to the left of the direction of travel.
    pub offset: f64,
    /// Unsigned distance to the nearest point.
    pub distance: f64,
}

#[derive(Debug, Clone, Copy)]
struct Placed {
    segment: Segment,
    start: Pose2,
    s0: f64,
}

/// Centerline made of straights and arcs joined tangent-continuously,
/// starting at the origin heading along +x.
#[derive(Debug, Clone)]
pub struct Track {
    lane_width: f64,
    placed: Vec<Placed>,
    total: f64,
}

impl Track {
    pub fn new(segments: Vec<Segment>, lane_width: f64) -> Result<Self, TrackError> {
        if !(lane_width > 2.0) {
            return Err(TrackError::Invalid(format!("lane width {lane_width} must exceed 2 m")));
        }
        if segments.is_empty() {
            return Err(TrackError::Invalid("track has no segments".into()));
        }
        let mut placed = Vec::with_capacity(segments.len());
        let mut pose = Pose2::default();
        let mut s0 = 0.0;
        for seg in segments {
            match seg {
                Segment::Straight { length } if !(length > 0.0 && length.is_finite()) => {
                    return Err(TrackError::Invalid(format!("straight length {length}")));
                }
                Segment::Arc { radius, angle }
                    if !(radius > 0.0 && radius.is_finite() && angle != 0.0 && angle.is_finite()) =>
                {
                    return Err(TrackError::Invalid(format!("arc radius {radius} angle {angle}")));
                }
                _ => {}
            }
            placed.push(Placed {
                segment: seg,
                start: pose,
                s0,
            });
            pose = end_pose(&seg, pose);
            s0 += seg.length();
        }
        Ok(Self {
            lane_width,
            placed,
            total: s0,
        })
    }

    /// 100 m straight, 90° left arc of radius 50 m, 100 m straight; 3.5 m lane.
    pub fn reference() -> Self {
        Self::new(
            vec![
                Segment::Straight { length: 100.0 },
                Segment::Arc {
                    radius: 50.0,
                    angle: PI / 2.0,
                },
                Segment::Straight { length: 100.0 },
            ],
            3.5,
        )
        .expect("reference track is valid")
    }

    /// Parse the text track format: a `lane_width <m>` line plus one
    /// `straight <m>` or `arc <radius_m> <angle_rad>` line per segment.
    pub fn parse(text: &str) -> Result<Self, TrackError> {
        let mut lane_width = None;
        let mut segments = Vec::new();
        for (idx, raw) in text.lines().enumerate() {
            let line = idx + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let f: Vec<&str> = content.split_whitespace().collect();
            let num = |i: usize| -> Result<f64, TrackError> {
                f.get(i)
                    .and_then(|s| s.parse::<f64>().ok())
                    .ok_or_else(|| TrackError::Syntax {
                        line,
                        msg: format!("expected a number in `{content}`"),
                    })
            };
            let arity = |n: usize| -> Result<(), TrackError> {
                if f.len() != n {
                    return Err(TrackError::Syntax {
                        line,
                        msg: format!("`{}` takes {} argument(s)", f[0], n - 1),
                    });
                }
                Ok(())
            };
            match f[0] {
                "lane_width" => {
                    arity(2)?;
                    lane_width = Some(num(1)?);
                }
                "straight" => {
                    arity(2)?;
                    segments.push(Segment::Straight { length: num(1)? });
                }
                "arc" => {
                    arity(3)?;
                    segments.push(Segment::Arc {
                        radius: num(1)?,
                        angle: num(2)?,
                    });
                }
                other => {
                    return Err(TrackError::Syntax {
                        line,
                        msg: format!("unknown keyword `{other}`"),
                    })
                }
            }
        }
        let lane_width = lane_width.ok_or_else(|| TrackError::Invalid("missing lane_width".into()))?;
        Self::new(segments, lane_width)
    }

    pub fn to_text(&self) -> String {
        let mut out = format!("lane_width {}\n", self.lane_width);
        for p in &self.placed {
            match p.segment {
                Segment::Straight { length } => out.push_str(&format!("straight {length}\n")),
                Segment::Arc { radius, angle } => out.push_str(&format!("arc {radius} {angle}\n")),
            }
        }
        out
    }

    pub fn lane_width(&self) -> f64 {
        self.lane_width
    }

    pub fn total_length(&self) -> f64 {
        self.total
    }

    pub fn segments(&self) -> impl Iterator<Item = Segment> + '_ {
        self.placed.iter().map(|p| p.segment)
    }

    /// Centerline pose at arc length `s`, clamped to the track.
    pub fn pose_at(&self, s: f64) -> Pose2 {
        let s = s.clamp(0.0, self.total);
        let p = self.placed.iter().rev().find(|p| p.s0 <= s).unwrap_or(&self.placed[0]);
        advance(&p.segment, p.start, s - p.s0)
    }

    pub fn start_pose(&self) -> Pose2 {
        self.placed[0].start
    }

    pub fn end_pose(&self) -> Pose2 {
        let last = self.placed.last().unwrap();
        end_pose(&last.segment, last.start)
    }

    /// Nearest point of the centerline, segment endpoints included.
    pub fn project(&self, x: f64, y: f64) -> Projection {
        self.placed
            .iter()
            .map(|p| project_segment(p, x, y))
            .min_by(|a, b| a.distance.total_cmp(&b.distance))
            .unwrap()
    }

    /// Like [`project`](Self::project), but the centerline continues as a
    /// straight tangent ray before the start and after the end.
    pub fn project_extended(&self, x: f64, y: f64) -> Projection {
        let mut best = self.project(x, y);
        let start = self.start_pose();
        let (ux, uy) = (start.heading.cos(), start.heading.sin());
        let (dx, dy) = (x - start.x, y - start.y);
        let along = dx * ux + dy * uy;
        if along < 0.0 {
            let offset = -dx * uy + dy * ux;
            if offset.abs() < best.distance {
                best = Projection {
                    s: along,
                    offset,
                    distance: offset.abs(),
                };
            }
        }
        let end = self.end_pose();
        let (ux, uy) = (end.heading.cos(), end.heading.sin());
        let (dx, dy) = (x - end.x, y - end.y);
        let along = dx * ux + dy * uy;
        if along > 0.0 {
            let offset = -dx * uy + dy * ux;
            if offset.abs() < best.distance {
                best = Projection {
                    s: self.total + along,
                    offset,
                    distance: offset.abs(),
                };
            }
        }
        best
    }

    /// Signed distance from (x, y) to the centerline, positive to the left.
    pub fn lateral_error(&self, x: f64, y: f64) -> f64 {
        self.project(x, y).offset
    }
}

fn end_pose(seg: &Segment, start: Pose2) -> Pose2 {
    advance(seg, start, seg.length())
}

/// Pose after travelling `ds` along `seg` from `start`.
fn advance(seg: &Segment, start: Pose2, ds: f64) -> Pose2 {
    match *seg {
        Segment::Straight { .. } => Pose2 {
            x: start.x + ds * start.heading.cos(),
            y: start.y + ds * start.heading.sin(),
            heading: start.heading,
        },
        Segment::Arc { radius, angle } => {
            let sign = angle.signum();
            let turned = sign * ds / radius;
            let (cx, cy) = arc_center(start, radius, sign);
            let phi0 = (start.y - cy).atan2(start.x - cx);
            let phi = phi0 + turned;
            Pose2 {
                x: cx + radius * phi.cos(),
                y: cy + radius * phi.sin(),
                heading: start.heading + turned,
            }
        }
    }
}

fn arc_center(start: Pose2, radius: f64, sign: f64) -> (f64, f64) {
    (
        start.x - sign * radius * start.heading.sin(),
        start.y + sign * radius * start.heading.cos(),
    )
}

/// Offset of `(x, y)` from the line through `at` along `heading`, positive left.
fn side_offset(at: Pose2, x: f64, y: f64) -> f64 {
    -(x - at.x) * at.heading.sin() + (y - at.y) * at.heading.cos()
}

fn project_segment(p: &Placed, x: f64, y: f64) -> Projection {
    match p.segment {
        Segment::Straight { length } => {
            let (ux, uy) = (p.start.heading.cos(), p.start.heading.sin());
            let (dx, dy) = (x - p.start.x, y - p.start.y);
            let along = dx * ux + dy * uy;
            let t = along.clamp(0.0, length);
            let (nx, ny) = (p.start.x + t * ux, p.start.y + t * uy);
            let distance = (x - nx).hypot(y - ny);
            let side = side_offset(p.start, x, y);
            let offset = if t == along { side } else { side.signum() * distance };
            Projection {
                s: p.s0 + t,
                offset,
                distance,
            }
        }
        Segment::Arc { radius, angle } => {
            let sign = angle.signum();
            let (cx, cy) = arc_center(p.start, radius, sign);
            let phi0 = (p.start.y - cy).atan2(p.start.x - cx);
            let phi = (y - cy).atan2(x - cx);
            let swept = (sign * (phi - phi0)).rem_euclid(TAU);
            let r = (x - cx).hypot(y - cy);
            if swept <= angle.abs() {
                Projection {
                    s: p.s0 + swept * radius,
                    offset: sign * (radius - r),
                    distance: (radius - r).abs(),
                }
            } else {
                let a = p.start;
                let b = end_pose(&p.segment, p.start);
                let da = (x - a.x).hypot(y - a.y);
                let db = (x - b.x).hypot(y - b.y);
                if da <= db {
                    Projection {
                        s: p.s0,
                        offset: side_offset(a, x, y).signum() * da,
                        distance: da,
                    }
                } else {
                    Projection {
                        s: p.s0 + p.segment.length(),
                        offset: side_offset(b, x, y).signum() * db,
                        distance: db,
                    }
                }
            }
        }
    }
}
