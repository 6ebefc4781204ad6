//! Closed line-following tracks built from straight and circular segments.
//!
//! Text format, one item per line (`#` starts a comment, angles in radians):
//!
//! ```text
//! WIDTH 0.06
//! START x y theta
//! LINE x0 y0 x1 y1
//! ARC cx cy r theta0 theta1 CCW|CW
//! FORK LINE ... [ARC ...] AT s
//! ```
//!
//! `LINE`/`ARC` rows form the centerline in driving order. A `FORK` row attaches
//! a dead-end branch (one or more chained segments) at centerline arc length `s`.

use std::f64::consts::{PI, TAU};
use std::fmt::Write as _;

use crate::error::{Error, Result};
use crate::sim::RobotPose;

const CLOSE_TOL: f64 = 1e-9;

pub type Point = [f64; 2];

fn dist(a: Point, b: Point) -> f64 {
    (a[0] - b[0]).hypot(a[1] - b[1])
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub enum Segment {
    Line {
        p0: Point,
        p1: Point,
    },
    /// Arc of radius `r` around `c` from polar angle `theta0` to `theta1`,
    /// swept counter-clockwise when `ccw`.
    Arc {
        c: Point,
        r: f64,
        theta0: f64,
        theta1: f64,
        ccw: bool,
    },
}

/// Nearest point on a segment.
#[derive(Debug, Clone, Copy)]
pub struct Projection {
    /// Arc length from the segment start.
    pub s: f64,
    pub distance: f64,
}

impl Segment {
    fn sweep(theta0: f64, theta1: f64, ccw: bool) -> f64 {
        let d = if ccw { theta1 - theta0 } else { theta0 - theta1 };
        let d = d.rem_euclid(TAU);
        if d == 0.0 {
            TAU
        } else {
            d
        }
    }

    pub fn length(&self) -> f64 {
        match *self {
            Segment::Line { p0, p1 } => dist(p0, p1),
            Segment::Arc { r, theta0, theta1, ccw, .. } => r * Self::sweep(theta0, theta1, ccw),
        }
    }

    /// Signed curvature, positive for left (counter-clockwise) turns.
    pub fn curvature(&self) -> f64 {
        match *self {
            Segment::Line { .. } => 0.0,
            Segment::Arc { r, ccw, .. } => {
                if ccw {
                    1.0 / r
                } else {
                    -1.0 / r
                }
            }
        }
    }

    /// Position and heading at arc length `s` (clamped to the segment).
    pub fn point_at(&self, s: f64) -> (Point, f64) {
        let s = s.clamp(0.0, self.length());
        match *self {
            Segment::Line { p0, p1 } => {
                let len = dist(p0, p1);
                let h = (p1[1] - p0[1]).atan2(p1[0] - p0[0]);
                let t = if len > 0.0 { s / len } else { 0.0 };
                ([p0[0] + t * (p1[0] - p0[0]), p0[1] + t * (p1[1] - p0[1])], h)
            }
            Segment::Arc { c, r, theta0, ccw, .. } => {
                let dir = if ccw { 1.0 } else { -1.0 };
                let phi = theta0 + dir * s / r;
                let heading = phi + dir * PI / 2.0;
                ([c[0] + r * phi.cos(), c[1] + r * phi.sin()], heading)
            }
        }
    }

    pub fn start(&self) -> Point {
        self.point_at(0.0).0
    }

    pub fn end(&self) -> Point {
        match *self {
            Segment::Line { p1, .. } => p1,
            Segment::Arc { c, r, theta1, .. } => [c[0] + r * theta1.cos(), c[1] + r * theta1.sin()],
        }
    }

    pub fn project(&self, p: Point) -> Projection {
        match *self {
            Segment::Line { p0, p1 } => {
                let d = [p1[0] - p0[0], p1[1] - p0[1]];
                let len2 = d[0] * d[0] + d[1] * d[1];
                let t = if len2 > 0.0 {
                    (((p[0] - p0[0]) * d[0] + (p[1] - p0[1]) * d[1]) / len2).clamp(0.0, 1.0)
                } else {
                    0.0
                };
                let q = [p0[0] + t * d[0], p0[1] + t * d[1]];
                Projection {
                    s: t * len2.sqrt(),
                    distance: dist(p, q),
                }
            }
            Segment::Arc { c, r, theta0, theta1, ccw } => {
                let sweep = Self::sweep(theta0, theta1, ccw);
                let phi = (p[1] - c[1]).atan2(p[0] - c[0]);
                let t = if ccw { phi - theta0 } else { theta0 - phi }.rem_euclid(TAU);
                if t <= sweep {
                    Projection {
                        s: t * r,
                        distance: (dist(p, c) - r).abs(),
                    }
                } else {
                    let d0 = dist(p, self.start());
                    let d1 = dist(p, self.end());
                    if d0 <= d1 {
                        Projection { s: 0.0, distance: d0 }
                    } else {
                        Projection {
                            s: sweep * r,
                            distance: d1,
                        }
                    }
                }
            }
        }
    }

    /// Axis-aligned bounding box `[xmin, ymin, xmax, ymax]`.
    pub fn bbox(&self) -> [f64; 4] {
        let (a, b) = (self.start(), self.end());
        let mut bb = [a[0].min(b[0]), a[1].min(b[1]), a[0].max(b[0]), a[1].max(b[1])];
        if let Segment::Arc { c, r, theta0, theta1, ccw } = *self {
            let sweep = Self::sweep(theta0, theta1, ccw);
            for k in 0..4 {
                let ang = k as f64 * PI / 2.0;
                let t = if ccw { ang - theta0 } else { theta0 - ang }.rem_euclid(TAU);
                if t <= sweep {
                    let q = [c[0] + r * ang.cos(), c[1] + r * ang.sin()];
                    bb = [bb[0].min(q[0]), bb[1].min(q[1]), bb[2].max(q[0]), bb[3].max(q[1])];
                }
            }
        }
        bb
    }

    fn write_to(&self, out: &mut String) {
        match *self {
            Segment::Line { p0, p1 } => {
                let _ = write!(out, "LINE {:?} {:?} {:?} {:?}", p0[0], p0[1], p1[0], p1[1]);
            }
            Segment::Arc { c, r, theta0, theta1, ccw } => {
                let _ = write!(
                    out,
                    "ARC {:?} {:?} {:?} {:?} {:?} {}",
                    c[0],
                    c[1],
                    r,
                    theta0,
                    theta1,
                    if ccw { "CCW" } else { "CW" }
                );
            }
        }
    }
}

/// A dead-end branch leaving the centerline at arc length `at_s`.
#[derive(Debug, Clone, PartialEq)]
pub struct Fork {
    pub at_s: f64,
    pub segments: Vec<Segment>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Track {
    pub name: String,
    pub centerline: Vec<Segment>,
    pub forks: Vec<Fork>,
    pub line_width: f64,
    pub start_pose: RobotPose,
    cumulative: Vec<f64>,
}

/// Nearest centerline point.
#[derive(Debug, Clone, Copy)]
pub struct TrackProjection {
    pub segment: usize,
    /// Arc length along the whole loop.
    pub s: f64,
    pub distance: f64,
}

impl Track {
    pub fn new(
        name: impl Into<String>,
        centerline: Vec<Segment>,
        forks: Vec<Fork>,
        line_width: f64,
        start_pose: RobotPose,
    ) -> Result<Self> {
        if centerline.is_empty() {
            return Err(Error::Track("centerline is empty".into()));
        }
        if !(line_width > 0.0 && line_width.is_finite()) {
            return Err(Error::Track(format!("line width must be positive, got {line_width}")));
        }
        for seg in centerline.iter().chain(forks.iter().flat_map(|f| f.segments.iter())) {
            if let Segment::Arc { r, .. } = seg {
                if !(*r > 0.0 && r.is_finite()) {
                    return Err(Error::Track(format!("arc radius must be nonzero, got {r}")));
                }
            }
            if !(seg.length() > 0.0) {
                return Err(Error::Track("zero-length segment".into()));
            }
        }
        let n = centerline.len();
        for i in 0..n {
            let gap = dist(centerline[i].end(), centerline[(i + 1) % n].start());
            if gap > CLOSE_TOL {
                let what = if i + 1 == n { "centerline does not close" } else { "centerline has a gap" };
                return Err(Error::Track(format!("{what} after segment {} ({gap:e} m)", i + 1)));
            }
        }
        let mut cumulative = Vec::with_capacity(n + 1);
        let mut acc = 0.0;
        cumulative.push(0.0);
        for seg in &centerline {
            acc += seg.length();
            cumulative.push(acc);
        }
        let mut track = Track {
            name: name.into(),
            centerline,
            forks,
            line_width,
            start_pose,
            cumulative,
        };
        for (k, fork) in track.forks.iter().enumerate() {
            if fork.segments.is_empty() {
                return Err(Error::Track(format!("fork {} has no segments", k + 1)));
            }
            let (attach, _) = track.point_at(fork.at_s);
            let gap = dist(attach, fork.segments[0].start());
            if gap > CLOSE_TOL {
                return Err(Error::Track(format!(
                    "fork {} does not start on the centerline at s={} ({gap:e} m off)",
                    k + 1,
                    fork.at_s
                )));
            }
            for w in fork.segments.windows(2) {
                if dist(w[0].end(), w[1].start()) > CLOSE_TOL {
                    return Err(Error::Track(format!("fork {} has a gap", k + 1)));
                }
            }
        }
        track.start_pose.theta = crate::sim::wrap_angle(track.start_pose.theta);
        Ok(track)
    }

    pub fn length(&self) -> f64 {
        *self.cumulative.last().unwrap()
    }

    /// Position and heading at loop arc length `s` (wrapped).
    pub fn point_at(&self, s: f64) -> (Point, f64) {
        let s = s.rem_euclid(self.length());
        let i = match self.cumulative.binary_search_by(|c| c.total_cmp(&s)) {
            Ok(i) => i.min(self.centerline.len() - 1),
            Err(i) => i - 1,
        };
        self.centerline[i].point_at(s - self.cumulative[i])
    }

    /// Every drawn segment: centerline then fork branches.
    pub fn all_segments(&self) -> impl Iterator<Item = &Segment> {
        self.centerline
            .iter()
            .chain(self.forks.iter().flat_map(|f| f.segments.iter()))
    }

    /// Projection onto each centerline segment, nearest first.
    pub fn projections(&self, p: Point) -> Vec<TrackProjection> {
        let mut out: Vec<TrackProjection> = self
            .centerline
            .iter()
            .enumerate()
            .map(|(i, seg)| {
                let pr = seg.project(p);
                TrackProjection {
                    segment: i,
                    s: self.cumulative[i] + pr.s,
                    distance: pr.distance,
                }
            })
            .collect();
        out.sort_by(|a, b| a.distance.total_cmp(&b.distance).then(a.segment.cmp(&b.segment)));
        out
    }

    pub fn project(&self, p: Point) -> TrackProjection {
        self.projections(p)[0]
    }

    /// Signed curvature of the centerline segment nearest to `pose`
    /// (positive = left turn). Fails when the pose is more than `max_offset` away.
    pub fn ground_truth_curvature(&self, pose: &RobotPose, max_offset: f64) -> Result<f64> {
        let pr = self.project([pose.x, pose.y]);
        if pr.distance > max_offset {
            return Err(Error::OffTrack { distance: pr.distance });
        }
        Ok(self.centerline[pr.segment].curvature())
    }

    pub fn parse(name: &str, text: &str) -> Result<Self> {
        let mut width = None;
        let mut start = None;
        let mut centerline = Vec::new();
        let mut forks = Vec::new();
        for (lineno, raw) in text.lines().enumerate() {
            let line = lineno + 1;
            let content = raw.split('#').next().unwrap_or("").trim();
            if content.is_empty() {
                continue;
            }
            let toks: Vec<&str> = content.split_whitespace().collect();
            let err = |msg: String| Error::TrackParse { line, msg };
            match toks[0].to_ascii_uppercase().as_str() {
                "WIDTH" => {
                    let v = nums(&toks[1..], 1, line)?;
                    width = Some(v[0]);
                }
                "START" => {
                    let v = nums(&toks[1..], 3, line)?;
                    start = Some(RobotPose::new(v[0], v[1], v[2]));
                }
                "LINE" | "ARC" => {
                    let (seg, used) = parse_segment(&toks, line)?;
                    if used != toks.len() {
                        return Err(err(format!("trailing tokens after {}", toks[0])));
                    }
                    centerline.push(seg);
                }
                "FORK" => {
                    let mut i = 1;
                    let mut segs = Vec::new();
                    while i < toks.len() && !toks[i].eq_ignore_ascii_case("AT") {
                        let (seg, used) = parse_segment(&toks[i..], line)?;
                        segs.push(seg);
                        i += used;
                    }
                    if i + 2 != toks.len() {
                        return Err(err("FORK must end with `AT s`".into()));
                    }
                    let at = nums(&toks[i + 1..], 1, line)?[0];
                    forks.push(Fork { at_s: at, segments: segs });
                }
                other => return Err(err(format!("unknown keyword `{other}`"))),
            }
        }
        let width = width.ok_or(Error::TrackParse { line: 0, msg: "missing WIDTH".into() })?;
        let start = start.ok_or(Error::TrackParse { line: 0, msg: "missing START".into() })?;
        Track::new(name, centerline, forks, width, start)
    }

    pub fn to_text(&self) -> String {
        let mut out = String::new();
        let _ = writeln!(out, "# track {}", self.name);
        let _ = writeln!(out, "WIDTH {:?}", self.line_width);
        let p = &self.start_pose;
        let _ = writeln!(out, "START {:?} {:?} {:?}", p.x, p.y, p.theta);
        for seg in &self.centerline {
            seg.write_to(&mut out);
            out.push('\n');
        }
        for f in &self.forks {
            out.push_str("FORK");
            for seg in &f.segments {
                out.push(' ');
                seg.write_to(&mut out);
            }
            let _ = writeln!(out, " AT {:?}", f.at_s);
        }
        out
    }

    /// One of the bundled tracks: `oval`, `multicurve` or `forks`.
    pub fn builtin(name: &str) -> Result<Self> {
        let text = match name {
            "oval" => include_str!("../tracks/oval.track"),
            "multicurve" => include_str!("../tracks/multicurve.track"),
            "forks" => include_str!("../tracks/forks.track"),
            other => return Err(Error::Track(format!("no built-in track named `{other}`"))),
        };
        Track::parse(name, text)
    }

    /// A built-in name or a path to a track file.
    pub fn load(spec: &str) -> Result<Self> {
        if matches!(spec, "oval" | "multicurve" | "forks") {
            return Track::builtin(spec);
        }
        let text = std::fs::read_to_string(spec).map_err(|e| Error::io(spec, e))?;
        let name = std::path::Path::new(spec)
            .file_stem()
            .and_then(|s| s.to_str())
            .unwrap_or(spec);
        Track::parse(name, &text)
    }
}

fn nums(toks: &[&str], n: usize, line: usize) -> Result<Vec<f64>> {
    if toks.len() < n {
        return Err(Error::TrackParse {
            line,
            msg: format!("expected {n} numbers, found {}", toks.len()),
        });
    }
    toks[..n]
        .iter()
        .map(|t| {
            t.parse::<f64>()
                .ok()
                .filter(|v| v.is_finite())
                .ok_or_else(|| Error::TrackParse {
                    line,
                    msg: format!("`{t}` is not a number"),
                })
        })
        .collect()
}

/// Parses one `LINE`/`ARC` spec at the front of `toks`; returns tokens consumed.
fn parse_segment(toks: &[&str], line: usize) -> Result<(Segment, usize)> {
    match toks[0].to_ascii_uppercase().as_str() {
        "LINE" => {
            let v = nums(&toks[1..], 4, line)?;
            Ok((Segment::Line { p0: [v[0], v[1]], p1: [v[2], v[3]] }, 5))
        }
        "ARC" => {
            let v = nums(&toks[1..], 5, line)?;
            let dir = toks.get(6).ok_or(Error::TrackParse {
                line,
                msg: "ARC needs a direction".into(),
            })?;
            let ccw = match dir.to_ascii_uppercase().as_str() {
                "CCW" | "1" | "+1" => true,
                "CW" | "-1" => false,
                other => {
                    return Err(Error::TrackParse {
                        line,
                        msg: format!("bad arc direction `{other}`"),
                    })
                }
            };
            Ok((
                Segment::Arc {
                    c: [v[0], v[1]],
                    r: v[2],
                    theta0: v[3],
                    theta1: v[4],
                    ccw,
                },
                7,
            ))
        }
        other => Err(Error::TrackParse {
            line,
            msg: format!("expected LINE or ARC, found `{other}`"),
        }),
    }
}
