//! Path extraction from binary camera frames.
//!
//! Pipeline: bottom-up seed scan, upward region growing with lateral
//! re-seeding (which follows a single branch through forks), five-point
//! summary, normalization to `[-1, 1]`, and three-point curvature.

use crate::error::{Error, Result};
use crate::mdp::StateVector;
use crate::pid::VelocityCommand;
use crate::sim::{CameraConfig, CameraFrame};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct PixelPoint {
    /// Column.
    pub px: usize,
    /// Row, 0 at the top.
    pub py: usize,
}

impl PixelPoint {
    pub fn new(px: usize, py: usize) -> Self {
        PixelPoint { px, py }
    }
}

/// Points visited by the upward growth, in visiting order.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct GrownPath {
    pub points: Vec<PixelPoint>,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VisionConfig {
    /// Shortest run that counts as a single path.
    pub min_run: usize,
    /// Longest run that counts as a single path, as a fraction of the width.
    pub max_run_frac: f64,
    /// How far (pixels) lateral re-seeding looks to either side.
    pub lateral_reach: usize,
    /// Clamp bound for the curvature error (1/m).
    pub ec_bound: f64,
    /// Speed floor for the robot curvature (m/s).
    pub v_min: f64,
}

impl Default for VisionConfig {
    fn default() -> Self {
        VisionConfig {
            min_run: 2,
            max_run_frac: 0.6,
            lateral_reach: 3,
            ec_bound: 2.0,
            v_min: 0.05,
        }
    }
}

/// Thresholds an 8-bit image: dark pixels (`<= threshold`) become path.
pub fn binarize(gray: &[u8], width: usize, height: usize, threshold: u8) -> Result<CameraFrame> {
    if gray.len() != width * height {
        return Err(Error::Image(format!(
            "expected {} pixels, got {}",
            width * height,
            gray.len()
        )));
    }
    Ok(CameraFrame {
        width,
        height,
        pixels: gray.iter().map(|&g| (g <= threshold) as u8).collect(),
    })
}

/// Runs of path pixels in one row as inclusive `(first, last)` columns.
fn runs(row: &[u8]) -> Vec<(usize, usize)> {
    let mut out = Vec::new();
    let mut start = None;
    for (x, &p) in row.iter().enumerate() {
        match (p != 0, start) {
            (true, None) => start = Some(x),
            (false, Some(s)) => {
                out.push((s, x - 1));
                start = None;
            }
            _ => {}
        }
    }
    if let Some(s) = start {
        out.push((s, row.len() - 1));
    }
    out
}

/// Scans rows from the bottom up for the first row holding a single path run and
/// returns the midpoint of that run (even-width runs round toward the lower column).
pub fn find_seed(frame: &CameraFrame, cfg: &VisionConfig) -> Result<PixelPoint> {
    let max_run = (cfg.max_run_frac * frame.width as f64).floor() as usize;
    for py in (0..frame.height).rev() {
        let row = frame.row(py);
        let rs = runs(row);
        if rs.len() != 1 {
            continue;
        }
        let (first, last) = rs[0];
        let len = last - first + 1;
        if len < cfg.min_run || len > max_run {
            continue;
        }
        // boundaries found by scanning outward from the middle column
        let mid = frame.width / 2;
        let (left, right) = if mid < first {
            (first, (first..frame.width).take_while(|&x| row[x] != 0).last().unwrap())
        } else if mid > last {
            ((0..=last).rev().take_while(|&x| row[x] != 0).last().unwrap(), last)
        } else {
            (first, last)
        };
        return Ok(PixelPoint::new((left + right) / 2, py));
    }
    Err(Error::NoPath)
}

/// Upward region growing from `seed`.
///
/// Moves straight up while the pixel above is path. When blocked, looks along
/// the current row (through contiguous path pixels only, up to `reach` columns,
/// nearest first, left before right at equal distance) for a pixel whose upper
/// neighbor is path, and re-seeds there. Stops when neither move exists.
pub fn grow_up(frame: &CameraFrame, seed: PixelPoint, reach: usize) -> GrownPath {
    let mut points = vec![seed];
    let mut cur = seed;
    if !frame.get(seed.px, seed.py) {
        return GrownPath { points };
    }
    while cur.py > 0 {
        let up = cur.py - 1;
        if frame.get(cur.px, up) {
            cur = PixelPoint::new(cur.px, up);
            points.push(cur);
            continue;
        }
        let mut left_open = true;
        let mut right_open = true;
        let mut next = None;
        for d in 1..=reach {
            if left_open {
                if cur.px >= d && frame.get(cur.px - d, cur.py) {
                    if frame.get(cur.px - d, up) {
                        next = Some(cur.px - d);
                        break;
                    }
                } else {
                    left_open = false;
                }
            }
            if right_open {
                if cur.px + d < frame.width && frame.get(cur.px + d, cur.py) {
                    if frame.get(cur.px + d, up) {
                        next = Some(cur.px + d);
                        break;
                    }
                } else {
                    right_open = false;
                }
            }
        }
        match next {
            Some(px) => {
                cur = PixelPoint::new(px, cur.py);
                points.push(cur);
            }
            None => break,
        }
    }
    GrownPath { points }
}

/// Picks the points at rows `min`, `min + ⌈q·(max - min)⌉` for `q = 1/4, 1/2, 3/4`,
/// and `max` of the grown path (first stored point on each row).
/// Returned in that order, i.e. farthest from the robot first.
pub fn five_points(path: &GrownPath) -> [PixelPoint; 5] {
    let ymin = path.points.iter().map(|p| p.py).min().expect("grown path is never empty");
    let ymax = path.points.iter().map(|p| p.py).max().unwrap();
    let range = ymax - ymin;
    let targets = [
        ymin,
        ymin + (range + 3) / 4,
        ymin + (range + 1) / 2,
        ymin + (3 * range + 3) / 4,
        ymax,
    ];
    targets.map(|t| {
        // growth visits every row between min and max, so an exact match exists
        *path
            .points
            .iter()
            .find(|p| p.py == t)
            .expect("grown path covers every row in its range")
    })
}

/// Maps pixel points to `[-1, 1]^2`; output slot 0 is the point nearest the
/// robot (largest row), so its `x` is the tracking error.
pub fn normalize(points: &[PixelPoint; 5], width: usize, height: usize) -> [(f64, f64); 5] {
    let mut out = [(0.0, 0.0); 5];
    for (slot, p) in points.iter().rev().enumerate() {
        out[slot] = (
            2.0 * p.px as f64 / (width - 1) as f64 - 1.0,
            1.0 - 2.0 * p.py as f64 / (height - 1) as f64,
        );
    }
    out
}

/// Signed curvature of the circle through three points (Menger curvature);
/// positive when `p1 → p2 → p3` turns counter-clockwise.
pub fn three_point_curvature(p1: [f64; 2], p2: [f64; 2], p3: [f64; 2]) -> Result<f64> {
    let d12 = (p2[0] - p1[0]).hypot(p2[1] - p1[1]);
    let d23 = (p3[0] - p2[0]).hypot(p3[1] - p2[1]);
    let d13 = (p3[0] - p1[0]).hypot(p3[1] - p1[1]);
    if d12 == 0.0 || d23 == 0.0 || d13 == 0.0 {
        return Err(Error::Degenerate("three-point curvature needs distinct points".into()));
    }
    let cross = (p2[0] - p1[0]) * (p3[1] - p1[1]) - (p2[1] - p1[1]) * (p3[0] - p1[0]);
    Ok(2.0 * cross / (d12 * d23 * d13))
}

/// Builds the 13-dim observation. `e_c = c_robot - c_path`, clamped to `±ec_bound`.
pub fn assemble_state(
    points: &[(f64, f64); 5],
    c_robot: f64,
    c_path: f64,
    cmd: &VelocityCommand,
    ec_bound: f64,
) -> StateVector {
    let mut s = [0.0; 13];
    for (i, &(x, y)) in points.iter().enumerate() {
        s[2 * i] = x;
        s[2 * i + 1] = y;
    }
    s[StateVector::E_C] = (c_robot - c_path).clamp(-ec_bound, ec_bound);
    s[StateVector::V] = cmd.v;
    s[StateVector::OMEGA] = cmd.omega;
    StateVector(s)
}

/// Everything extracted from one frame.
#[derive(Debug, Clone, PartialEq)]
pub struct Observation {
    pub state: StateVector,
    pub path: GrownPath,
    pub summary: [PixelPoint; 5],
    pub c_path: f64,
    pub c_robot: f64,
}

/// Middle column of the path run that contains `p` on its row.
pub fn run_center(frame: &CameraFrame, p: PixelPoint) -> PixelPoint {
    let row = frame.row(p.py);
    if row[p.px] == 0 {
        return p;
    }
    let left = (0..=p.px).rev().take_while(|&x| row[x] != 0).last().unwrap_or(p.px);
    let right = (p.px..frame.width).take_while(|&x| row[x] != 0).last().unwrap_or(p.px);
    PixelPoint::new((left + right) / 2, p.py)
}

/// Path curvature from summary points 1, 3 and 5, each moved to the center of
/// its run and mapped onto the ground plane. Falls back to 0 when the points coincide.
///
/// Grown points hug whichever stripe edge the growth arrived on, and that edge
/// flips when the path reverses its lateral drift; centering removes the bias.
pub fn path_curvature(frame: &CameraFrame, summary: &[PixelPoint; 5], cam: &CameraConfig) -> f64 {
    let g = |p: &PixelPoint| {
        let c = run_center(frame, *p);
        let (f, l) = cam.pixel_to_ground(c.px as f64, c.py as f64);
        [f, l]
    };
    // summary runs far → near; feed the curvature near → far
    three_point_curvature(g(&summary[4]), g(&summary[2]), g(&summary[0])).unwrap_or(0.0)
}

/// Full pipeline from a binary frame and the last command to the observation.
pub fn observe(
    frame: &CameraFrame,
    cam: &CameraConfig,
    cmd: &VelocityCommand,
    cfg: &VisionConfig,
) -> Result<Observation> {
    let seed = find_seed(frame, cfg)?;
    let path = grow_up(frame, seed, cfg.lateral_reach);
    let summary = five_points(&path);
    let pairs = normalize(&summary, frame.width, frame.height);
    let c_path = path_curvature(frame, &summary, cam);
    let c_robot = crate::sim::robot_curvature(cmd, cfg.v_min);
    let state = assemble_state(&pairs, c_robot, c_path, cmd, cfg.ec_bound);
    Ok(Observation {
        state,
        path,
        summary,
        c_path,
        c_robot,
    })
}
