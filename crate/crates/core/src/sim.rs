//! Kinematic line-following simulator: unicycle motion, a synthetic top-down
//! camera and episode bookkeeping.

use std::f64::consts::{PI, TAU};

use crate::error::{Error, Result};
use crate::pid::VelocityCommand;
use crate::track::{Segment, Track};

/// Wraps an angle into `(-π, π]`.
pub fn wrap_angle(a: f64) -> f64 {
    let w = (a + PI).rem_euclid(TAU) - PI;
    if w <= -PI {
        w + TAU
    } else {
        w
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RobotPose {
    pub x: f64,
    pub y: f64,
    /// Heading, wrapped to `(-π, π]`.
    pub theta: f64,
}

impl RobotPose {
    pub fn new(x: f64, y: f64, theta: f64) -> Self {
        RobotPose {
            x,
            y,
            theta: wrap_angle(theta),
        }
    }
}

/// Exact integration of the unicycle model for constant `(v, ω)` over `dt`.
pub fn step_kinematics(pose: &RobotPose, cmd: &VelocityCommand, dt: f64) -> RobotPose {
    debug_assert!(dt > 0.0);
    let VelocityCommand { v, omega } = *cmd;
    let th = pose.theta;
    if omega.abs() < 1e-9 {
        RobotPose::new(pose.x + v * dt * th.cos(), pose.y + v * dt * th.sin(), th)
    } else {
        let radius = v / omega;
        let th1 = th + omega * dt;
        RobotPose::new(
            pose.x + radius * (th1.sin() - th.sin()),
            pose.y - radius * (th1.cos() - th.cos()),
            th1,
        )
    }
}

/// `ω / max(v, v_min)`; positive for left turns.
pub fn robot_curvature(cmd: &VelocityCommand, v_min: f64) -> f64 {
    cmd.omega / cmd.v.max(v_min)
}

/// Ground window seen by the downward camera, in the robot frame.
///
/// Row 0 is the far edge, the bottom row is the near edge. Columns run from the
/// robot's right (column 0) to its left, so a path lying to the left shows up at
/// large column indices.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct CameraConfig {
    pub width: usize,
    pub height: usize,
    /// Distance from the robot origin to the near edge of the window (m).
    pub near: f64,
    /// Forward extent of the window (m).
    pub length: f64,
    /// Lateral extent of the window (m).
    pub span: f64,
}

impl Default for CameraConfig {
    fn default() -> Self {
        CameraConfig {
            width: 48,
            height: 64,
            near: 0.10,
            length: 0.64,
            span: 0.48,
        }
    }
}

impl CameraConfig {
    pub fn validate(&self) -> Result<()> {
        if self.width < 3 || self.height < 3 {
            return Err(Error::Config("camera needs at least 3x3 pixels".into()));
        }
        if !(self.length > 0.0 && self.span > 0.0 && self.near >= 0.0) {
            return Err(Error::Config("camera window must have positive size".into()));
        }
        Ok(())
    }

    /// Robot-frame `(forward, left)` coordinates of a pixel center.
    pub fn pixel_to_ground(&self, px: f64, py: f64) -> (f64, f64) {
        let fwd = self.near + (self.height as f64 - py - 0.5) * self.length / self.height as f64;
        let left = (px + 0.5 - self.width as f64 / 2.0) * self.span / self.width as f64;
        (fwd, left)
    }
}

/// Binary camera image, row-major, row 0 at the top. `1` = path.
#[derive(Debug, Clone, PartialEq, Eq)]
pub struct CameraFrame {
    pub width: usize,
    pub height: usize,
    pub pixels: Vec<u8>,
}

impl CameraFrame {
    pub fn zeros(width: usize, height: usize) -> Self {
        CameraFrame {
            width,
            height,
            pixels: vec![0; width * height],
        }
    }

    pub fn get(&self, px: usize, py: usize) -> bool {
        self.pixels[py * self.width + px] != 0
    }

    pub fn set(&mut self, px: usize, py: usize, on: bool) {
        self.pixels[py * self.width + px] = on as u8;
    }

    pub fn row(&self, py: usize) -> &[u8] {
        &self.pixels[py * self.width..(py + 1) * self.width]
    }

    pub fn count(&self) -> usize {
        self.pixels.iter().filter(|&&p| p != 0).count()
    }

    /// Any path pixel within the bottom `rows` rows.
    pub fn has_path_in_bottom(&self, rows: usize) -> bool {
        let first = self.height.saturating_sub(rows);
        self.pixels[first * self.width..].iter().any(|&p| p != 0)
    }

    /// Grayscale rendering: path black (0), ground white (255).
    pub fn to_gray(&self) -> Vec<u8> {
        self.pixels.iter().map(|&p| if p != 0 { 0 } else { 255 }).collect()
    }

    pub fn to_pgm(&self) -> Vec<u8> {
        crate::pgm::encode(self.width, self.height, &self.to_gray())
    }
}

/// Rasterizes the track as seen from `pose`: a pixel is set iff its ground point
/// lies within half a line width of any centerline or fork segment.
pub fn render_frame(pose: &RobotPose, track: &Track, cam: &CameraConfig) -> CameraFrame {
    let mut frame = CameraFrame::zeros(cam.width, cam.height);
    let half = track.line_width / 2.0;
    let (s, c) = pose.theta.sin_cos();
    let to_world = |fwd: f64, left: f64| [pose.x + c * fwd - s * left, pose.y + s * fwd + c * left];

    // bounding circle of the window for culling
    let center = to_world(cam.near + cam.length / 2.0, 0.0);
    let reach = 0.5 * cam.length.hypot(cam.span) + half;
    let near: Vec<&Segment> = track
        .all_segments()
        .filter(|seg| {
            let bb = seg.bbox();
            let dx = (bb[0] - center[0]).max(center[0] - bb[2]).max(0.0);
            let dy = (bb[1] - center[1]).max(center[1] - bb[3]).max(0.0);
            dx.hypot(dy) <= reach
        })
        .collect();
    if near.is_empty() {
        return frame;
    }
    for py in 0..cam.height {
        for px in 0..cam.width {
            let (fwd, left) = cam.pixel_to_ground(px as f64, py as f64);
            let p = to_world(fwd, left);
            if near.iter().any(|seg| seg.project(p).distance <= half) {
                frame.pixels[py * cam.width + px] = 1;
            }
        }
    }
    frame
}

/// Episode termination limits.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeLimits {
    pub max_steps: usize,
    /// Bottom rows that must contain path pixels for the line to count as visible.
    pub scan_rows: usize,
    /// Lap completion radius around the start pose (m).
    pub lap_tolerance: f64,
    pub dt: f64,
}

impl Default for EpisodeLimits {
    fn default() -> Self {
        EpisodeLimits {
            max_steps: 2000,
            scan_rows: 16,
            lap_tolerance: 0.1,
            dt: 0.05,
        }
    }
}

/// Running state of one episode.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct EpisodeStatus {
    pub done: bool,
    /// Failure flag; meaningful only when `done` (0 = lap completed).
    pub kappa: u8,
    pub steps: usize,
    /// Travelled arc length (m).
    pub distance: f64,
    /// Mean speed over the episode (m/s).
    pub mean_speed: f64,
    /// Signed progress along the centerline since the start (m).
    pub progress: f64,
    /// Last centerline arc-length coordinate.
    pub last_s: f64,
}

impl EpisodeStatus {
    pub fn start(track: &Track, pose: &RobotPose) -> Self {
        EpisodeStatus {
            done: false,
            kappa: 0,
            steps: 0,
            distance: 0.0,
            mean_speed: 0.0,
            progress: 0.0,
            last_s: track.project([pose.x, pose.y]).s,
        }
    }

    pub fn success(&self) -> bool {
        self.done && self.kappa == 0
    }
}

/// Maximum jump of the centerline coordinate between two steps before the
/// projection is considered to have snapped to another part of the loop.
const PROGRESS_WINDOW: f64 = 0.5;

/// Advances the bookkeeping by one step of length `step_len` ending at `pose`.
pub fn episode_update(
    status: &EpisodeStatus,
    frame: &CameraFrame,
    pose: &RobotPose,
    track: &Track,
    limits: &EpisodeLimits,
    step_len: f64,
) -> EpisodeStatus {
    let mut st = *status;
    if st.done {
        return st;
    }
    st.steps += 1;
    st.distance += step_len.abs();
    st.mean_speed = st.distance / (st.steps as f64 * limits.dt);

    let total = track.length();
    let wrap = |d: f64| (d + total / 2.0).rem_euclid(total) - total / 2.0;
    let candidates = track.projections([pose.x, pose.y]);
    let pick = candidates
        .iter()
        .find(|c| wrap(c.s - st.last_s).abs() <= PROGRESS_WINDOW)
        .unwrap_or(&candidates[0]);
    st.progress += wrap(pick.s - st.last_s);
    st.last_s = pick.s;

    let start = &track.start_pose;
    if !frame.has_path_in_bottom(limits.scan_rows) {
        st.done = true;
        st.kappa = 1;
    } else if st.progress >= total
        && (pose.x - start.x).hypot(pose.y - start.y) <= limits.lap_tolerance
    {
        st.done = true;
        st.kappa = 0;
    } else if st.steps >= limits.max_steps {
        st.done = true;
        st.kappa = 1;
    }
    st
}
