//! Independent reference checks shared by the integration tests and the
//! acceptance suite.

#![allow(dead_code)]

use std::collections::{BTreeSet, VecDeque};
use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use lsacpid::agent::AgentConfig;
use lsacpid::sim::CameraFrame;
use lsacpid::vision::{find_seed, grow_up, GrownPath, PixelPoint, VisionConfig};

pub const WIDTH: usize = 48;
pub const HEIGHT: usize = 64;

/// Pass/fail plus a one-line explanation.
#[derive(Debug, Clone)]
pub struct Outcome {
    pub pass: bool,
    pub detail: String,
}

impl Outcome {
    pub fn new(pass: bool, detail: impl Into<String>) -> Self {
        Outcome {
            pass,
            detail: detail.into(),
        }
    }
}

// ---------------------------------------------------------------- vision

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum FrameKind {
    Straight,
    Arc,
    SCurve,
    Fork,
}

pub struct SyntheticFrame {
    pub kind: FrameKind,
    pub frame: CameraFrame,
}

/// Stripe of half width `hw` around the center line `x = f(t)`, with `t` the
/// number of rows above the bottom row.
fn draw(frame: &mut CameraFrame, hw: f64, t_range: std::ops::Range<usize>, f: impl Fn(f64) -> f64) {
    for t in t_range {
        let y = HEIGHT - 1 - t;
        let c = f(t as f64);
        for x in 0..WIDTH {
            if (x as f64 - c).abs() <= hw {
                frame.set(x, y, true);
            }
        }
    }
}

/// Randomized frame of the requested kind.
pub fn synthetic_frame(kind: FrameKind, rng: &mut ChaCha8Rng) -> SyntheticFrame {
    let mut frame = CameraFrame::zeros(WIDTH, HEIGHT);
    let hw = rng.gen_range(1.0..2.0);
    let x0 = rng.gen_range(16.0..32.0);
    match kind {
        FrameKind::Straight => {
            let s = rng.gen_range(-0.25..0.25);
            draw(&mut frame, hw, 0..HEIGHT, |t| x0 + s * t);
        }
        FrameKind::Arc => {
            let c = rng.gen_range(0.002..0.006) * if rng.gen_bool(0.5) { 1.0 } else { -1.0 };
            draw(&mut frame, hw, 0..HEIGHT, |t| x0 + c * t * t);
        }
        FrameKind::SCurve => {
            let a = rng.gen_range(3.0..8.0);
            let p = rng.gen_range(40.0..80.0);
            draw(&mut frame, hw, 0..HEIGHT, |t| x0 + a * (2.0 * PI * t / p).sin());
        }
        FrameKind::Fork => {
            let tf = rng.gen_range(15..30);
            let sl = rng.gen_range(0.4..1.0);
            let sr = rng.gen_range(0.4..1.0);
            let tf_f = tf as f64;
            draw(&mut frame, hw, 0..tf, |_| x0);
            draw(&mut frame, hw, tf..HEIGHT, |t| x0 - sl * (t - tf_f));
            let right_end = if rng.gen_bool(0.3) { rng.gen_range(tf + 15..HEIGHT) } else { HEIGHT };
            draw(&mut frame, hw, tf..right_end, |t| x0 + sr * (t - tf_f));
        }
    }
    SyntheticFrame { kind, frame }
}

/// 50 frames: 10 straight, 10 arc, 10 S-curve, 20 fork.
pub fn frame_suite(seed: u64) -> Vec<SyntheticFrame> {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut kinds = vec![FrameKind::Straight; 10];
    kinds.extend([FrameKind::Arc; 10]);
    kinds.extend([FrameKind::SCurve; 10]);
    kinds.extend([FrameKind::Fork; 20]);
    kinds.into_iter().map(|k| synthetic_frame(k, &mut rng)).collect()
}

type Px = (usize, usize);

/// Path pixels reachable from `seed` by steps up, left or right (never down).
pub fn flood_non_descending(frame: &CameraFrame, seed: Px) -> BTreeSet<Px> {
    let mut seen = BTreeSet::new();
    if !frame.get(seed.0, seed.1) {
        return seen;
    }
    let mut queue = VecDeque::from([seed]);
    seen.insert(seed);
    while let Some((x, y)) = queue.pop_front() {
        let mut next = Vec::new();
        if y > 0 {
            next.push((x, y - 1));
        }
        if x > 0 {
            next.push((x - 1, y));
        }
        if x + 1 < frame.width {
            next.push((x + 1, y));
        }
        for n in next {
            if frame.get(n.0, n.1) && seen.insert(n) {
                queue.push_back(n);
            }
        }
    }
    seen
}

/// 4-connected components of `set`.
pub fn components(set: &BTreeSet<Px>) -> Vec<BTreeSet<Px>> {
    let mut left: BTreeSet<Px> = set.clone();
    let mut out = Vec::new();
    while let Some(&start) = left.iter().next() {
        left.remove(&start);
        let mut comp = BTreeSet::from([start]);
        let mut stack = vec![start];
        while let Some((x, y)) = stack.pop() {
            let cand = [
                (x.wrapping_sub(1), y),
                (x + 1, y),
                (x, y.wrapping_sub(1)),
                (x, y + 1),
            ];
            for c in cand {
                if left.remove(&c) {
                    comp.insert(c);
                    stack.push(c);
                }
            }
        }
        out.push(comp);
    }
    out
}

/// Number of maximal horizontal runs of `set` on row `y`.
fn runs_on_row(set: &BTreeSet<Px>, y: usize) -> usize {
    let xs: Vec<usize> = set.iter().filter(|p| p.1 == y).map(|p| p.0).collect();
    if xs.is_empty() {
        return 0;
    }
    1 + xs.windows(2).filter(|w| w[1] != w[0] + 1).count()
}

/// Checks one grown path against the flood trace. Returns an error message on mismatch.
pub fn check_growth(sf: &SyntheticFrame, cfg: &VisionConfig) -> Result<(), String> {
    let seed = find_seed(&sf.frame, cfg).map_err(|e| format!("no seed: {e}"))?;
    let grown: GrownPath = grow_up(&sf.frame, seed, cfg.lateral_reach);
    let reach = flood_non_descending(&sf.frame, (seed.px, seed.py));
    let pts: Vec<Px> = grown.points.iter().map(|p| (p.px, p.py)).collect();

    if pts[0] != (seed.px, seed.py) {
        return Err("growth does not start at the seed".into());
    }
    if let Some(p) = pts.iter().find(|p| !reach.contains(p)) {
        return Err(format!("grown point {p:?} is not reachable without descending"));
    }
    for w in pts.windows(2) {
        let ((x0, y0), (x1, y1)) = (w[0], w[1]);
        let vertical = x1 == x0 && y1 + 1 == y0;
        let lateral = y1 == y0
            && x0.abs_diff(x1) <= cfg.lateral_reach
            && (x0.min(x1)..=x0.max(x1)).all(|x| sf.frame.get(x, y0));
        if !(vertical || lateral) {
            return Err(format!("illegal move {:?} -> {:?}", w[0], w[1]));
        }
    }
    let top = pts.iter().map(|p| p.1).min().unwrap();

    // rows where the reachable set splits into separate branches
    let split = (0..HEIGHT).rev().find(|&y| runs_on_row(&reach, y) >= 2);
    match (sf.kind, split) {
        (FrameKind::Fork, None) => Err("fork frame without a visible split".into()),
        (FrameKind::Fork, Some(split)) => {
            let upper: BTreeSet<Px> = reach.iter().copied().filter(|p| p.1 <= split).collect();
            let branches = components(&upper);
            let touched: Vec<&BTreeSet<Px>> = branches
                .iter()
                .filter(|b| pts.iter().any(|p| b.contains(p)))
                .collect();
            if touched.len() != 1 {
                return Err(format!("growth touches {} branches above the fork", touched.len()));
            }
            let branch_top = touched[0].iter().map(|p| p.1).min().unwrap();
            if top != branch_top {
                return Err(format!("stopped at row {top}, branch reaches row {branch_top}"));
            }
            Ok(())
        }
        (_, _) => {
            let reach_top = reach.iter().map(|p| p.1).min().unwrap();
            if top != reach_top {
                return Err(format!("stopped at row {top}, flood trace reaches row {reach_top}"));
            }
            Ok(())
        }
    }
}

/// Runs the full frame suite; `Ok` carries the number of fork frames checked.
pub fn vision_oracle(seed: u64) -> Result<usize, String> {
    let cfg = VisionConfig::default();
    let suite = frame_suite(seed);
    let mut forks = 0;
    for (i, sf) in suite.iter().enumerate() {
        check_growth(sf, &cfg).map_err(|e| format!("frame {i} ({:?}): {e}", sf.kind))?;
        forks += usize::from(sf.kind == FrameKind::Fork);
    }
    Ok(forks)
}

/// Quantile rows worked out by hand: `(rows of a vertical path, expected rows)`.
pub const QUANTILE_CASES: [(std::ops::RangeInclusive<usize>, [usize; 5]); 5] = [
    (10..=50, [10, 20, 30, 40, 50]),
    (10..=11, [10, 11, 11, 11, 11]),
    (0..=7, [0, 2, 4, 6, 7]),
    (5..=5, [5, 5, 5, 5, 5]),
    (3..=12, [3, 6, 8, 10, 12]),
];

pub fn vertical_path(rows: std::ops::RangeInclusive<usize>, px: usize) -> GrownPath {
    GrownPath {
        points: rows.rev().map(|py| PixelPoint::new(px, py)).collect(),
    }
}

// ------------------------------------------------------------- training

/// Small fast configuration for plumbing checks (not for learning quality).
pub fn tiny_agent() -> AgentConfig {
    let mut c = AgentConfig::desk();
    c.hidden = 8;
    c.batch_size = 16;
    c.buffer_capacity = 5000;
    c.max_episodes = 3;
    c.limits.max_steps = 120;
    c
}

// ------------------------------------------------------------- curvature

use lsacpid::sim::{render_frame, CameraConfig, RobotPose};
use lsacpid::track::Track;
use lsacpid::vision::{five_points as summary_points, path_curvature, three_point_curvature};

/// Worst absolute error of the three-point curvature on exact circle samples.
pub fn exact_circle_error(seed: u64) -> f64 {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut worst: f64 = 0.0;
    for _ in 0..200 {
        let r = 10f64.powf(rng.gen_range(-1.3..2.0));
        let (cx, cy) = (rng.gen_range(-5.0..5.0), rng.gen_range(-5.0..5.0));
        let mut th = [rng.gen_range(0.0..2.0 * PI), 0.0, 0.0];
        th[1] = th[0] + rng.gen_range(0.2..2.0);
        th[2] = th[1] + rng.gen_range(0.2..2.0);
        let p = th.map(|t| [cx + r * t.cos(), cy + r * t.sin()]);
        // increasing angle runs counter-clockwise: positive curvature
        let k = three_point_curvature(p[0], p[1], p[2]).unwrap();
        worst = worst.max((k - 1.0 / r).abs());
        let k_rev = three_point_curvature(p[2], p[1], p[0]).unwrap();
        worst = worst.max((k_rev + 1.0 / r).abs());
    }
    worst
}

/// A full circle of radius `r` around the origin with line width `w`.
pub fn circle_track(r: f64, w: f64) -> Track {
    let text = format!(
        "WIDTH {w}\nSTART {r} 0 {}\nARC 0 0 {r} 0 {} CCW\nARC 0 0 {r} {} {} CCW\n",
        PI / 2.0,
        PI,
        PI,
        2.0 * PI
    );
    Track::parse("circle", &text).unwrap()
}

/// Worst relative error of the image-based curvature on rendered arcs with
/// radius at least five line widths. The robot sits at the origin facing +x and
/// each circle passes just ahead of it, rotated by a sweep of chord angles and
/// mirrored for right turns. Only frames where the arc stays inside the image
/// (no path pixels in the outer columns) and the grown path spans at least
/// `MIN_ROWS` rows are scored, since clipped arcs carry no curvature signal.
/// Returns `(worst, cases)`.
pub fn rasterized_arc_error() -> (f64, usize) {
    const MIN_ROWS: usize = 24;
    let cam = CameraConfig::default();
    let vis = VisionConfig::default();
    let mut worst: f64 = 0.0;
    let mut cases = 0;
    for (r, w) in [
        (0.2, 0.04),
        (0.3, 0.04),
        (0.3, 0.06),
        (0.5, 0.04),
        (0.5, 0.06),
        (0.8, 0.06),
        (1.2, 0.04),
        (2.0, 0.06),
    ] {
        assert!(r >= 5.0 * w);
        for deg in (0..=80).step_by(5) {
            for turn in [1.0, -1.0] {
                let b = (deg as f64).to_radians();
                let (cx, cy) = (0.05 + r * b.sin(), turn * r * b.cos());
                let text = format!(
                    "WIDTH {w}\nSTART 0 0 0\nARC {cx} {cy} {r} 0 {PI} CCW\nARC {cx} {cy} {r} {PI} {} CCW\n",
                    2.0 * PI
                );
                let track = Track::parse("arc", &text).unwrap();
                let frame = render_frame(&RobotPose::new(0.0, 0.0, 0.0), &track, &cam);
                let edge = frame.width - 1;
                if (0..frame.height).any(|y| frame.get(0, y) || frame.get(edge, y)) {
                    continue;
                }
                let Ok(seed) = find_seed(&frame, &vis) else { continue };
                let path = grow_up(&frame, seed, vis.lateral_reach);
                let top = path.points.iter().map(|p| p.py).min().unwrap();
                if path.points[0].py - top < MIN_ROWS {
                    continue;
                }
                let k = path_curvature(&frame, &summary_points(&path), &cam);
                worst = worst.max((k * turn * r - 1.0).abs());
                cases += 1;
            }
        }
    }
    (worst, cases)
}

// ------------------------------------------------------------------- cli

use std::path::{Path, PathBuf};
use std::process::Command;

/// Small configuration for exercising every subcommand quickly.
pub const CLI_CONFIG: &str = "\
[run]
lambdas = 0, 1
[sac]
hidden = 8
batch_size = 16
buffer_capacity = 5000
[episode]
max_episodes = 3
eval_episodes = 2
max_steps = 120
";

/// Every file under `dir` with its path relative to `dir`, skipping `logs/`.
pub fn tree(dir: &Path) -> Vec<(PathBuf, Vec<u8>)> {
    fn walk(root: &Path, dir: &Path, acc: &mut Vec<(PathBuf, Vec<u8>)>) {
        let mut entries: Vec<_> = std::fs::read_dir(dir).unwrap().map(|e| e.unwrap().path()).collect();
        entries.sort();
        for p in entries {
            let rel = p.strip_prefix(root).unwrap().to_path_buf();
            if rel.starts_with("logs") {
                continue;
            }
            if p.is_dir() {
                walk(root, &p, acc);
            } else {
                acc.push((rel, std::fs::read(&p).unwrap()));
            }
        }
    }
    let mut acc = Vec::new();
    walk(dir, dir, &mut acc);
    acc
}

fn lsacpid(args: &[&str], out: &Path, config: &Path) -> Result<(), String> {
    let status = Command::new(env!("CARGO_BIN_EXE_lsacpid"))
        .args(args)
        .arg("--config")
        .arg(config)
        .arg("--out")
        .arg(out)
        .env_remove("LSACPID_OUT")
        .output()
        .map_err(|e| e.to_string())?;
    if !status.status.success() {
        return Err(format!("{args:?}: {}", String::from_utf8_lossy(&status.stderr)));
    }
    Ok(())
}

/// Runs every subcommand twice into the same output directory and compares
/// the produced files byte for byte.
pub fn cli_determinism(root: &Path) -> Outcome {
    let config = root.join("tiny.conf");
    std::fs::write(&config, CLI_CONFIG).unwrap();
    let run = root.join("run");
    let checkpoint = run.join("seed_3").join("checkpoint.bin");
    let frame = run.join("frame.pgm");
    let ck = checkpoint.to_str().unwrap().to_string();
    let fr = frame.to_str().unwrap().to_string();
    let cmds: Vec<Vec<&str>> = vec![
        vec!["train", "--seed", "3"],
        vec!["eval", "--seed", "3", "--checkpoint", &ck],
        vec!["compare", "--seed", "3,4"],
        vec!["oracle", "--seed", "3"],
        vec!["gradcheck", "--seed", "3"],
        vec!["render", "--pose", "0.6,0.01,0.05"],
        vec!["extract", "--input", &fr],
    ];
    let mut trees = Vec::new();
    for _ in 0..2 {
        let _ = std::fs::remove_dir_all(&run);
        for c in &cmds {
            if let Err(e) = lsacpid(c, &run, &config) {
                return Outcome::new(false, e);
            }
        }
        trees.push(tree(&run));
    }
    let (a, b) = (&trees[0], &trees[1]);
    if a.len() != b.len() {
        return Outcome::new(false, format!("{} vs {} files", a.len(), b.len()));
    }
    for ((pa, da), (pb, db)) in a.iter().zip(b) {
        if pa != pb || da != db {
            return Outcome::new(false, format!("{} differs", pa.display()));
        }
    }
    Outcome::new(true, format!("7 subcommands, {} identical files", a.len()))
}

// ---------------------------------------------------------- equivalence

use lsacpid::agent::{metrics_csv, train, train_baseline};

/// λ = 0 through the shaped path against the unshaped baseline; λ = 1 must differ.
pub fn lambda_zero_equivalence(seed: u64) -> Outcome {
    let track = Track::load("oval").unwrap();
    let mut cfg = tiny_agent();
    cfg.max_episodes = 4;
    let baseline = metrics_csv(&train_baseline(&cfg, &track, seed).unwrap().metrics);
    cfg.reward.lambda = 0.0;
    let zero = metrics_csv(&train(&cfg, &track, seed).unwrap().metrics);
    cfg.reward.lambda = 1.0;
    let one = metrics_csv(&train(&cfg, &track, seed).unwrap().metrics);
    if zero != baseline {
        return Outcome::new(false, "λ=0 metrics differ from the baseline");
    }
    if one == baseline {
        return Outcome::new(false, "λ=1 metrics equal the baseline; shaping has no effect");
    }
    Outcome::new(true, format!("{} metrics bytes identical, λ=1 differs", zero.len()))
}
