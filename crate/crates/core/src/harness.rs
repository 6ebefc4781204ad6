//! Subcommand drivers behind the command-line tool. Every driver writes its
//! results under an output directory; files never contain timestamps, and
//! wall-clock timing goes to `logs/timing.log` only.

use std::fmt::Write as _;
use std::fs::{self, OpenOptions};
use std::io::Write as _;
use std::path::{Path, PathBuf};
use std::time::Instant;

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::agent::{
    convergence_episode, evaluate, metrics_csv, steps_to_complete, train_with, Agent, AgentConfig, EpisodeRecord,
    EvalReport, Shaping, SUCCESS_THRESHOLD, SUCCESS_WINDOW,
};
use crate::checkpoint::{load_checkpoint, save_checkpoint};
use crate::config::RunConfig;
use crate::error::{Error, Result};
use crate::oracle::{audit_suite, AuditSuite};
use crate::pid::VelocityCommand;
use crate::sac::{gradcheck, GradcheckReport};
use crate::sim::{render_frame, RobotPose};
use crate::track::Track;
use crate::vision::{binarize, observe};

/// Relative-error bound for `gradcheck`.
pub const GRADCHECK_TOL: f64 = 1e-4;
pub const GRADCHECK_DRAWS: usize = 20;
/// Network width and batch used by the gradient check.
pub const GRADCHECK_HIDDEN: usize = 16;
pub const GRADCHECK_BATCH: usize = 8;

/// Size of the tabular audit suite.
pub const ORACLE_MDPS: usize = 10;
pub const ORACLE_STATES: usize = 5;
pub const ORACLE_ACTIONS: usize = 3;

/// Gray level at or below which an input image pixel counts as path.
pub const EXTRACT_THRESHOLD: u8 = 127;

fn write(path: &Path, bytes: impl AsRef<[u8]>) -> Result<()> {
    if let Some(dir) = path.parent() {
        fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    }
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

/// Appends one line to `<out>/logs/timing.log`.
pub fn log_timing(out: &Path, what: &str, started: Instant) -> Result<()> {
    let dir = out.join("logs");
    fs::create_dir_all(&dir).map_err(|e| Error::io(&dir, e))?;
    let path = dir.join("timing.log");
    let mut f = OpenOptions::new()
        .create(true)
        .append(true)
        .open(&path)
        .map_err(|e| Error::io(&path, e))?;
    writeln!(f, "{what}\t{:.3} s", started.elapsed().as_secs_f64()).map_err(|e| Error::io(&path, e))
}

pub fn seed_dir(out: &Path, seed: u64) -> PathBuf {
    out.join(format!("seed_{seed}"))
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct RunSummary {
    pub seed: u64,
    pub lambda: f64,
    pub metrics: Vec<EpisodeRecord>,
    pub agent: Agent,
}

impl RunSummary {
    pub fn successes(&self) -> Vec<bool> {
        self.metrics.iter().map(|r| r.success).collect()
    }

    pub fn convergence(&self) -> Option<usize> {
        convergence_episode(&self.successes(), SUCCESS_WINDOW, SUCCESS_THRESHOLD)
    }

    /// Success rate over the last (up to) `SUCCESS_WINDOW` episodes.
    pub fn final_success_rate(&self) -> f64 {
        let s = self.successes();
        let tail = &s[s.len().saturating_sub(SUCCESS_WINDOW)..];
        if tail.is_empty() {
            0.0
        } else {
            tail.iter().filter(|&&x| x).count() as f64 / tail.len() as f64
        }
    }

    pub fn steps_at_convergence(&self) -> Option<f64> {
        self.convergence()
            .and_then(|ep| steps_to_complete(&self.metrics, ep, SUCCESS_WINDOW))
    }
}

/// Trains one seed and writes `metrics.csv`, `checkpoint.bin` and `config.resolved` into `dir`.
pub fn train_one(cfg: &RunConfig, seed: u64, shaping: Shaping, dir: &Path) -> Result<RunSummary> {
    let track = Track::load(&cfg.track)?;
    let out = train_with(&cfg.agent, &track, seed, shaping, |_, _| Ok(()))?;
    let resolved = RunConfig {
        seeds: vec![seed],
        ..cfg.clone()
    };
    write(&dir.join("metrics.csv"), metrics_csv(&out.metrics))?;
    save_checkpoint_in(&out.agent, dir)?;
    write(&dir.join("config.resolved"), resolved.to_text())?;
    Ok(RunSummary {
        seed,
        lambda: cfg.agent.reward.lambda,
        metrics: out.metrics,
        agent: out.agent,
    })
}

fn save_checkpoint_in(agent: &Agent, dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    save_checkpoint(agent, &dir.join("checkpoint.bin"))
}

/// `train`: one subdirectory per seed.
pub fn cmd_train(cfg: &RunConfig, out: &Path) -> Result<Vec<RunSummary>> {
    let mut runs = Vec::with_capacity(cfg.seeds.len());
    for &seed in &cfg.seeds {
        let t0 = Instant::now();
        runs.push(train_one(cfg, seed, Shaping::Lyapunov, &seed_dir(out, seed))?);
        log_timing(out, &format!("train seed {seed}"), t0)?;
    }
    Ok(runs)
}

/// Environment-facing settings must agree between a checkpoint and the run
/// that evaluates it; learning constants may differ.
pub fn check_compatible(ck: &AgentConfig, run: &AgentConfig) -> Result<()> {
    let same = ck.camera == run.camera
        && ck.vision == run.vision
        && ck.controller == run.controller
        && ck.gains == run.gains
        && ck.limits == run.limits
        && ck.hidden == run.hidden;
    if same {
        Ok(())
    } else {
        Err(Error::Mismatch(
            "checkpoint camera/vision/controller/episode settings differ from the run config".into(),
        ))
    }
}

pub fn eval_csv(report: &EvalReport) -> String {
    metrics_csv(&report.episodes)
}

pub fn eval_summary(report: &EvalReport) -> String {
    format!(
        "episodes,successes,mean_abs_em,mean_steps\n{},{},{},{}\n",
        report.episodes.len(),
        report.successes,
        report.mean_abs_em(),
        report.mean_steps()
    )
}

/// `eval`: deterministic-policy episodes of a checkpoint on `eval_track`.
pub fn cmd_eval(cfg: &RunConfig, checkpoint: &Path, out: &Path) -> Result<EvalReport> {
    let t0 = Instant::now();
    let agent = load_checkpoint(checkpoint)?;
    check_compatible(&agent.config, &cfg.agent)?;
    let track = Track::load(&cfg.eval_track)?;
    let report = evaluate(&agent, &track, cfg.agent.eval_episodes, cfg.eval_seed)?;
    write(&out.join("eval.csv"), eval_csv(&report))?;
    write(&out.join("eval_summary.csv"), eval_summary(&report))?;
    log_timing(out, "eval", t0)?;
    Ok(report)
}

pub fn median(xs: &[f64]) -> Option<f64> {
    let mut v: Vec<f64> = xs.iter().copied().filter(|x| !x.is_nan()).collect();
    if v.is_empty() {
        return None;
    }
    v.sort_by(f64::total_cmp);
    let n = v.len();
    Some(if n % 2 == 1 {
        v[n / 2]
    } else {
        0.5 * (v[n / 2 - 1] + v[n / 2])
    })
}

fn opt(x: Option<f64>) -> String {
    x.map_or_else(|| "NA".to_string(), |v| v.to_string())
}

/// Per-λ medians over seeds. A seed that never converges counts as one
/// episode past the budget, so non-convergence ranks last.
#[derive(Debug, Clone, PartialEq)]
pub struct LambdaSummary {
    pub lambda: f64,
    pub runs: usize,
    pub converged: usize,
    pub median_convergence: f64,
    pub median_final_success: f64,
    pub median_steps: Option<f64>,
}

pub fn summarize(runs: &[RunSummary], lambda: f64, budget: usize) -> LambdaSummary {
    let mine: Vec<&RunSummary> = runs.iter().filter(|r| r.lambda == lambda).collect();
    let conv: Vec<f64> = mine
        .iter()
        .map(|r| r.convergence().map_or(budget as f64 + 1.0, |e| e as f64))
        .collect();
    let fin: Vec<f64> = mine.iter().map(|r| r.final_success_rate()).collect();
    let steps: Vec<f64> = mine.iter().filter_map(|r| r.steps_at_convergence()).collect();
    LambdaSummary {
        lambda,
        runs: mine.len(),
        converged: mine.iter().filter(|r| r.convergence().is_some()).count(),
        median_convergence: median(&conv).unwrap_or(f64::NAN),
        median_final_success: median(&fin).unwrap_or(f64::NAN),
        median_steps: median(&steps),
    }
}

pub const COMPARE_RUNS_HEADER: &str = "lambda,seed,episodes,convergence_episode,final_success_rate,steps_to_complete";
pub const COMPARE_HEADER: &str =
    "lambda,runs,converged,median_convergence_episode,median_final_success_rate,median_steps_to_complete";

pub fn compare_runs_csv(runs: &[RunSummary]) -> String {
    let mut s = String::from(COMPARE_RUNS_HEADER);
    s.push('\n');
    for r in runs {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            r.lambda,
            r.seed,
            r.metrics.len(),
            r.convergence().map_or("NA".into(), |e| e.to_string()),
            r.final_success_rate(),
            opt(r.steps_at_convergence())
        );
    }
    s
}

pub fn compare_csv(summaries: &[LambdaSummary]) -> String {
    let mut s = String::from(COMPARE_HEADER);
    s.push('\n');
    for l in summaries {
        let _ = writeln!(
            s,
            "{},{},{},{},{},{}",
            l.lambda,
            l.runs,
            l.converged,
            l.median_convergence,
            l.median_final_success,
            opt(l.median_steps)
        );
    }
    s
}

/// `compare`: matched-seed runs for every λ. `λ = 0` goes through the
/// unshaped baseline path.
pub fn cmd_compare(cfg: &RunConfig, out: &Path) -> Result<(Vec<RunSummary>, Vec<LambdaSummary>)> {
    if cfg.lambdas.len() < 2 {
        return Err(Error::Usage("compare needs at least two lambda values".into()));
    }
    let mut runs = Vec::new();
    for &lambda in &cfg.lambdas {
        let mut c = cfg.clone();
        c.agent.reward.lambda = lambda;
        let shaping = if lambda == 0.0 { Shaping::Unshaped } else { Shaping::Lyapunov };
        for &seed in &cfg.seeds {
            let t0 = Instant::now();
            let dir = out.join(format!("lambda_{lambda}")).join(format!("seed_{seed}"));
            runs.push(train_one(&c, seed, shaping, &dir)?);
            log_timing(out, &format!("compare lambda {lambda} seed {seed}"), t0)?;
        }
    }
    let summaries: Vec<LambdaSummary> = cfg
        .lambdas
        .iter()
        .map(|&l| summarize(&runs, l, cfg.agent.max_episodes))
        .collect();
    write(&out.join("compare_runs.csv"), compare_runs_csv(&runs))?;
    write(&out.join("compare.csv"), compare_csv(&summaries))?;
    Ok((runs, summaries))
}

pub fn oracle_report(suite: &AuditSuite) -> String {
    let mark = |ok: bool| if ok { "PASS" } else { "FAIL" };
    let worst_ratio = suite.audits.iter().map(|a| a.max_contraction).fold(0.0, f64::max);
    let worst_gap = suite.audits.iter().map(|a| a.fixed_point_gap).fold(0.0, f64::max);
    let worst_imp = suite
        .audits
        .iter()
        .flat_map(|a| a.iterations.iter().map(|i| i.2))
        .fold(f64::INFINITY, f64::min);
    let max_rounds = suite
        .audits
        .iter()
        .flat_map(|a| a.iterations.iter().map(|i| i.1))
        .max()
        .unwrap_or(0);
    let mut s = String::new();
    let _ = writeln!(s, "tabular audit: {} MDPs, gamma {}", suite.audits.len(), suite.gamma);
    let _ = writeln!(s, "contraction: {} (worst ratio {worst_ratio:.6})", mark(suite.contraction_ok()));
    let _ = writeln!(s, "unique fixed point: {} (worst gap {worst_gap:e})", mark(suite.fixed_point_ok()));
    let _ = writeln!(
        s,
        "monotone improvement: {} (worst step {worst_imp:e}, max rounds {max_rounds})",
        mark(suite.improvement_ok())
    );
    let _ = writeln!(s, "lambda 0 matches base MDP: {}", mark(suite.lambda0_ok()));
    let _ = writeln!(s, "optimum dominates random policies: {}", mark(suite.dominance_ok()));
    let _ = writeln!(s, "overall: {}", mark(suite.passed()));
    s
}

pub fn oracle_traces_csv(suite: &AuditSuite) -> String {
    let mut s = String::from(
        "mdp,lambda,rounds,min_improvement,max_contraction,fixed_point_gap,lambda0_gap,dominance_margin,greedy_agrees_with_lambda0\n",
    );
    for a in &suite.audits {
        for &(lambda, rounds, imp) in &a.iterations {
            let agree = a
                .greedy_agree
                .iter()
                .find(|g| g.0 == lambda)
                .map_or("NA".to_string(), |g| g.1.to_string());
            let _ = writeln!(
                s,
                "{},{},{},{},{},{},{},{},{}",
                a.index, lambda, rounds, imp, a.max_contraction, a.fixed_point_gap, a.lambda0_gap, a.dominance_margin, agree
            );
        }
    }
    s
}

/// `oracle`: audits on random tabular MDPs with the configured `γ` and `α`.
pub fn cmd_oracle(cfg: &RunConfig, seed: u64, out: &Path) -> Result<AuditSuite> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let suite = audit_suite(
        ORACLE_MDPS,
        ORACLE_STATES,
        ORACLE_ACTIONS,
        cfg.agent.sac.gamma,
        cfg.agent.sac.alpha,
        &mut rng,
    )?;
    write(&out.join("oracle_report.txt"), oracle_report(&suite))?;
    write(&out.join("oracle_traces.csv"), oracle_traces_csv(&suite))?;
    log_timing(out, "oracle", t0)?;
    Ok(suite)
}

pub fn gradcheck_text(r: &GradcheckReport) -> String {
    let verdict = if r.passed(GRADCHECK_TOL) { "PASS" } else { "FAIL" };
    format!(
        "value loss max relative error: {:e}\nq loss max relative error: {:e}\npolicy loss max relative error: {:e}\n3 losses × {} draws: {verdict}\n",
        r.max_rel_err[0], r.max_rel_err[1], r.max_rel_err[2], r.draws
    )
}

/// `gradcheck`: analytic versus central-difference gradients of the three losses.
pub fn cmd_gradcheck(cfg: &RunConfig, seed: u64, out: &Path) -> Result<GradcheckReport> {
    let t0 = Instant::now();
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let report = gradcheck(
        GRADCHECK_DRAWS,
        GRADCHECK_HIDDEN,
        GRADCHECK_BATCH,
        cfg.agent.sac.alpha,
        cfg.agent.sac.gamma,
        &mut rng,
    )?;
    write(&out.join("gradcheck.txt"), gradcheck_text(&report))?;
    log_timing(out, "gradcheck", t0)?;
    Ok(report)
}

/// `render`: the camera frame at `pose` (default: the track's start pose) as PGM.
pub fn cmd_render(cfg: &RunConfig, pose: Option<RobotPose>, out: &Path) -> Result<PathBuf> {
    let track = Track::load(&cfg.track)?;
    let pose = pose.unwrap_or(track.start_pose);
    let frame = render_frame(&pose, &track, &cfg.agent.camera);
    let path = out.join("frame.pgm");
    write(&path, frame.to_pgm())?;
    Ok(path)
}

/// `extract`: runs the vision pipeline on a grayscale PGM image.
pub fn cmd_extract(cfg: &RunConfig, input: &Path, out: &Path) -> Result<String> {
    let bytes = fs::read(input).map_err(|e| Error::io(input, e))?;
    let (w, h, gray) = crate::pgm::decode(&bytes)?;
    let frame = binarize(&gray, w, h, EXTRACT_THRESHOLD)?;
    let cam = crate::sim::CameraConfig {
        width: w,
        height: h,
        ..cfg.agent.camera
    };
    let cmd = VelocityCommand {
        v: cfg.agent.controller.b,
        omega: 0.0,
    };
    let obs = observe(&frame, &cam, &cmd, &cfg.agent.vision)?;
    let mut s = String::from("slot,px,py,x,y\n");
    // state slot 1 is the summary point nearest the robot
    for (i, p) in obs.summary.iter().rev().enumerate() {
        let (x, y) = obs.state.point(i);
        let _ = writeln!(s, "{},{},{},{},{}", i + 1, p.px, p.py, x, y);
    }
    let _ = writeln!(s, "\ne_m,c_path,e_c,grown_pixels\n{},{},{},{}", obs.state.e_m(), obs.c_path, obs.state.e_c(), obs.path.points.len());
    write(&out.join("extract.csv"), &s)?;
    Ok(s)
}
