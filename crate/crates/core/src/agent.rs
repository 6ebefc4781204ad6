//! Training loop, evaluation protocol and per-episode metrics.

use std::fmt::Write as _;
use std::time::Instant;

use rand::Rng;
use sha2::{Digest, Sha256};

use crate::error::{Error, Result};
use crate::mdp::{GainRanges, ReplayBuffer, RngStreams, Stream, Transition};
use crate::nn::Mlp;
use crate::pid::{mimo_step, ControllerConfig, ErrorHistory, VelocityCommand};
use crate::reward::{episode_reward, lyap_shape, step_reward, terminal_adjust, RewardConfig};
use crate::sac::{mean_action, sample_action, Batch, SacHyper, SacLearner, SacNets};
use crate::sim::{
    episode_update, render_frame, step_kinematics, CameraConfig, EpisodeLimits, EpisodeStatus, RobotPose,
};
use crate::track::Track;
use crate::vision::{observe, Observation, VisionConfig};

/// Every constant of a training run.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentConfig {
    pub sac: SacHyper,
    pub buffer_capacity: usize,
    pub batch_size: usize,
    /// Environment steps between target-network updates.
    pub target_update_interval: usize,
    /// Gradient updates per environment step.
    pub gradient_steps: usize,
    pub hidden: usize,
    pub max_episodes: usize,
    pub eval_episodes: usize,
    pub reward: RewardConfig,
    pub controller: ControllerConfig,
    pub gains: GainRanges,
    pub camera: CameraConfig,
    pub vision: VisionConfig,
    pub limits: EpisodeLimits,
    /// Uniform lateral offset (m) applied to the start pose of every episode.
    pub start_jitter_lateral: f64,
    /// Uniform heading offset (rad) applied to the start pose of every episode.
    pub start_jitter_heading: f64,
    /// Fill the `wall_ms` metrics column; off by default so metrics files are reproducible.
    pub record_wall_time: bool,
    /// End training at the first episode whose trailing success rate reaches
    /// [`SUCCESS_THRESHOLD`] over a full [`SUCCESS_WINDOW`].
    pub stop_on_convergence: bool,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig::desk()
    }
}

impl AgentConfig {
    pub fn desk() -> Self {
        AgentConfig {
            sac: SacHyper::default(),
            buffer_capacity: 100_000,
            batch_size: 256,
            target_update_interval: 1,
            gradient_steps: 1,
            hidden: 64,
            max_episodes: 400,
            eval_episodes: 20,
            reward: RewardConfig::default(),
            controller: ControllerConfig::default(),
            gains: GainRanges::default(),
            camera: CameraConfig::default(),
            vision: VisionConfig::default(),
            limits: EpisodeLimits::default(),
            start_jitter_lateral: 0.02,
            start_jitter_heading: 0.1,
            record_wall_time: false,
            stop_on_convergence: false,
        }
    }

    /// Replay size and batch size of the original full-scale setup.
    pub fn paper() -> Self {
        AgentConfig {
            buffer_capacity: 2_000_000,
            batch_size: 512,
            ..AgentConfig::desk()
        }
    }

    pub fn validate(&self) -> Result<()> {
        let h = &self.sac;
        if !(h.gamma > 0.0 && h.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", h.gamma)));
        }
        if self.reward.gamma != h.gamma {
            return Err(Error::Config("reward and critic discount factors differ".into()));
        }
        if !(h.chi > 0.0 && h.chi <= 1.0) {
            return Err(Error::Config(format!("chi must lie in (0, 1], got {}", h.chi)));
        }
        if !(h.alpha >= 0.0 && h.alpha.is_finite()) {
            return Err(Error::Config(format!("alpha must be >= 0, got {}", h.alpha)));
        }
        if !(h.lr > 0.0 && h.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be > 0, got {}", h.lr)));
        }
        if self.batch_size == 0 || self.buffer_capacity < self.batch_size {
            return Err(Error::Config(format!(
                "need 0 < batch_size <= buffer_capacity, got {} and {}",
                self.batch_size, self.buffer_capacity
            )));
        }
        if self.target_update_interval == 0 || self.gradient_steps == 0 || self.hidden == 0 {
            return Err(Error::Config(
                "target_update_interval, gradient_steps and hidden must be positive".into(),
            ));
        }
        if self.limits.max_steps == 0 || !(self.limits.dt > 0.0) {
            return Err(Error::Config("max_steps and dt must be positive".into()));
        }
        if self.limits.scan_rows == 0 || self.limits.scan_rows > self.camera.height {
            return Err(Error::Config("scan_rows must lie in [1, camera height]".into()));
        }
        if !(self.start_jitter_lateral >= 0.0 && self.start_jitter_heading >= 0.0) {
            return Err(Error::Config("start jitter must be >= 0".into()));
        }
        self.reward.validate()?;
        self.controller.validate()?;
        self.gains.validate()?;
        self.camera.validate()?;
        Ok(())
    }

    /// SHA-256 of the canonical debug rendering, hex encoded.
    pub fn fingerprint(&self) -> String {
        let digest = Sha256::digest(format!("{self:?}").as_bytes());
        digest.iter().fold(String::new(), |mut s, b| {
            let _ = write!(s, "{b:02x}");
            s
        })
    }

    /// Network layer sizes implied by this configuration, in checkpoint order.
    pub fn layouts(&self) -> [Vec<usize>; 5] {
        use crate::mdp::{ACTION_DIM, STATE_DIM};
        let h = self.hidden;
        [
            vec![STATE_DIM, h, h, 1],
            vec![STATE_DIM, h, h, 1],
            vec![STATE_DIM + ACTION_DIM, h, h, 1],
            vec![STATE_DIM + ACTION_DIM, h, h, 1],
            vec![STATE_DIM, h, h, 2 * ACTION_DIM],
        ]
    }
}

/// Reward fed to the critics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Shaping {
    /// Lyapunov-shaped reward with the configured `λ`.
    Lyapunov,
    /// Raw step reward (plain SAC-PID).
    Unshaped,
}

/// One metrics row.
#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeRecord {
    pub episode: usize,
    pub steps: usize,
    pub return_raw: f64,
    /// Sum of shaped step rewards, excluding the terminal `±p`.
    pub return_shaped: f64,
    pub episode_reward: f64,
    pub distance: f64,
    pub mean_speed: f64,
    pub kappa: u8,
    pub success: bool,
    pub mean_abs_em: f64,
    pub wall_ms: u64,
}

pub const METRICS_HEADER: &str = "episode,steps,return_raw,return_shaped,episode_reward_R_i,distance_m,mean_speed,kappa,success,mean_abs_em,wall_ms";

impl EpisodeRecord {
    pub fn csv_row(&self) -> String {
        format!(
            "{},{},{},{},{},{},{},{},{},{},{}",
            self.episode,
            self.steps,
            self.return_raw,
            self.return_shaped,
            self.episode_reward,
            self.distance,
            self.mean_speed,
            self.kappa,
            u8::from(self.success),
            self.mean_abs_em,
            self.wall_ms
        )
    }
}

pub fn metrics_csv(rows: &[EpisodeRecord]) -> String {
    let mut out = String::from(METRICS_HEADER);
    out.push('\n');
    for r in rows {
        out.push_str(&r.csv_row());
        out.push('\n');
    }
    out
}

/// Learner plus everything needed to continue a run deterministically.
#[derive(Debug, Clone, PartialEq)]
pub struct Agent {
    pub config: AgentConfig,
    pub learner: SacLearner,
    pub rng: RngStreams,
    pub episodes: u64,
    pub env_steps: u64,
}

impl Agent {
    pub fn new(config: AgentConfig, seed: u64) -> Result<Self> {
        config.validate()?;
        let mut rng = RngStreams::new(seed);
        let nets = SacNets::new(config.hidden, rng.get(Stream::Init));
        Ok(Agent {
            learner: SacLearner::new(nets, config.sac),
            config,
            rng,
            episodes: 0,
            env_steps: 0,
        })
    }

    /// Checks that stored networks fit the configured layout.
    pub fn check_layout(&self) -> Result<()> {
        for (net, want) in self.learner.nets.all().iter().zip(self.config.layouts()) {
            if net.sizes() != want.as_slice() {
                return Err(Error::Mismatch(format!(
                    "network layout {:?} does not match configured {:?}",
                    net.sizes(),
                    want
                )));
            }
        }
        Ok(())
    }

    pub fn policy(&self) -> &Mlp {
        &self.learner.nets.policy
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
enum ActionMode {
    Sample,
    Mean,
}

struct TrainContext<'a> {
    buffer: &'a mut ReplayBuffer,
    shaping: Shaping,
}

fn start_pose(track: &Track, cfg: &AgentConfig, rng: &mut rand_chacha::ChaCha8Rng) -> RobotPose {
    let p = track.start_pose;
    let lat = if cfg.start_jitter_lateral > 0.0 {
        rng.gen_range(-cfg.start_jitter_lateral..=cfg.start_jitter_lateral)
    } else {
        0.0
    };
    let head = if cfg.start_jitter_heading > 0.0 {
        rng.gen_range(-cfg.start_jitter_heading..=cfg.start_jitter_heading)
    } else {
        0.0
    };
    let (s, c) = p.theta.sin_cos();
    RobotPose::new(p.x - s * lat, p.y + c * lat, p.theta + head)
}

fn observe_frame(pose: &RobotPose, track: &Track, cfg: &AgentConfig, cmd: &VelocityCommand) -> Result<Observation> {
    let frame = render_frame(pose, track, &cfg.camera);
    observe(&frame, &cfg.camera, cmd, &cfg.vision)
}

/// Runs one episode. With a training context every transition is stored and the
/// networks are updated after each step once the buffer holds more than a batch.
fn run_episode(
    agent: &mut Agent,
    track: &Track,
    episode: usize,
    mode: ActionMode,
    rng: &mut RngStreams,
    mut train: Option<TrainContext<'_>>,
) -> Result<EpisodeRecord> {
    let clock = Instant::now();
    let cfg = agent.config.clone();
    let bound = cfg.vision.ec_bound;
    let dt = cfg.limits.dt;

    let mut pose = start_pose(track, &cfg, rng.get(Stream::Env));
    let mut cmd = VelocityCommand {
        v: cfg.controller.b,
        omega: 0.0,
    };
    let mut obs = observe_frame(&pose, track, &cfg, &cmd)
        .map_err(|e| Error::Track(format!("line not visible from the start pose: {e}")))?;
    let mut hist_m = ErrorHistory::default();
    let mut hist_c = ErrorHistory::default();
    hist_m.push(obs.state.e_m());
    hist_c.push(-obs.state.e_c() / bound);
    let mut status = EpisodeStatus::start(track, &pose);
    let mut r_prev: Option<f64> = None;
    let (mut ret_raw, mut ret_shaped, mut abs_em) = (0.0, 0.0, 0.0);

    while !status.done {
        let s = obs.state;
        let k = match mode {
            ActionMode::Sample => sample_action(&agent.learner.nets.policy, &s.0, &cfg.gains, rng.get(Stream::Policy))?.0,
            ActionMode::Mean => mean_action(&agent.learner.nets.policy, &s.0, &cfg.gains)?,
        };
        cmd = mimo_step(&k, &hist_m, &hist_c, cmd.omega, &cfg.controller)?;
        pose = step_kinematics(&pose, &cmd, dt);
        let frame = render_frame(&pose, track, &cfg.camera);
        status = episode_update(&status, &frame, &pose, track, &cfg.limits, cmd.v * dt);
        let next = if frame.has_path_in_bottom(cfg.limits.scan_rows) {
            observe(&frame, &cfg.camera, &cmd, &cfg.vision).ok()
        } else {
            None
        };
        if next.is_none() && !status.done {
            status.done = true;
            status.kappa = 1;
        }

        // a lost line counts as the largest error on the side it was last seen
        let e_next = match &next {
            Some(o) => o.state.e_m(),
            None => {
                if hist_m.e_t >= 0.0 {
                    1.0
                } else {
                    -1.0
                }
            }
        };
        let r = step_reward(e_next, hist_m.e_t, hist_m.e_tm1, &cfg.reward);
        let r_lyap = match train.as_ref().map(|t| t.shaping) {
            Some(Shaping::Unshaped) => r,
            _ => lyap_shape(r, r_prev, &cfg.reward),
        };
        r_prev = Some(r);
        ret_raw += r;
        ret_shaped += r_lyap;
        abs_em += s.e_m().abs();

        let s_next = next.as_ref().map(|o| o.state).unwrap_or(s);
        if let Some(ctx) = train.as_mut() {
            let mut t = Transition {
                s,
                k,
                r_raw: r,
                r_lyap,
                s_next,
                done: status.done,
                success: status.success(),
            };
            if status.done {
                t = terminal_adjust(&t, status.kappa, &cfg.reward)?;
            }
            ctx.buffer.push(t)?;
            agent.env_steps += 1;
            if ctx.buffer.len() > cfg.batch_size {
                let polyak = agent.env_steps % cfg.target_update_interval as u64 == 0;
                for g in 0..cfg.gradient_steps {
                    let idx = ctx.buffer.sample_minibatch(cfg.batch_size, rng.get(Stream::Sampler))?;
                    let batch = Batch::from_transitions(&idx, &cfg.gains);
                    let last = g + 1 == cfg.gradient_steps;
                    agent
                        .learner
                        .update(&batch, rng.get(Stream::Policy), polyak && last)
                        .map_err(|e| match e {
                            Error::NonFinite(m) => Error::NonFinite(format!(
                                "{m} at episode {episode}, step {}, buffer size {}",
                                status.steps,
                                ctx.buffer.len()
                            )),
                            other => other,
                        })?;
                }
            }
        }

        hist_m.push(e_next);
        hist_c.push(next.as_ref().map(|o| -o.state.e_c() / bound).unwrap_or(hist_c.e_t));
        if let Some(o) = next {
            obs = o;
        }
    }

    let steps = status.steps;
    Ok(EpisodeRecord {
        episode,
        steps,
        return_raw: ret_raw,
        return_shaped: ret_shaped,
        episode_reward: episode_reward(ret_shaped, status.distance, status.mean_speed, status.kappa, &cfg.reward),
        distance: status.distance,
        mean_speed: status.mean_speed,
        kappa: status.kappa,
        success: status.success(),
        mean_abs_em: if steps > 0 { abs_em / steps as f64 } else { 0.0 },
        wall_ms: if cfg.record_wall_time {
            clock.elapsed().as_millis() as u64
        } else {
            0
        },
    })
}

/// Output of a training run.
#[derive(Debug, Clone)]
pub struct TrainOutput {
    pub metrics: Vec<EpisodeRecord>,
    pub agent: Agent,
}

/// Trains a fresh agent with the Lyapunov-shaped reward.
pub fn train(config: &AgentConfig, track: &Track, seed: u64) -> Result<TrainOutput> {
    train_with(config, track, seed, Shaping::Lyapunov, |_, _| Ok(()))
}

/// Plain SAC-PID: the critics see the raw step reward and `λ` is ignored.
pub fn train_baseline(config: &AgentConfig, track: &Track, seed: u64) -> Result<TrainOutput> {
    train_with(config, track, seed, Shaping::Unshaped, |_, _| Ok(()))
}

/// Training loop with a callback invoked after every episode (used for
/// periodic checkpoints and progress logs).
pub fn train_with<F>(config: &AgentConfig, track: &Track, seed: u64, shaping: Shaping, mut on_episode: F) -> Result<TrainOutput>
where
    F: FnMut(&Agent, &EpisodeRecord) -> Result<()>,
{
    let mut agent = Agent::new(config.clone(), seed)?;
    let mut buffer = ReplayBuffer::new(config.buffer_capacity)?;
    let mut metrics = Vec::with_capacity(config.max_episodes);
    for ep in 1..=config.max_episodes {
        let mut rng = agent.rng.clone();
        let rec = run_episode(
            &mut agent,
            track,
            ep,
            ActionMode::Sample,
            &mut rng,
            Some(TrainContext {
                buffer: &mut buffer,
                shaping,
            }),
        )?;
        agent.rng = rng;
        agent.episodes += 1;
        on_episode(&agent, &rec)?;
        metrics.push(rec);
        if config.stop_on_convergence && converged(&metrics) {
            break;
        }
    }
    Ok(TrainOutput { metrics, agent })
}

/// Summary of a deterministic-policy evaluation.
#[derive(Debug, Clone, PartialEq)]
pub struct EvalReport {
    pub successes: usize,
    pub episodes: Vec<EpisodeRecord>,
}

impl EvalReport {
    pub fn mean_abs_em(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.mean_abs_em))
    }

    pub fn mean_steps(&self) -> f64 {
        mean(self.episodes.iter().map(|e| e.steps as f64))
    }
}

fn mean(it: impl Iterator<Item = f64>) -> f64 {
    let (s, n) = it.fold((0.0, 0usize), |(s, n), x| (s + x, n + 1));
    if n == 0 {
        0.0
    } else {
        s / n as f64
    }
}

/// Runs `n` episodes with the mean action. Start-pose jitter comes from a
/// generator seeded with `seed`, independent of the agent's training streams.
pub fn evaluate(agent: &Agent, track: &Track, n: usize, seed: u64) -> Result<EvalReport> {
    agent.check_layout()?;
    let mut agent = agent.clone();
    let mut rng = RngStreams::new(seed);
    let mut episodes = Vec::with_capacity(n);
    for ep in 1..=n {
        episodes.push(run_episode(&mut agent, track, ep, ActionMode::Mean, &mut rng, None)?);
    }
    Ok(EvalReport {
        successes: episodes.iter().filter(|e| e.success).count(),
        episodes,
    })
}

/// Trailing success-rate window used to define convergence.
pub const SUCCESS_WINDOW: usize = 100;
pub const SUCCESS_THRESHOLD: f64 = 0.8;

/// Success rate over the trailing `window` episodes ending at each episode; the
/// first `window - 1` entries are `None` because their window is incomplete.
pub fn trailing_success(success: &[bool], window: usize) -> Vec<Option<f64>> {
    let mut out = Vec::with_capacity(success.len());
    let mut count = 0usize;
    for i in 0..success.len() {
        count += usize::from(success[i]);
        if i >= window {
            count -= usize::from(success[i - window]);
        }
        out.push(if i + 1 >= window {
            Some(count as f64 / window as f64)
        } else {
            None
        });
    }
    out
}

/// First (1-based) episode whose trailing success rate reaches `threshold`.
pub fn convergence_episode(success: &[bool], window: usize, threshold: f64) -> Option<usize> {
    trailing_success(success, window)
        .iter()
        .position(|r| r.is_some_and(|r| r >= threshold))
        .map(|i| i + 1)
}

fn converged(rows: &[EpisodeRecord]) -> bool {
    rows.len() >= SUCCESS_WINDOW
        && rows[rows.len() - SUCCESS_WINDOW..].iter().filter(|r| r.success).count() as f64 / SUCCESS_WINDOW as f64
            >= SUCCESS_THRESHOLD
}

/// Mean steps of the successful episodes in the trailing window ending at
/// `episode` (1-based).
pub fn steps_to_complete(rows: &[EpisodeRecord], episode: usize, window: usize) -> Option<f64> {
    let end = episode.min(rows.len());
    let start = end.saturating_sub(window);
    let done: Vec<f64> = rows[start..end].iter().filter(|r| r.success).map(|r| r.steps as f64).collect();
    if done.is_empty() {
        None
    } else {
        Some(mean(done.into_iter()))
    }
}
