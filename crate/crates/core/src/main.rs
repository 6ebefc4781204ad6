use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Args, Parser, Subcommand};

use lsacpid::config::{Profile, RunConfig};
use lsacpid::harness;
use lsacpid::sim::RobotPose;
use lsacpid::{Error, Result};

/// Line-following PID gains tuned by Lyapunov-shaped soft actor-critic.
#[derive(Parser)]
#[command(name = "lsacpid", version)]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Args, Clone)]
struct Common {
    /// key = value config file with [section] headers.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Comma-separated seed list, e.g. 1,2,3.
    #[arg(long, value_delimiter = ',')]
    seed: Option<Vec<u64>>,
    /// Output directory (LSACPID_OUT takes precedence).
    #[arg(long)]
    out: Option<PathBuf>,
    /// Comma-separated shaping proportions.
    #[arg(long, value_delimiter = ',')]
    lambda: Option<Vec<f64>>,
    /// Base parameter set.
    #[arg(long)]
    profile: Option<Profile>,
    /// Track name (oval, multicurve, forks) or track file.
    #[arg(long)]
    track: Option<String>,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train one agent per seed.
    Train(Common),
    /// Evaluate a checkpoint with the deterministic policy.
    Eval {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        checkpoint: PathBuf,
    },
    /// Matched-seed runs for several shaping proportions.
    Compare(Common),
    /// Tabular soft policy iteration audits.
    Oracle(Common),
    /// Finite-difference check of the three loss gradients.
    Gradcheck(Common),
    /// Write the camera frame at a pose as PGM.
    Render {
        #[command(flatten)]
        common: Common,
        /// x,y,theta; defaults to the track start pose.
        #[arg(long, value_delimiter = ',', allow_negative_numbers = true)]
        pose: Option<Vec<f64>>,
    },
    /// Run the vision pipeline on a PGM image.
    Extract {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        input: PathBuf,
    },
}

fn resolve(c: &Common) -> Result<(RunConfig, PathBuf)> {
    let text = match &c.config {
        Some(p) => std::fs::read_to_string(p).map_err(|e| Error::Io {
            path: p.clone(),
            source: e,
        })?,
        None => String::new(),
    };
    let mut cfg = RunConfig::parse(&text, c.profile)?;
    if let Some(s) = &c.seed {
        cfg.seeds = s.clone();
    }
    if let Some(l) = &c.lambda {
        cfg.lambdas = l.clone();
        if let [one] = l.as_slice() {
            cfg.agent.reward.lambda = *one;
        }
    }
    if let Some(t) = &c.track {
        cfg.track = t.clone();
        cfg.eval_track = t.clone();
    }
    let out = std::env::var_os("LSACPID_OUT")
        .map(PathBuf::from)
        .or_else(|| c.out.clone())
        .unwrap_or_else(|| PathBuf::from(&cfg.out));
    cfg.out = out.display().to_string();
    cfg.validate()?;
    Ok((cfg, out))
}

fn first_seed(cfg: &RunConfig) -> u64 {
    cfg.seeds[0]
}

fn verdict(ok: bool, out: &Path, file: &str) -> ExitCode {
    println!("{}: {}", out.join(file).display(), if ok { "PASS" } else { "FAIL" });
    if ok {
        ExitCode::SUCCESS
    } else {
        ExitCode::from(3)
    }
}

fn run(cli: Cli) -> Result<ExitCode> {
    match cli.cmd {
        Cmd::Train(c) => {
            let (cfg, out) = resolve(&c)?;
            for r in harness::cmd_train(&cfg, &out)? {
                println!(
                    "seed {}: {} episodes, {} successes",
                    r.seed,
                    r.metrics.len(),
                    r.successes().iter().filter(|&&s| s).count()
                );
            }
        }
        Cmd::Eval { common, checkpoint } => {
            let (cfg, out) = resolve(&common)?;
            let r = harness::cmd_eval(&cfg, &checkpoint, &out)?;
            println!("{}/{} successes", r.successes, r.episodes.len());
        }
        Cmd::Compare(c) => {
            let (cfg, out) = resolve(&c)?;
            let (_, summaries) = harness::cmd_compare(&cfg, &out)?;
            print!("{}", harness::compare_csv(&summaries));
        }
        Cmd::Oracle(c) => {
            let (cfg, out) = resolve(&c)?;
            let suite = harness::cmd_oracle(&cfg, first_seed(&cfg), &out)?;
            return Ok(verdict(suite.passed(), &out, "oracle_report.txt"));
        }
        Cmd::Gradcheck(c) => {
            let (cfg, out) = resolve(&c)?;
            let r = harness::cmd_gradcheck(&cfg, first_seed(&cfg), &out)?;
            print!("{}", harness::gradcheck_text(&r));
            return Ok(verdict(r.passed(harness::GRADCHECK_TOL), &out, "gradcheck.txt"));
        }
        Cmd::Render { common, pose } => {
            let (cfg, out) = resolve(&common)?;
            let pose = match pose.as_deref() {
                None => None,
                Some(&[x, y, th]) => Some(RobotPose::new(x, y, th)),
                Some(_) => return Err(Error::Usage("--pose takes x,y,theta".into())),
            };
            println!("{}", harness::cmd_render(&cfg, pose, &out)?.display());
        }
        Cmd::Extract { common, input } => {
            let (cfg, out) = resolve(&common)?;
            print!("{}", harness::cmd_extract(&cfg, &input, &out)?);
        }
    }
    Ok(ExitCode::SUCCESS)
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(code) => code,
        Err(e) => {
            eprintln!("error: {e}");
            match e {
                Error::Usage(_) => ExitCode::from(2),
                _ => ExitCode::FAILURE,
            }
        }
    }
}
