//! Plain-text `key = value` run configuration with `[section]` headers.
//!
//! A file picks a base profile (`[run] profile = desk|paper`) and overrides
//! individual fields. Unknown sections and keys are rejected, and every error
//! names the offending line.

use std::fmt::Write as _;
use std::str::FromStr;

use crate::agent::AgentConfig;
use crate::error::{Error, Result};
use crate::mdp::ACTION_DIM;

#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Profile {
    Desk,
    Paper,
}

impl Profile {
    pub fn agent(self) -> AgentConfig {
        match self {
            Profile::Desk => AgentConfig::desk(),
            Profile::Paper => AgentConfig::paper(),
        }
    }

    pub fn name(self) -> &'static str {
        match self {
            Profile::Desk => "desk",
            Profile::Paper => "paper",
        }
    }
}

impl FromStr for Profile {
    type Err = String;

    fn from_str(s: &str) -> std::result::Result<Self, String> {
        match s {
            "desk" => Ok(Profile::Desk),
            "paper" => Ok(Profile::Paper),
            other => Err(format!("unknown profile `{other}` (expected desk or paper)")),
        }
    }
}

/// Everything a subcommand needs: agent constants plus run bookkeeping.
#[derive(Debug, Clone, PartialEq)]
pub struct RunConfig {
    pub profile: Profile,
    pub agent: AgentConfig,
    /// Built-in track name or path to a track file.
    pub track: String,
    pub eval_track: String,
    pub seeds: Vec<u64>,
    pub out: String,
    pub eval_seed: u64,
    pub lambdas: Vec<f64>,
}

impl RunConfig {
    pub fn from_profile(profile: Profile) -> Self {
        RunConfig {
            profile,
            agent: profile.agent(),
            track: "oval".into(),
            eval_track: "oval".into(),
            seeds: vec![1],
            out: "out".into(),
            eval_seed: 1000,
            lambdas: vec![0.0, 1.0],
        }
    }

    /// Parses a config file; `profile` (if given) replaces the file's own profile choice.
    pub fn parse(text: &str, profile: Option<Profile>) -> Result<Self> {
        let entries = entries(text)?;
        let file_profile = entries
            .iter()
            .find(|e| e.section == "run" && e.key == "profile")
            .map(|e| e.value.parse::<Profile>().map_err(|m| e.err(m)))
            .transpose()?;
        let mut cfg = RunConfig::from_profile(profile.or(file_profile).unwrap_or(Profile::Desk));
        for e in &entries {
            cfg.apply(e)?;
        }
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        self.agent.validate()?;
        if self.seeds.is_empty() {
            return Err(Error::Config("seed list is empty".into()));
        }
        if self.lambdas.iter().any(|l| !l.is_finite()) {
            return Err(Error::Config("lambda values must be finite".into()));
        }
        Ok(())
    }

    fn apply(&mut self, e: &Entry) -> Result<()> {
        let a = &mut self.agent;
        let v = e.value.as_str();
        match (e.section.as_str(), e.key.as_str()) {
            ("run", "profile") => {}
            ("run", "track") => self.track = v.to_string(),
            ("run", "eval_track") => self.eval_track = v.to_string(),
            ("run", "seeds") => self.seeds = e.list()?,
            ("run", "out") => self.out = v.to_string(),
            ("run", "eval_seed") => self.eval_seed = e.num()?,
            ("run", "lambdas") => self.lambdas = e.list()?,

            ("sac", "gamma") => {
                a.sac.gamma = e.num()?;
                a.reward.gamma = a.sac.gamma;
            }
            ("sac", "alpha") => a.sac.alpha = e.num()?,
            ("sac", "chi") => a.sac.chi = e.num()?,
            ("sac", "lr") => a.sac.lr = e.num()?,
            ("sac", "buffer_capacity") => a.buffer_capacity = e.num()?,
            ("sac", "batch_size") => a.batch_size = e.num()?,
            ("sac", "target_update_interval") => a.target_update_interval = e.num()?,
            ("sac", "gradient_steps") => a.gradient_steps = e.num()?,
            ("sac", "hidden") => a.hidden = e.num()?,

            ("reward", "beta") => a.reward.beta = e.array()?,
            ("reward", "lambda") => a.reward.lambda = e.num()?,
            ("reward", "zeta") => a.reward.zeta = e.array()?,
            ("reward", "penalty") => a.reward.penalty = e.num()?,

            ("controller", "eta") => a.controller.eta = e.num()?,
            ("controller", "a") => a.controller.a = e.num()?,
            ("controller", "b") => a.controller.b = e.num()?,
            ("controller", "omega_max") => a.controller.omega_max = e.num()?,
            ("controller", "gain_max") => a.gains.0 = e.array::<ACTION_DIM>()?,

            ("camera", "width") => a.camera.width = e.num()?,
            ("camera", "height") => a.camera.height = e.num()?,
            ("camera", "near") => a.camera.near = e.num()?,
            ("camera", "length") => a.camera.length = e.num()?,
            ("camera", "span") => a.camera.span = e.num()?,

            ("vision", "min_run") => a.vision.min_run = e.num()?,
            ("vision", "max_run_frac") => a.vision.max_run_frac = e.num()?,
            ("vision", "lateral_reach") => a.vision.lateral_reach = e.num()?,
            ("vision", "ec_bound") => a.vision.ec_bound = e.num()?,
            ("vision", "v_min") => a.vision.v_min = e.num()?,

            ("episode", "max_episodes") => a.max_episodes = e.num()?,
            ("episode", "eval_episodes") => a.eval_episodes = e.num()?,
            ("episode", "max_steps") => a.limits.max_steps = e.num()?,
            ("episode", "scan_rows") => a.limits.scan_rows = e.num()?,
            ("episode", "lap_tolerance") => a.limits.lap_tolerance = e.num()?,
            ("episode", "dt") => a.limits.dt = e.num()?,
            ("episode", "start_jitter_lateral") => a.start_jitter_lateral = e.num()?,
            ("episode", "start_jitter_heading") => a.start_jitter_heading = e.num()?,
            ("episode", "record_wall_time") => a.record_wall_time = e.num()?,
            ("episode", "stop_on_convergence") => a.stop_on_convergence = e.num()?,

            (s, k) => return Err(e.err(format!("unknown key `{k}` in section [{s}]"))),
        }
        Ok(())
    }

    /// Fully resolved text form; `parse(to_text())` reproduces `self`.
    pub fn to_text(&self) -> String {
        let a = &self.agent;
        let mut o = String::new();
        let join = |xs: &[f64]| xs.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let seeds = self.seeds.iter().map(|x| x.to_string()).collect::<Vec<_>>().join(", ");
        let _ = writeln!(o, "[run]");
        let _ = writeln!(o, "profile = {}", self.profile.name());
        let _ = writeln!(o, "track = {}", self.track);
        let _ = writeln!(o, "eval_track = {}", self.eval_track);
        let _ = writeln!(o, "seeds = {seeds}");
        let _ = writeln!(o, "out = {}", self.out);
        let _ = writeln!(o, "eval_seed = {}", self.eval_seed);
        let _ = writeln!(o, "lambdas = {}", join(&self.lambdas));
        let _ = writeln!(o, "\n[sac]");
        let _ = writeln!(o, "gamma = {}", a.sac.gamma);
        let _ = writeln!(o, "alpha = {}", a.sac.alpha);
        let _ = writeln!(o, "chi = {}", a.sac.chi);
        let _ = writeln!(o, "lr = {}", a.sac.lr);
        let _ = writeln!(o, "buffer_capacity = {}", a.buffer_capacity);
        let _ = writeln!(o, "batch_size = {}", a.batch_size);
        let _ = writeln!(o, "target_update_interval = {}", a.target_update_interval);
        let _ = writeln!(o, "gradient_steps = {}", a.gradient_steps);
        let _ = writeln!(o, "hidden = {}", a.hidden);
        let _ = writeln!(o, "\n[reward]");
        let _ = writeln!(o, "beta = {}", join(&a.reward.beta));
        let _ = writeln!(o, "lambda = {}", a.reward.lambda);
        let _ = writeln!(o, "zeta = {}", join(&a.reward.zeta));
        let _ = writeln!(o, "penalty = {}", a.reward.penalty);
        let _ = writeln!(o, "\n[controller]");
        let _ = writeln!(o, "eta = {}", a.controller.eta);
        let _ = writeln!(o, "a = {}", a.controller.a);
        let _ = writeln!(o, "b = {}", a.controller.b);
        let _ = writeln!(o, "omega_max = {}", a.controller.omega_max);
        let _ = writeln!(o, "gain_max = {}", join(&a.gains.0));
        let _ = writeln!(o, "\n[camera]");
        let _ = writeln!(o, "width = {}", a.camera.width);
        let _ = writeln!(o, "height = {}", a.camera.height);
        let _ = writeln!(o, "near = {}", a.camera.near);
        let _ = writeln!(o, "length = {}", a.camera.length);
        let _ = writeln!(o, "span = {}", a.camera.span);
        let _ = writeln!(o, "\n[vision]");
        let _ = writeln!(o, "min_run = {}", a.vision.min_run);
        let _ = writeln!(o, "max_run_frac = {}", a.vision.max_run_frac);
        let _ = writeln!(o, "lateral_reach = {}", a.vision.lateral_reach);
        let _ = writeln!(o, "ec_bound = {}", a.vision.ec_bound);
        let _ = writeln!(o, "v_min = {}", a.vision.v_min);
        let _ = writeln!(o, "\n[episode]");
        let _ = writeln!(o, "max_episodes = {}", a.max_episodes);
        let _ = writeln!(o, "eval_episodes = {}", a.eval_episodes);
        let _ = writeln!(o, "max_steps = {}", a.limits.max_steps);
        let _ = writeln!(o, "scan_rows = {}", a.limits.scan_rows);
        let _ = writeln!(o, "lap_tolerance = {}", a.limits.lap_tolerance);
        let _ = writeln!(o, "dt = {}", a.limits.dt);
        let _ = writeln!(o, "start_jitter_lateral = {}", a.start_jitter_lateral);
        let _ = writeln!(o, "start_jitter_heading = {}", a.start_jitter_heading);
        let _ = writeln!(o, "record_wall_time = {}", a.record_wall_time);
        let _ = writeln!(o, "stop_on_convergence = {}", a.stop_on_convergence);
        o
    }
}

struct Entry {
    line: usize,
    section: String,
    key: String,
    value: String,
}

impl Entry {
    fn err(&self, msg: impl Into<String>) -> Error {
        Error::ConfigParse {
            line: self.line,
            msg: msg.into(),
        }
    }

    fn num<T: FromStr>(&self) -> Result<T> {
        self.value
            .parse()
            .map_err(|_| self.err(format!("bad value `{}` for `{}`", self.value, self.key)))
    }

    fn list<T: FromStr>(&self) -> Result<Vec<T>> {
        self.value
            .split(',')
            .map(|t| {
                t.trim()
                    .parse()
                    .map_err(|_| self.err(format!("bad list item `{}` for `{}`", t.trim(), self.key)))
            })
            .collect()
    }

    fn array<const N: usize>(&self) -> Result<[f64; N]> {
        let v: Vec<f64> = self.list()?;
        v.try_into()
            .map_err(|v: Vec<f64>| self.err(format!("`{}` needs {N} values, got {}", self.key, v.len())))
    }
}

const SECTIONS: [&str; 7] = ["run", "sac", "reward", "controller", "camera", "vision", "episode"];

fn entries(text: &str) -> Result<Vec<Entry>> {
    let mut section: Option<String> = None;
    let mut out: Vec<Entry> = Vec::new();
    for (i, raw) in text.lines().enumerate() {
        let line = i + 1;
        let err = |msg: String| Error::ConfigParse { line, msg };
        let t = raw.split('#').next().unwrap_or("").trim();
        if t.is_empty() {
            continue;
        }
        if let Some(name) = t.strip_prefix('[') {
            let name = name
                .strip_suffix(']')
                .ok_or_else(|| err(format!("unterminated section header `{t}`")))?
                .trim();
            if !SECTIONS.contains(&name) {
                return Err(err(format!("unknown section [{name}]")));
            }
            section = Some(name.to_string());
            continue;
        }
        let (k, v) = t.split_once('=').ok_or_else(|| err(format!("expected `key = value`, got `{t}`")))?;
        let section = section.clone().ok_or_else(|| err("key outside any [section]".into()))?;
        let key = k.trim().to_string();
        if out.iter().any(|e| e.section == section && e.key == key) {
            return Err(err(format!("duplicate key `{key}`")));
        }
        out.push(Entry {
            line,
            section,
            key,
            value: v.trim().to_string(),
        });
    }
    Ok(out)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn empty_text_is_desk_profile() {
        let c = RunConfig::parse("", None).unwrap();
        assert_eq!(c, RunConfig::from_profile(Profile::Desk));
        let p = RunConfig::parse("", Some(Profile::Paper)).unwrap();
        assert_eq!(p.agent.batch_size, 512);
        assert_eq!(p.agent.buffer_capacity, 2_000_000);
    }

    #[test]
    fn overrides_apply_on_profile() {
        let text = "[run]\nprofile = paper\nseeds = 1, 2,3\n[sac]\nhidden = 16\ngamma = 0.95\n[reward]\nlambda = 0.35\n";
        let c = RunConfig::parse(text, None).unwrap();
        assert_eq!(c.profile, Profile::Paper);
        assert_eq!(c.seeds, vec![1, 2, 3]);
        assert_eq!(c.agent.hidden, 16);
        assert_eq!(c.agent.batch_size, 512);
        assert_eq!(c.agent.reward.gamma, 0.95);
        assert_eq!(c.agent.reward.lambda, 0.35);
        let forced = RunConfig::parse(text, Some(Profile::Desk)).unwrap();
        assert_eq!(forced.agent.batch_size, 256);
    }

    #[test]
    fn errors_name_the_line() {
        let cases = [
            ("[sac]\nhidden = 8\nbogus = 1\n", 3),
            ("[nope]\n", 1),
            ("hidden = 8\n", 1),
            ("[sac]\n\nhidden = eight\n", 3),
            ("[reward]\nbeta = 1, 2\n", 2),
            ("[sac]\nhidden\n", 2),
            ("[sac]\nhidden = 8\nhidden = 9\n", 3),
            ("[run]\nprofile = huge\n", 2),
        ];
        for (text, want) in cases {
            match RunConfig::parse(text, None) {
                Err(Error::ConfigParse { line, .. }) => assert_eq!(line, want, "{text:?}"),
                other => panic!("{text:?}: {other:?}"),
            }
        }
    }

    #[test]
    fn invalid_values_rejected() {
        assert!(matches!(RunConfig::parse("[sac]\ngamma = 1.5\n", None), Err(Error::Config(_))));
        assert!(matches!(RunConfig::parse("[run]\nseeds = \n", None), Err(Error::ConfigParse { .. })));
    }

    #[test]
    fn text_round_trip() {
        let mut c = RunConfig::from_profile(Profile::Paper);
        c.agent.sac.lr = 1.0 / 3.0;
        c.agent.camera.span = 0.1 + 0.2;
        c.agent.stop_on_convergence = true;
        c.lambdas = vec![0.0, 0.35, 1.0, 1.5];
        c.seeds = vec![7, 11];
        c.track = "tracks/custom.track".into();
        let back = RunConfig::parse(&c.to_text(), None).unwrap();
        assert_eq!(back, c);
        assert_eq!(back.to_text(), c.to_text());
    }
}
