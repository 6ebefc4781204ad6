//! Versioned binary checkpoints.
//!
//! Layout, all integers little-endian:
//!
//! ```text
//! magic "LSACPID1" | u32 version | u32 entry count
//! entry table: u16 name length, name bytes, u8 kind (0 f64, 1 u64, 2 bytes), u64 element count
//! entry data, in table order
//! ```
//!
//! Floats are stored as raw bit patterns, so save → load → save is byte-identical.

use std::path::Path;

use crate::agent::{Agent, AgentConfig};
use crate::config::{Profile, RunConfig};
use crate::error::{Error, Result};
use crate::mdp::RngStreams;
use crate::nn::{Adam, Mlp};
use crate::sac::{SacLearner, SacNets};

pub const MAGIC: &[u8; 8] = b"LSACPID1";
pub const VERSION: u32 = 1;

const NETS: [&str; 5] = ["value", "value_target", "q1", "q2", "policy"];
const OPTS: [&str; 4] = ["value", "q1", "q2", "policy"];

#[derive(Debug, Clone, PartialEq)]
enum Data {
    F64(Vec<f64>),
    U64(Vec<u64>),
    Bytes(Vec<u8>),
}

impl Data {
    fn kind(&self) -> u8 {
        match self {
            Data::F64(_) => 0,
            Data::U64(_) => 1,
            Data::Bytes(_) => 2,
        }
    }

    fn len(&self) -> usize {
        match self {
            Data::F64(v) => v.len(),
            Data::U64(v) => v.len(),
            Data::Bytes(v) => v.len(),
        }
    }
}

/// Text form of an agent configuration (the `[run]` section is informational).
pub fn config_text(cfg: &AgentConfig) -> String {
    RunConfig {
        agent: cfg.clone(),
        ..RunConfig::from_profile(Profile::Desk)
    }
    .to_text()
}

pub fn encode(agent: &Agent) -> Vec<u8> {
    let mut entries: Vec<(String, Data)> = vec![
        ("config".into(), Data::Bytes(config_text(&agent.config).into_bytes())),
        ("fingerprint".into(), Data::Bytes(agent.config.fingerprint().into_bytes())),
        (
            "counters".into(),
            Data::U64(vec![agent.rng.seed(), agent.episodes, agent.env_steps]),
        ),
        (
            "rng".into(),
            Data::U64(
                agent
                    .rng
                    .word_positions()
                    .iter()
                    .flat_map(|p| [*p as u64, (*p >> 64) as u64])
                    .collect(),
            ),
        ),
    ];
    for (name, net) in NETS.iter().zip(agent.learner.nets.all()) {
        entries.push((
            format!("{name}.layout"),
            Data::U64(net.sizes().iter().map(|&s| s as u64).collect()),
        ));
        entries.push((format!("{name}.params"), Data::F64(net.params.clone())));
    }
    for (name, opt) in OPTS.iter().zip(optimizers(&agent.learner)) {
        entries.push((
            format!("adam.{name}.hyper"),
            Data::F64(vec![opt.lr, opt.beta1, opt.beta2, opt.eps]),
        ));
        entries.push((format!("adam.{name}.t"), Data::U64(vec![opt.t])));
        entries.push((format!("adam.{name}.m"), Data::F64(opt.m.clone())));
        entries.push((format!("adam.{name}.v"), Data::F64(opt.v.clone())));
    }

    let mut out = Vec::new();
    out.extend_from_slice(MAGIC);
    out.extend_from_slice(&VERSION.to_le_bytes());
    out.extend_from_slice(&(entries.len() as u32).to_le_bytes());
    for (name, data) in &entries {
        out.extend_from_slice(&(name.len() as u16).to_le_bytes());
        out.extend_from_slice(name.as_bytes());
        out.push(data.kind());
        out.extend_from_slice(&(data.len() as u64).to_le_bytes());
    }
    for (_, data) in &entries {
        match data {
            Data::F64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_bits().to_le_bytes())),
            Data::U64(v) => v.iter().for_each(|x| out.extend_from_slice(&x.to_le_bytes())),
            Data::Bytes(v) => out.extend_from_slice(v),
        }
    }
    out
}

fn optimizers(l: &SacLearner) -> [&Adam; 4] {
    [&l.opt_value, &l.opt_q1, &l.opt_q2, &l.opt_policy]
}

struct Reader<'a> {
    buf: &'a [u8],
    pos: usize,
}

impl<'a> Reader<'a> {
    fn take(&mut self, n: usize) -> Result<&'a [u8]> {
        let end = self.pos.checked_add(n).filter(|&e| e <= self.buf.len()).ok_or_else(|| {
            Error::CorruptCheckpoint(format!("truncated: need {n} bytes at offset {}", self.pos))
        })?;
        let s = &self.buf[self.pos..end];
        self.pos = end;
        Ok(s)
    }

    fn u16(&mut self) -> Result<u16> {
        Ok(u16::from_le_bytes(self.take(2)?.try_into().expect("2 bytes")))
    }

    fn u32(&mut self) -> Result<u32> {
        Ok(u32::from_le_bytes(self.take(4)?.try_into().expect("4 bytes")))
    }

    fn u64(&mut self) -> Result<u64> {
        Ok(u64::from_le_bytes(self.take(8)?.try_into().expect("8 bytes")))
    }
}

fn parse_entries(bytes: &[u8]) -> Result<Vec<(String, Data)>> {
    let mut r = Reader { buf: bytes, pos: 0 };
    if r.take(MAGIC.len())? != MAGIC {
        return Err(Error::CorruptCheckpoint("bad magic bytes".into()));
    }
    let version = r.u32()?;
    if version != VERSION {
        return Err(Error::CheckpointVersion {
            found: version,
            expected: VERSION,
        });
    }
    let count = r.u32()? as usize;
    let mut table = Vec::new();
    for _ in 0..count {
        let n = r.u16()? as usize;
        let name = std::str::from_utf8(r.take(n)?)
            .map_err(|_| Error::CorruptCheckpoint("entry name is not UTF-8".into()))?
            .to_string();
        let kind = r.take(1)?[0];
        let len = usize::try_from(r.u64()?).map_err(|_| Error::CorruptCheckpoint("entry too long".into()))?;
        table.push((name, kind, len));
    }
    let mut entries = Vec::with_capacity(count);
    for (name, kind, len) in table {
        let width = if kind == 2 { 1 } else { 8 };
        let raw = r.take(len.checked_mul(width).ok_or_else(|| Error::CorruptCheckpoint("entry too long".into()))?)?;
        let words = || raw.chunks_exact(8).map(|c| u64::from_le_bytes(c.try_into().expect("8 bytes")));
        let data = match kind {
            0 => Data::F64(words().map(f64::from_bits).collect()),
            1 => Data::U64(words().collect()),
            2 => Data::Bytes(raw.to_vec()),
            k => return Err(Error::CorruptCheckpoint(format!("entry `{name}` has unknown kind {k}"))),
        };
        entries.push((name, data));
    }
    if r.pos != bytes.len() {
        return Err(Error::CorruptCheckpoint(format!(
            "{} trailing bytes after the last entry",
            bytes.len() - r.pos
        )));
    }
    Ok(entries)
}

struct Entries(Vec<(String, Data)>);

impl Entries {
    fn get(&self, name: &str) -> Result<&Data> {
        self.0
            .iter()
            .find(|(n, _)| n == name)
            .map(|(_, d)| d)
            .ok_or_else(|| Error::CorruptCheckpoint(format!("missing entry `{name}`")))
    }

    fn f64s(&self, name: &str) -> Result<Vec<f64>> {
        match self.get(name)? {
            Data::F64(v) => Ok(v.clone()),
            _ => Err(Error::CorruptCheckpoint(format!("entry `{name}` should hold f64 values"))),
        }
    }

    fn u64s(&self, name: &str, n: Option<usize>) -> Result<Vec<u64>> {
        match self.get(name)? {
            Data::U64(v) if n.is_none_or(|n| n == v.len()) => Ok(v.clone()),
            _ => Err(Error::CorruptCheckpoint(format!("entry `{name}` has the wrong type or length"))),
        }
    }

    fn text(&self, name: &str) -> Result<String> {
        match self.get(name)? {
            Data::Bytes(v) => String::from_utf8(v.clone())
                .map_err(|_| Error::CorruptCheckpoint(format!("entry `{name}` is not UTF-8"))),
            _ => Err(Error::CorruptCheckpoint(format!("entry `{name}` should hold bytes"))),
        }
    }
}

pub fn decode(bytes: &[u8]) -> Result<Agent> {
    let e = Entries(parse_entries(bytes)?);
    let config = RunConfig::parse(&e.text("config")?, None)?.agent;
    if e.text("fingerprint")? != config.fingerprint() {
        return Err(Error::CorruptCheckpoint("config fingerprint does not match stored config".into()));
    }
    let counters = e.u64s("counters", Some(3))?;
    let words = e.u64s("rng", Some(8))?;
    let pos: [u128; 4] = std::array::from_fn(|i| u128::from(words[2 * i]) | (u128::from(words[2 * i + 1]) << 64));

    let mut nets = Vec::with_capacity(NETS.len());
    for name in NETS {
        let sizes: Vec<usize> = e.u64s(&format!("{name}.layout"), None)?.iter().map(|&s| s as usize).collect();
        nets.push(Mlp::from_params(&sizes, e.f64s(&format!("{name}.params"))?)?);
    }
    let [value, value_target, q1, q2, policy]: [Mlp; 5] = nets.try_into().expect("five networks");
    let nets = SacNets {
        value,
        value_target,
        q1,
        q2,
        policy,
    };

    let mut learner = SacLearner::new(nets, config.sac);
    let sizes = [
        learner.nets.value.num_params(),
        learner.nets.q1.num_params(),
        learner.nets.q2.num_params(),
        learner.nets.policy.num_params(),
    ];
    let opts = [
        &mut learner.opt_value,
        &mut learner.opt_q1,
        &mut learner.opt_q2,
        &mut learner.opt_policy,
    ];
    for ((name, opt), n) in OPTS.iter().zip(opts).zip(sizes) {
        let hyper = e.f64s(&format!("adam.{name}.hyper"))?;
        let [lr, beta1, beta2, eps]: [f64; 4] = hyper
            .try_into()
            .map_err(|_| Error::CorruptCheckpoint(format!("adam.{name}.hyper needs 4 values")))?;
        let m = e.f64s(&format!("adam.{name}.m"))?;
        let v = e.f64s(&format!("adam.{name}.v"))?;
        if m.len() != n || v.len() != n {
            return Err(Error::CorruptCheckpoint(format!("adam.{name} moments do not match the network")));
        }
        *opt = Adam {
            lr,
            beta1,
            beta2,
            eps,
            m,
            v,
            t: e.u64s(&format!("adam.{name}.t"), Some(1))?[0],
        };
    }

    let agent = Agent {
        config,
        learner,
        rng: RngStreams::restore(counters[0], pos),
        episodes: counters[1],
        env_steps: counters[2],
    };
    agent.check_layout()?;
    Ok(agent)
}

pub fn save_checkpoint(agent: &Agent, path: &Path) -> Result<()> {
    std::fs::write(path, encode(agent)).map_err(|e| Error::io(path, e))
}

pub fn load_checkpoint(path: &Path) -> Result<Agent> {
    let bytes = std::fs::read(path).map_err(|e| Error::io(path, e))?;
    decode(&bytes)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::Stream;
    use rand::Rng;

    fn agent() -> Agent {
        let cfg = AgentConfig {
            hidden: 6,
            ..AgentConfig::desk()
        };
        let mut a = Agent::new(cfg, 42).unwrap();
        a.episodes = 3;
        a.env_steps = 777;
        a.learner.opt_q1.t = 5;
        a.learner.opt_q1.m[0] = -1.5e-300;
        a.learner.opt_policy.v[2] = f64::MIN_POSITIVE;
        let _: u64 = a.rng.get(Stream::Policy).gen();
        a
    }

    #[test]
    fn round_trip_is_bit_exact() {
        let a = agent();
        let bytes = encode(&a);
        let b = decode(&bytes).unwrap();
        assert_eq!(b, a);
        assert_eq!(encode(&b), bytes);
        assert_eq!(&bytes[..8], MAGIC);
    }

    #[test]
    fn file_round_trip() {
        let dir = tempfile::tempdir().unwrap();
        let p = dir.path().join("ck.bin");
        let a = agent();
        save_checkpoint(&a, &p).unwrap();
        assert_eq!(load_checkpoint(&p).unwrap(), a);
        assert!(matches!(load_checkpoint(&dir.path().join("missing")), Err(Error::Io { .. })));
    }

    #[test]
    fn truncation_and_trailing_bytes_rejected() {
        let bytes = encode(&agent());
        for cut in [0, 4, 12, 40, bytes.len() / 2, bytes.len() - 1] {
            assert!(
                matches!(decode(&bytes[..cut]), Err(Error::CorruptCheckpoint(_))),
                "cut at {cut}"
            );
        }
        let mut longer = bytes.clone();
        longer.push(0);
        assert!(matches!(decode(&longer), Err(Error::CorruptCheckpoint(_))));
        let mut bad = bytes;
        bad[0] = b'X';
        assert!(matches!(decode(&bad), Err(Error::CorruptCheckpoint(_))));
    }

    #[test]
    fn version_mismatch_rejected() {
        let mut bytes = encode(&agent());
        bytes[8..12].copy_from_slice(&2u32.to_le_bytes());
        assert!(matches!(
            decode(&bytes),
            Err(Error::CheckpointVersion { found: 2, expected: 1 })
        ));
    }

    #[test]
    fn tampered_config_rejected() {
        let a = agent();
        let mut bytes = encode(&a);
        let text = config_text(&a.config);
        let at = bytes.windows(text.len()).position(|w| w == text.as_bytes()).unwrap();
        let hidden = at + text.find("hidden = 6").unwrap() + "hidden = ".len();
        bytes[hidden] = b'7';
        assert!(decode(&bytes).is_err());
    }
}
