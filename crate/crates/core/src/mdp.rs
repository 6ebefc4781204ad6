//! Shared RL data types: the 13-dim observation, the 6-dim gain action, replay
//! records, the ring replay buffer and the seeded random streams.

use rand::seq::index;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

use crate::error::{Error, Result};

pub const STATE_DIM: usize = 13;
pub const ACTION_DIM: usize = 6;

/// Observation fed to the agent:
/// `[x1 y1 x2 y2 x3 y3 x4 y4 x5 y5 e_c v omega]`.
///
/// `x1` is the tracking error `e_m`; slot 1 is the path point closest to the robot.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StateVector(pub [f64; STATE_DIM]);

impl StateVector {
    pub const E_C: usize = 10;
    pub const V: usize = 11;
    pub const OMEGA: usize = 12;

    pub fn zeros() -> Self {
        StateVector([0.0; STATE_DIM])
    }

    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }

    /// Tracking error `e_m` (= x1).
    pub fn e_m(&self) -> f64 {
        self.0[0]
    }

    pub fn e_c(&self) -> f64 {
        self.0[Self::E_C]
    }

    pub fn v(&self) -> f64 {
        self.0[Self::V]
    }

    pub fn omega(&self) -> f64 {
        self.0[Self::OMEGA]
    }

    /// Path point `i` (0-based, 0 = nearest the robot) as `(x, y)`.
    pub fn point(&self, i: usize) -> (f64, f64) {
        (self.0[2 * i], self.0[2 * i + 1])
    }

    pub fn validate(&self) -> Result<()> {
        if let Some(i) = self.0.iter().position(|v| !v.is_finite()) {
            return Err(Error::Validation(format!("state entry {i} is not finite")));
        }
        if let Some(i) = self.0[..10].iter().position(|v| v.abs() > 1.0) {
            return Err(Error::Validation(format!(
                "state path coordinate {i} = {} outside [-1, 1]",
                self.0[i]
            )));
        }
        Ok(())
    }
}

/// PID gains `{k_mp, k_mi, k_md, k_cp, k_ci, k_cd}`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainVector(pub [f64; ACTION_DIM]);

impl GainVector {
    pub fn new(k_mp: f64, k_mi: f64, k_md: f64, k_cp: f64, k_ci: f64, k_cd: f64) -> Self {
        GainVector([k_mp, k_mi, k_md, k_cp, k_ci, k_cd])
    }

    pub fn zeros() -> Self {
        GainVector([0.0; ACTION_DIM])
    }

    /// `(kp, ki, kd)` of the main (tracking-error) controller.
    pub fn main(&self) -> (f64, f64, f64) {
        (self.0[0], self.0[1], self.0[2])
    }

    /// `(kp, ki, kd)` of the auxiliary (curvature-error) controller.
    pub fn curvature(&self) -> (f64, f64, f64) {
        (self.0[3], self.0[4], self.0[5])
    }

    pub fn validate(&self, ranges: &GainRanges) -> Result<()> {
        for (i, (&k, &hi)) in self.0.iter().zip(ranges.0.iter()).enumerate() {
            if !k.is_finite() || k < 0.0 || k > hi {
                return Err(Error::Validation(format!(
                    "gain {i} = {k} outside [0, {hi}]"
                )));
            }
        }
        Ok(())
    }
}

/// Upper bound `g_max` of each gain; every gain lives in `[0, g_max]`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct GainRanges(pub [f64; ACTION_DIM]);

impl Default for GainRanges {
    fn default() -> Self {
        GainRanges([5.0, 1.0, 1.0, 3.0, 1.0, 1.0])
    }
}

impl GainRanges {
    /// Maps a squashed action `w ∈ [-1, 1]^6` onto the gain box.
    pub fn to_gains(&self, w: &[f64; ACTION_DIM]) -> GainVector {
        let mut k = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            k[i] = (0.5 * (w[i] + 1.0) * self.0[i]).clamp(0.0, self.0[i]);
        }
        GainVector(k)
    }

    /// Inverse of [`GainRanges::to_gains`].
    pub fn to_action(&self, k: &GainVector) -> [f64; ACTION_DIM] {
        let mut w = [0.0; ACTION_DIM];
        for i in 0..ACTION_DIM {
            w[i] = if self.0[i] > 0.0 {
                2.0 * k.0[i] / self.0[i] - 1.0
            } else {
                0.0
            };
        }
        w
    }

    pub fn validate(&self) -> Result<()> {
        if self.0.iter().any(|g| !g.is_finite() || *g <= 0.0) {
            return Err(Error::Config(format!(
                "gain ranges must be positive, got {:?}",
                self.0
            )));
        }
        Ok(())
    }
}

/// One replay record.
#[derive(Debug, Clone, PartialEq)]
pub struct Transition {
    pub s: StateVector,
    pub k: GainVector,
    /// Unshaped step reward.
    pub r_raw: f64,
    /// Reward actually used as the critic target (shaped, with terminal adjustment).
    pub r_lyap: f64,
    pub s_next: StateVector,
    pub done: bool,
    /// Lap completed; meaningful only when `done`.
    pub success: bool,
}

impl Transition {
    pub fn validate(&self) -> Result<()> {
        self.s.validate()?;
        self.s_next.validate()?;
        if self.k.0.iter().any(|k| !k.is_finite()) {
            return Err(Error::Validation("gain is not finite".into()));
        }
        if !self.r_raw.is_finite() || !self.r_lyap.is_finite() {
            return Err(Error::Validation("reward is not finite".into()));
        }
        if !(self.r_raw > 0.0 && self.r_raw <= 1.0) {
            return Err(Error::Validation(format!(
                "raw reward {} outside (0, 1]",
                self.r_raw
            )));
        }
        Ok(())
    }
}

/// Fixed-capacity ring of transitions; the oldest record is overwritten first.
#[derive(Debug, Clone)]
pub struct ReplayBuffer {
    capacity: usize,
    data: Vec<Transition>,
    head: usize,
}

impl ReplayBuffer {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("replay buffer capacity must be positive".into()));
        }
        Ok(ReplayBuffer {
            capacity,
            data: Vec::with_capacity(capacity.min(1 << 16)),
            head: 0,
        })
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn push(&mut self, t: Transition) -> Result<()> {
        t.validate()?;
        if self.data.len() < self.capacity {
            self.data.push(t);
        } else {
            self.data[self.head] = t;
            self.head = (self.head + 1) % self.capacity;
        }
        Ok(())
    }

    /// Records from oldest to newest.
    pub fn iter(&self) -> impl Iterator<Item = &Transition> {
        let (newer, older) = self.data.split_at(self.head);
        older.iter().chain(newer.iter())
    }

    /// Indices (into oldest-to-newest order) of a uniform draw of `b` distinct records.
    pub fn sample_indices(&self, b: usize, rng: &mut ChaCha8Rng) -> Result<Vec<usize>> {
        if self.len() < b {
            return Err(Error::InsufficientSamples {
                size: self.len(),
                needed: b,
            });
        }
        Ok(index::sample(rng, self.len(), b).into_vec())
    }

    /// Uniform minibatch of `b` distinct records.
    pub fn sample_minibatch(&self, b: usize, rng: &mut ChaCha8Rng) -> Result<Vec<&Transition>> {
        let idx = self.sample_indices(b, rng)?;
        let n = self.data.len();
        Ok(idx
            .into_iter()
            .map(|i| &self.data[(self.head + i) % n])
            .collect())
    }
}

/// Named random streams carved out of one run seed.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Stream {
    Env = 0,
    Policy = 1,
    Sampler = 2,
    Init = 3,
}

/// One ChaCha8 generator per [`Stream`], all derived from the same seed.
#[derive(Debug, Clone, PartialEq)]
pub struct RngStreams {
    seed: u64,
    rngs: [ChaCha8Rng; 4],
}

impl RngStreams {
    pub fn new(seed: u64) -> Self {
        let mk = |s: u64| {
            let mut r = ChaCha8Rng::seed_from_u64(seed);
            r.set_stream(s);
            r
        };
        RngStreams {
            seed,
            rngs: [mk(0), mk(1), mk(2), mk(3)],
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn get(&mut self, s: Stream) -> &mut ChaCha8Rng {
        &mut self.rngs[s as usize]
    }

    /// Per-stream word positions; together with the seed this is the full state.
    pub fn word_positions(&self) -> [u128; 4] {
        [
            self.rngs[0].get_word_pos(),
            self.rngs[1].get_word_pos(),
            self.rngs[2].get_word_pos(),
            self.rngs[3].get_word_pos(),
        ]
    }

    pub fn restore(seed: u64, pos: [u128; 4]) -> Self {
        let mut r = RngStreams::new(seed);
        for (rng, p) in r.rngs.iter_mut().zip(pos) {
            rng.set_word_pos(p);
        }
        r
    }
}
