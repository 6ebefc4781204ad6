//! Step reward, Lyapunov shaping and the episode reward.

use crate::error::{Error, Result};
use crate::mdp::Transition;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RewardConfig {
    /// Step-reward weights on `|e(t)|`, `|e(t-1)|`, `|e(t-2)|`.
    pub beta: [f64; 3],
    /// Shaping proportion; 0 disables shaping.
    pub lambda: f64,
    pub gamma: f64,
    /// Episode weights on the shaped return, distance and mean speed.
    pub zeta: [f64; 3],
    /// Terminal bonus (success) / penalty (failure) magnitude.
    pub penalty: f64,
}

impl Default for RewardConfig {
    fn default() -> Self {
        RewardConfig {
            beta: [0.7, 0.2, 0.1],
            lambda: 1.0,
            gamma: 0.99,
            zeta: [0.5, 0.3, 0.2],
            penalty: 2.0,
        }
    }
}

impl RewardConfig {
    pub fn validate(&self) -> Result<()> {
        if self.beta.iter().any(|b| !(*b >= 0.0 && b.is_finite())) {
            return Err(Error::Config(format!("beta weights must be >= 0, got {:?}", self.beta)));
        }
        if !(self.gamma > 0.0 && self.gamma < 1.0) {
            return Err(Error::Config(format!("gamma must lie in (0, 1), got {}", self.gamma)));
        }
        if !(self.penalty >= 0.0 && self.penalty.is_finite()) {
            return Err(Error::Config(format!("penalty must be >= 0, got {}", self.penalty)));
        }
        if !self.lambda.is_finite() || self.zeta.iter().any(|z| !z.is_finite()) {
            return Err(Error::Config("lambda and zeta must be finite".into()));
        }
        Ok(())
    }
}

/// `1 / (1 + β1|e_t| + β2|e_{t-1}| + β3|e_{t-2}|)`, always in `(0, 1]` for bounded errors.
pub fn step_reward(e_t: f64, e_tm1: f64, e_tm2: f64, cfg: &RewardConfig) -> f64 {
    let [b1, b2, b3] = cfg.beta;
    1.0 / (1.0 + b1 * e_t.abs() + b2 * e_tm1.abs() + b3 * e_tm2.abs())
}

/// `r_t + λ (r_t - r_{t-1} / γ)`; the first step of an episode has no predecessor
/// and is left unshaped.
pub fn lyap_shape(r_t: f64, r_prev: Option<f64>, cfg: &RewardConfig) -> f64 {
    match r_prev {
        None => r_t,
        Some(rp) => r_t + cfg.lambda * (r_t - rp / cfg.gamma),
    }
}

/// Episode reward `ζ_r Σ r_lyap + ζ_s s + ζ_v v ± p` (`+p` on success, `κ = 0`).
pub fn episode_reward(sum_r_lyap: f64, distance: f64, mean_speed: f64, kappa: u8, cfg: &RewardConfig) -> f64 {
    let [zr, zs, zv] = cfg.zeta;
    let base = zr * sum_r_lyap + zs * distance + zv * mean_speed;
    if kappa == 0 {
        base + cfg.penalty
    } else {
        base - cfg.penalty
    }
}

/// Adds `+p` (success) or `-p` (failure) to the shaped reward of a terminal transition.
pub fn terminal_adjust(last: &Transition, kappa: u8, cfg: &RewardConfig) -> Result<Transition> {
    if !last.done {
        return Err(Error::NotTerminal);
    }
    let mut t = last.clone();
    t.r_lyap += if kappa == 0 { cfg.penalty } else { -cfg.penalty };
    Ok(t)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::mdp::{GainVector, StateVector};
    use proptest::prelude::*;

    fn terminal(r: f64, done: bool) -> Transition {
        Transition {
            s: StateVector::zeros(),
            k: GainVector::zeros(),
            r_raw: r,
            r_lyap: r,
            s_next: StateVector::zeros(),
            done,
            success: false,
        }
    }

    #[test]
    fn step_reward_examples() {
        let cfg = RewardConfig::default();
        assert_eq!(step_reward(0.0, 0.0, 0.0, &cfg), 1.0);
        assert!((step_reward(1.0, -1.0, 1.0, &cfg) - 0.5).abs() < 1e-15);
        assert!((step_reward(0.5, 0.0, 0.0, &cfg) - 1.0 / 1.35).abs() < 1e-15);
        assert!((step_reward(-0.5, 0.0, 0.0, &cfg) - 0.7407).abs() < 1e-4);
    }

    #[test]
    fn shaping_examples() {
        let mut cfg = RewardConfig { lambda: 0.0, ..Default::default() };
        assert_eq!(lyap_shape(0.8, Some(0.5), &cfg), 0.8);
        cfg.lambda = 1.0;
        let want = 0.8 + (0.8 - 0.5 / 0.99);
        assert!((lyap_shape(0.8, Some(0.5), &cfg) - want).abs() < 1e-15);
        assert!((want - 1.0949).abs() < 1e-4);
        assert_eq!(lyap_shape(0.8, None, &cfg), 0.8);
    }

    #[test]
    fn episode_reward_examples() {
        let cfg = RewardConfig::default();
        assert!((episode_reward(10.0, 5.0, 0.3, 0, &cfg) - 8.56).abs() < 1e-12);
        assert!((episode_reward(10.0, 5.0, 0.3, 1, &cfg) - 4.56).abs() < 1e-12);
        assert_eq!(episode_reward(0.0, 0.0, 0.0, 0, &cfg), 2.0);
    }

    #[test]
    fn terminal_adjust_examples() {
        let cfg = RewardConfig::default();
        let t = terminal_adjust(&terminal(0.9, true), 0, &cfg).unwrap();
        assert!((t.r_lyap - 2.9).abs() < 1e-15);
        assert_eq!(t.r_raw, 0.9);
        let t = terminal_adjust(&terminal(0.9, true), 1, &cfg).unwrap();
        assert!((t.r_lyap + 1.1).abs() < 1e-15);
        assert!(matches!(terminal_adjust(&terminal(0.9, false), 0, &cfg), Err(Error::NotTerminal)));
    }

    /// Discounted sum of `rs` from index 0.
    fn discounted(rs: &[f64], g: f64) -> f64 {
        rs.iter().rev().fold(0.0, |acc, r| r + g * acc)
    }

    proptest! {
        #[test]
        fn step_reward_in_unit_interval(e in prop::array::uniform3(-1.0f64..=1.0)) {
            let r = step_reward(e[0], e[1], e[2], &RewardConfig::default());
            prop_assert!(r > 0.0 && r <= 1.0);
        }

        #[test]
        fn episode_reward_is_affine(a in -5.0f64..5.0, b in -5.0f64..5.0, s in 0.0f64..10.0, v in 0.0f64..1.0) {
            let cfg = RewardConfig::default();
            let f = |x: f64| episode_reward(x, s, v, 1, &cfg);
            let mid = f(0.5 * (a + b));
            prop_assert!((mid - 0.5 * (f(a) + f(b))).abs() < 1e-9);
            let g = |x: f64| episode_reward(a, x, v, 0, &cfg);
            prop_assert!((g(s + 1.0) - g(s) - cfg.zeta[1]).abs() < 1e-9);
            let h = |x: f64| episode_reward(a, s, x, 0, &cfg);
            prop_assert!((h(v + 1.0) - h(v) - cfg.zeta[2]).abs() < 1e-9);
        }

        /// The shaping terms telescope: the discounted shaped return equals the raw
        /// return plus the boundary terms `λ (γ^{T-1} r_{T-1} - r_0)` (no predecessor at t = 0).
        #[test]
        fn shaping_telescopes(rs in prop::collection::vec(0.01f64..=1.0, 1..60), lambda in 0.0f64..2.0) {
            let cfg = RewardConfig { lambda, ..Default::default() };
            let g = cfg.gamma;
            let shaped: Vec<f64> = rs.iter().enumerate()
                .map(|(t, &r)| lyap_shape(r, if t == 0 { None } else { Some(rs[t - 1]) }, &cfg))
                .collect();
            let n = rs.len();
            let boundary = if n > 1 { lambda * (g.powi(n as i32 - 1) * rs[n - 1] - rs[0]) } else { 0.0 };
            let lhs = discounted(&shaped, g);
            let rhs = discounted(&rs, g) + boundary;
            prop_assert!((lhs - rhs).abs() < 1e-9, "{} vs {}", lhs, rhs);
        }
    }
}
