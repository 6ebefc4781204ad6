//! Incremental MIMO PID block.
//!
//! Two velocity-form controllers share one angular-velocity output:
//!
//! ```text
//! Δω_m = k_mp (e_m(t) - e_m(t-1)) + k_mi e_m(t) + k_md (e_m(t) - 2 e_m(t-1) + e_m(t-2))
//! Δω_c = same law over the curvature error history
//! ω(t) = ω(t-1) + Δω_m + η Δω_c                     (saturated at ±omega_max)
//! v(t) = -a |e_m(t)| + b                              (0 < a < b)
//! ```
//!
//! The positional law `u = kp e + ki Σe + kd Δe` is the running sum of the
//! incremental one; only the incremental form is implemented.

use crate::error::{Error, Result};
use crate::mdp::GainVector;

/// The last three samples of one error signal.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct ErrorHistory {
    pub e_t: f64,
    pub e_tm1: f64,
    pub e_tm2: f64,
}

impl ErrorHistory {
    pub fn new(e_t: f64, e_tm1: f64, e_tm2: f64) -> Self {
        ErrorHistory { e_t, e_tm1, e_tm2 }
    }

    /// Shifts `e` in as the newest sample.
    pub fn push(&mut self, e: f64) {
        self.e_tm2 = self.e_tm1;
        self.e_tm1 = self.e_t;
        self.e_t = e;
    }

    fn is_finite(&self) -> bool {
        self.e_t.is_finite() && self.e_tm1.is_finite() && self.e_tm2.is_finite()
    }
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct VelocityCommand {
    /// Linear velocity (m/s).
    pub v: f64,
    /// Angular velocity (rad/s), positive turns left.
    pub omega: f64,
}

/// Constants of the MIMO block.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct ControllerConfig {
    /// Weight of the curvature controller in the ω update.
    pub eta: f64,
    /// Ramp slope of the linear velocity law.
    pub a: f64,
    /// Ramp offset (top speed) of the linear velocity law.
    pub b: f64,
    pub omega_max: f64,
}

impl Default for ControllerConfig {
    fn default() -> Self {
        ControllerConfig {
            eta: 0.5,
            a: 0.25,
            b: 0.35,
            omega_max: 2.0,
        }
    }
}

impl ControllerConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.a > 0.0 && self.a < self.b) {
            return Err(Error::Config(format!(
                "velocity ramp needs 0 < a < b, got a={} b={}",
                self.a, self.b
            )));
        }
        if !(self.eta >= 0.0 && self.eta.is_finite()) {
            return Err(Error::Config(format!("eta must be >= 0, got {}", self.eta)));
        }
        if !(self.omega_max > 0.0 && self.omega_max.is_finite()) {
            return Err(Error::Config(format!(
                "omega_max must be positive, got {}",
                self.omega_max
            )));
        }
        Ok(())
    }
}

/// Velocity-form PID increment.
pub fn incremental_delta(kp: f64, ki: f64, kd: f64, hist: &ErrorHistory) -> Result<f64> {
    if !hist.is_finite() || !(kp.is_finite() && ki.is_finite() && kd.is_finite()) {
        return Err(Error::Validation("non-finite PID input".into()));
    }
    let ErrorHistory { e_t, e_tm1, e_tm2 } = *hist;
    Ok(kp * (e_t - e_tm1) + ki * e_t + kd * (e_t - 2.0 * e_tm1 + e_tm2))
}

pub fn angular_update(omega_prev: f64, delta_m: f64, delta_c: f64, eta: f64, omega_max: f64) -> f64 {
    (omega_prev + delta_m + eta * delta_c).clamp(-omega_max, omega_max)
}

pub fn linear_velocity(e_m: f64, a: f64, b: f64) -> Result<f64> {
    if !(a > 0.0 && a < b) {
        return Err(Error::Config(format!(
            "velocity ramp needs 0 < a < b, got a={a} b={b}"
        )));
    }
    Ok(-a * e_m.abs() + b)
}

/// One tick of the MIMO block: main loop on `hist_m`, auxiliary loop on `hist_c`.
pub fn mimo_step(
    gains: &GainVector,
    hist_m: &ErrorHistory,
    hist_c: &ErrorHistory,
    omega_prev: f64,
    cfg: &ControllerConfig,
) -> Result<VelocityCommand> {
    let (mp, mi, md) = gains.main();
    let (cp, ci, cd) = gains.curvature();
    let delta_m = incremental_delta(mp, mi, md, hist_m)?;
    let delta_c = incremental_delta(cp, ci, cd, hist_c)?;
    let omega = angular_update(omega_prev, delta_m, delta_c, cfg.eta, cfg.omega_max);
    let v = linear_velocity(hist_m.e_t, cfg.a, cfg.b)?;
    Ok(VelocityCommand { v, omega })
}
