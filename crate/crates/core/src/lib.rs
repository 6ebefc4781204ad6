//! Line-following robot with PID gains tuned online by a soft actor-critic
//! agent trained on a Lyapunov-shaped reward.

pub mod agent;
pub mod checkpoint;
pub mod config;
pub mod error;
pub mod harness;
pub mod mdp;
pub mod nn;
pub mod oracle;
pub mod pgm;
pub mod pid;
pub mod reward;
pub mod sac;
pub mod sim;
pub mod track;
pub mod vision;

pub use error::{Error, Result};
