//! Tilting-tray ball maze solved jointly by a learning agent on one tilt axis
//! and a partner on the other.
//!
//! The crate is organised bottom-up:
//!
//! - [`sim`]: deterministic ball-on-tray rigid body simulation.
//! - [`env`]: episodic RL environment with a 6-D observation and sparse reward.
//! - [`nn`]: dense networks with hand-written reverse mode, Adam, squashed Gaussian head.
//! - [`sac`]: Soft Actor-Critic with twin critics and automatic temperature tuning.
//! - [`partner`]: scripted and live partners for the non-agent axis.
//! - [`harness`]: block schedule, scoring, evaluation, logging and checkpoints.

pub mod codec;
pub mod env;
pub mod harness;
pub mod nn;
pub mod partner;
pub mod rng;
pub mod sac;
pub mod sim;

pub use env::{Axis, EnvConfig, EnvError, Observation, StepResult, TrayEnv};
pub use harness::{RunConfig, RunLog, Schedule, Trainer, TrialScore};
pub use partner::{Partner, PartnerKind, PartnerSpec};
pub use sac::{SacAgent, SacConfig};
pub use sim::{PhysConfig, PhysState, TrayLayout};
