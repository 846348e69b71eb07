//! Wire protocol: one JSON object per websocket text frame, tagged by `type`.
//!
//! Server to client: `hello`, `config`, `state`, `episode_result`, `error`.
//! Client to server: `cmd`. All lengths in metres, angles in radians, times
//! in seconds.

use serde::{Deserialize, Serialize};
use thiserror::Error;
use trayco_core::harness::{RunConfig, Schedule};
use trayco_core::sim::TrayLayout;
use trayco_core::Axis;

pub const PROTOCOL_VERSION: u32 = 1;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SessionPhase {
    Waiting,
    Training,
    Testing,
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ScheduleSummary {
    pub total_interaction_steps: usize,
    pub updates_per_block: usize,
    pub block_size: usize,
    pub eval_trials: usize,
    pub step_cap: usize,
    pub n_blocks: usize,
    pub control_interval: f64,
}

impl ScheduleSummary {
    pub fn new(s: &Schedule, control_interval: f64) -> Self {
        Self {
            total_interaction_steps: s.total_interaction_steps,
            updates_per_block: s.updates_per_block,
            block_size: s.block_size,
            eval_trials: s.eval_trials,
            step_cap: s.step_cap,
            n_blocks: s.n_blocks(),
            control_interval,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "type", rename_all = "snake_case", deny_unknown_fields)]
pub enum WireMessage {
    Hello {
        protocol_version: u32,
        layout: TrayLayout,
        /// Axis the human drives.
        control_axis: Axis,
        schedule: ScheduleSummary,
    },
    Config {
        config: RunConfig,
    },
    State {
        t_sim: f64,
        ball: [f64; 2],
        vel: [f64; 2],
        tray: [f64; 2],
        step_index: usize,
        phase: SessionPhase,
        block: usize,
        last_reward: f64,
    },
    EpisodeResult {
        trial_id: u64,
        reached: bool,
        steps_used: usize,
        score: u32,
    },
    Cmd {
        tilt: f64,
        client_time: f64,
    },
    Error {
        code: String,
        text: String,
    },
}

#[derive(Debug, Error, Clone, PartialEq)]
pub enum ProtocolError {
    #[error("malformed message: {0}")]
    Malformed(String),
    #[error("message type {0} is not accepted from clients")]
    UnexpectedType(&'static str),
    #[error("tilt must be finite")]
    NonFiniteTilt,
    #[error("this client is an observer; another client holds control")]
    NotController,
}

impl ProtocolError {
    pub fn code(&self) -> &'static str {
        match self {
            Self::Malformed(_) => "malformed",
            Self::UnexpectedType(_) => "unexpected_type",
            Self::NonFiniteTilt => "bad_value",
            Self::NotController => "not_controller",
        }
    }

    pub fn to_message(&self) -> WireMessage {
        WireMessage::Error {
            code: self.code().to_string(),
            text: self.to_string(),
        }
    }
}

impl WireMessage {
    pub fn type_name(&self) -> &'static str {
        match self {
            Self::Hello { .. } => "hello",
            Self::Config { .. } => "config",
            Self::State { .. } => "state",
            Self::EpisodeResult { .. } => "episode_result",
            Self::Cmd { .. } => "cmd",
            Self::Error { .. } => "error",
        }
    }

    pub fn to_text(&self) -> String {
        serde_json::to_string(self).expect("wire messages serialize")
    }
}

/// Parses an inbound frame; only `cmd` is accepted from clients.
pub fn parse_client_message(text: &str) -> Result<(f64, f64), ProtocolError> {
    let msg: WireMessage =
        serde_json::from_str(text).map_err(|e| ProtocolError::Malformed(e.to_string()))?;
    match msg {
        WireMessage::Cmd { tilt, client_time } => {
            if !tilt.is_finite() {
                return Err(ProtocolError::NonFiniteTilt);
            }
            Ok((tilt, client_time))
        }
        other => Err(ProtocolError::UnexpectedType(other.type_name())),
    }
}
