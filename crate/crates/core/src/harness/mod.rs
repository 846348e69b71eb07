//! Training protocol: blocks of interaction followed by offline updates and
//! deterministic evaluation, with scoring, logging and checkpoints.
//!
//! A block collects `block_size` environment steps with stochastic actions,
//! runs `updates_per_block` gradient updates, then plays `eval_trials`
//! episodes with the mean action. Evaluation never touches the replay buffer
//! or the agent.

mod episode;
mod log;
mod trainer;

use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};
use thiserror::Error;

use crate::codec::CodecError;
use crate::env::{EnvConfig, EnvError};
use crate::partner::{PartnerError, PartnerSpec};
use crate::sac::{SacConfig, SacError};
use crate::sim::{default_layout, PhysConfig, SimError, TrayLayout};

pub use episode::{
    evaluate, run_episode, Controller, EpisodeOutcome, EvalSetup, FnController, GreedyPolicy,
    TraceStep, TrialTrace,
};
pub use log::{
    read_traces, replay, resimulate, write_atomic, BlockRecord, EvalRecord, HeaderRecord,
    LogRecord, RunLog, TrialRecord,
};
pub use trainer::{
    NoHooks, Phase, RunHooks, StepInfo, Trainer, CHECKPOINT_FILE, CONFIG_FILE, LOG_FILE,
    TRACES_FILE,
};

#[derive(Debug, Error)]
pub enum HarnessError {
    #[error("invalid schedule: {0}")]
    InvalidSchedule(String),
    #[error("invalid config: {0}")]
    InvalidConfig(String),
    #[error("steps_used {steps_used} out of range for step cap {step_cap}")]
    StepsOutOfRange { steps_used: usize, step_cap: usize },
    #[error("config parse error: {0}")]
    ConfigParse(String),
    #[error("checkpoint was written for a different config")]
    ConfigMismatch,
    #[error("run interrupted")]
    Interrupted,
    #[error("trial {0} not recorded")]
    UnknownTrial(u64),
    #[error(transparent)]
    Env(#[from] EnvError),
    #[error(transparent)]
    Sim(#[from] SimError),
    #[error(transparent)]
    Sac(#[from] SacError),
    #[error("partner failed: {0}")]
    Partner(#[from] PartnerError),
    #[error("checkpoint decode: {0}")]
    Codec(#[from] CodecError),
    #[error("io: {0}")]
    Io(#[from] std::io::Error),
    #[error("log format: {0}")]
    Json(#[from] serde_json::Error),
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct Schedule {
    pub total_interaction_steps: usize,
    pub updates_per_block: usize,
    pub block_size: usize,
    pub eval_trials: usize,
    pub step_cap: usize,
}

impl Default for Schedule {
    fn default() -> Self {
        Self::experiment_1()
    }
}

impl Schedule {
    pub fn new(
        total_interaction_steps: usize,
        updates_per_block: usize,
        block_size: usize,
        eval_trials: usize,
        step_cap: usize,
    ) -> Result<Self, HarnessError> {
        let s = Self {
            total_interaction_steps,
            updates_per_block,
            block_size,
            eval_trials,
            step_cap,
        };
        s.validate()?;
        Ok(s)
    }

    /// 3,500 interaction steps, 140,000 updates.
    pub fn experiment_1() -> Self {
        Self {
            total_interaction_steps: 3500,
            updates_per_block: 20_000,
            block_size: 500,
            eval_trials: 10,
            step_cap: 200,
        }
    }

    /// 3,000 interaction steps, 60,000 updates.
    pub fn experiment_2() -> Self {
        Self {
            total_interaction_steps: 3000,
            updates_per_block: 10_000,
            ..Self::experiment_1()
        }
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        let bad = |m: String| Err(HarnessError::InvalidSchedule(m));
        if self.total_interaction_steps == 0
            || self.updates_per_block == 0
            || self.block_size == 0
            || self.eval_trials == 0
            || self.step_cap == 0
        {
            return bad("all schedule counts must be positive".into());
        }
        if self.step_cap > 200 {
            return bad(format!("step_cap {} exceeds the 200-step score scale", self.step_cap));
        }
        if self.total_interaction_steps % self.block_size != 0 {
            return bad(format!(
                "block_size {} does not divide total_interaction_steps {}",
                self.block_size, self.total_interaction_steps
            ));
        }
        Ok(())
    }

    pub fn n_blocks(&self) -> usize {
        self.total_interaction_steps / self.block_size
    }

    pub fn total_updates(&self) -> u64 {
        (self.n_blocks() * self.updates_per_block) as u64
    }
}

/// 0 if the goal was not reached, otherwise `201 - steps_used`, so reaching
/// the goal on the first step scores 200.
pub fn score(reached: bool, steps_used: usize, step_cap: usize) -> Result<u32, HarnessError> {
    let out_of_range = HarnessError::StepsOutOfRange {
        steps_used,
        step_cap,
    };
    if steps_used > step_cap {
        return Err(out_of_range);
    }
    if !reached {
        return Ok(0);
    }
    if steps_used == 0 || steps_used > 200 {
        return Err(out_of_range);
    }
    Ok(201 - steps_used as u32)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct TrialScore {
    pub reached: bool,
    pub steps_used: usize,
    pub score: u32,
}

impl TrialScore {
    pub fn new(reached: bool, steps_used: usize, step_cap: usize) -> Result<Self, HarnessError> {
        Ok(Self {
            reached,
            steps_used,
            score: score(reached, steps_used, step_cap)?,
        })
    }
}

/// Everything a run needs. Loaded from TOML; unknown keys are rejected.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunConfig {
    /// Root of every random stream in the run.
    pub seed: u64,
    /// Layout file; the built-in layout when absent.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub layout: Option<PathBuf>,
    pub phys: PhysConfig,
    pub env: EnvConfig,
    pub sac: SacConfig,
    pub partner: PartnerSpec,
    pub schedule: Schedule,
}

impl Default for RunConfig {
    fn default() -> Self {
        Self {
            seed: 0,
            layout: None,
            phys: PhysConfig::default(),
            env: EnvConfig::default(),
            sac: SacConfig::default(),
            partner: PartnerSpec::default(),
            schedule: Schedule::default(),
        }
    }
}

impl RunConfig {
    pub fn from_toml_str(text: &str) -> Result<Self, HarnessError> {
        let cfg: Self = toml::from_str(text).map_err(|e| HarnessError::ConfigParse(e.to_string()))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<Self, HarnessError> {
        let text = std::fs::read_to_string(path)?;
        let mut cfg = Self::from_toml_str(&text)?;
        // relative layout paths are relative to the config file
        if let (Some(rel), Some(dir)) = (cfg.layout.as_ref(), path.parent()) {
            if rel.is_relative() {
                cfg.layout = Some(dir.join(rel));
            }
        }
        Ok(cfg)
    }

    pub fn to_toml_string(&self) -> String {
        toml::to_string(self).expect("config serializes")
    }

    pub fn validate(&self) -> Result<(), HarnessError> {
        self.phys.validate()?;
        self.env.validate(&self.phys)?;
        self.sac.validate()?;
        self.partner.validate()?;
        self.schedule.validate()?;
        if self.env.step_cap != self.schedule.step_cap {
            return Err(HarnessError::InvalidConfig(format!(
                "env.step_cap {} differs from schedule.step_cap {}",
                self.env.step_cap, self.schedule.step_cap
            )));
        }
        if self.schedule.block_size < self.sac.batch_size {
            return Err(HarnessError::InvalidConfig(format!(
                "block_size {} is smaller than batch_size {}",
                self.schedule.block_size, self.sac.batch_size
            )));
        }
        Ok(())
    }

    pub fn load_layout(&self) -> Result<TrayLayout, HarnessError> {
        Ok(match &self.layout {
            Some(p) => TrayLayout::load(p)?,
            None => default_layout(),
        })
    }
}

/// SHA-256 over the config and the resolved layout, both as TOML.
pub fn config_hash(cfg: &RunConfig, layout: &TrayLayout) -> [u8; 32] {
    let mut h = Sha256::new();
    h.update(cfg.to_toml_string().as_bytes());
    h.update([0u8]);
    h.update(layout.to_toml_string().as_bytes());
    h.finalize().into()
}

/// Sample standard deviation (n - 1 denominator); 0 for fewer than two values.
pub fn sample_std(xs: &[f64]) -> f64 {
    if xs.len() < 2 {
        return 0.0;
    }
    let n = xs.len() as f64;
    let mean = xs.iter().sum::<f64>() / n;
    (xs.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt()
}
