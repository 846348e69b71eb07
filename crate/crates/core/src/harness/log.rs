//! Run log: one JSON object per line, tagged by `record`.
//!
//! ```text
//! {"record":"header", seed, config_hash, config, n_blocks, total_updates}
//! {"record":"block",  block, env_steps, buffer_size, updates, train_episodes,
//!                     train_successes, q1_loss, q2_loss, policy_loss,
//!                     alpha_loss, alpha, entropy, wall_time_s}
//! {"record":"trial",  block, trial, trial_id, seed, reached, steps_used, score, total_return}
//! {"record":"eval",   block, n, mean, std, stderr, successes}
//! ```
//!
//! Per block the order is `block`, then its `trial` records, then `eval`.
//! Counters in `block` records are cumulative; losses are means over the
//! block's updates.

use std::io::{BufRead, BufReader, Write};
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::episode::TrialTrace;
use super::HarnessError;
use crate::env::{EnvConfig, TrayEnv};
use crate::sim::{PhysConfig, TrayLayout};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeaderRecord {
    pub seed: u64,
    pub config_hash: String,
    pub config: String,
    pub n_blocks: usize,
    pub total_updates: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BlockRecord {
    pub block: usize,
    /// Environment steps so far in the run.
    pub env_steps: usize,
    pub buffer_size: usize,
    /// Gradient updates so far in the run.
    pub updates: u64,
    /// Training episodes started so far, and how many reached the goal.
    pub train_episodes: usize,
    pub train_successes: usize,
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
    pub wall_time_s: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialRecord {
    pub block: usize,
    pub trial: usize,
    pub trial_id: u64,
    pub seed: u64,
    pub reached: bool,
    pub steps_used: usize,
    pub score: u32,
    pub total_return: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvalRecord {
    pub block: usize,
    pub n: usize,
    pub mean: f64,
    pub std: f64,
    pub stderr: f64,
    pub successes: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "record", rename_all = "snake_case")]
pub enum LogRecord {
    Header(HeaderRecord),
    Block(BlockRecord),
    Trial(TrialRecord),
    Eval(EvalRecord),
}

/// Append-only list of records.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct RunLog {
    records: Vec<LogRecord>,
}

impl RunLog {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn push(&mut self, r: LogRecord) {
        self.records.push(r);
    }

    pub fn records(&self) -> &[LogRecord] {
        &self.records
    }

    pub fn header(&self) -> Option<&HeaderRecord> {
        self.records.iter().find_map(|r| match r {
            LogRecord::Header(h) => Some(h),
            _ => None,
        })
    }

    pub fn blocks(&self) -> impl Iterator<Item = &BlockRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Block(b) => Some(b),
            _ => None,
        })
    }

    pub fn trials(&self) -> impl Iterator<Item = &TrialRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Trial(t) => Some(t),
            _ => None,
        })
    }

    pub fn evals(&self) -> impl Iterator<Item = &EvalRecord> {
        self.records.iter().filter_map(|r| match r {
            LogRecord::Eval(e) => Some(e),
            _ => None,
        })
    }

    /// Scores of one block's evaluation trials, in trial order.
    pub fn block_scores(&self, block: usize) -> Vec<u32> {
        self.trials()
            .filter(|t| t.block == block)
            .map(|t| t.score)
            .collect()
    }

    /// Copy with every `wall_time_s` zeroed, for comparing runs.
    pub fn without_wall_time(&self) -> Self {
        let records = self
            .records
            .iter()
            .cloned()
            .map(|r| match r {
                LogRecord::Block(b) => LogRecord::Block(BlockRecord {
                    wall_time_s: 0.0,
                    ..b
                }),
                other => other,
            })
            .collect();
        Self { records }
    }

    pub fn to_jsonl(&self) -> String {
        let mut out = String::new();
        for r in &self.records {
            out.push_str(&serde_json::to_string(r).expect("records serialize"));
            out.push('\n');
        }
        out
    }

    pub fn from_jsonl(text: &str) -> Result<Self, HarnessError> {
        let records = text
            .lines()
            .filter(|l| !l.trim().is_empty())
            .map(serde_json::from_str)
            .collect::<Result<_, _>>()?;
        Ok(Self { records })
    }

    pub fn read(path: &Path) -> Result<Self, HarnessError> {
        Self::from_jsonl(&std::fs::read_to_string(path)?)
    }
}

pub fn traces_to_jsonl(traces: &[TrialTrace]) -> String {
    let mut out = String::new();
    for t in traces {
        out.push_str(&serde_json::to_string(t).expect("traces serialize"));
        out.push('\n');
    }
    out
}

pub fn traces_from_jsonl(text: &str) -> Result<Vec<TrialTrace>, HarnessError> {
    Ok(text
        .lines()
        .filter(|l| !l.trim().is_empty())
        .map(serde_json::from_str)
        .collect::<Result<_, _>>()?)
}

pub fn read_traces(path: &Path) -> Result<Vec<TrialTrace>, HarnessError> {
    let f = std::fs::File::open(path)?;
    let mut out = Vec::new();
    for line in BufReader::new(f).lines() {
        let line = line?;
        if !line.trim().is_empty() {
            out.push(serde_json::from_str(&line)?);
        }
    }
    Ok(out)
}

/// Stored trace of evaluation trial `trial_id` from a run directory.
pub fn replay(run_dir: &Path, trial_id: u64) -> Result<TrialTrace, HarnessError> {
    read_traces(&run_dir.join(super::trainer::TRACES_FILE))?
        .into_iter()
        .find(|t| t.trial_id == trial_id)
        .ok_or(HarnessError::UnknownTrial(trial_id))
}

/// Replays the trace's actions from its start state and checks that every
/// observation and reward comes out bit-identical.
pub fn resimulate(
    trace: &TrialTrace,
    layout: &TrayLayout,
    phys: &PhysConfig,
    env_cfg: &EnvConfig,
) -> Result<bool, HarnessError> {
    let mut env = TrayEnv::new(layout.clone(), *phys, *env_cfg)?;
    let mut obs = env.reset_to(trace.start);
    for s in &trace.steps {
        if obs.0.map(f64::to_bits) != s.obs.map(f64::to_bits) {
            return Ok(false);
        }
        let r = env.step(s.agent_action, s.partner_action)?;
        if r.reward.to_bits() != s.reward.to_bits() || r.done != s.done {
            return Ok(false);
        }
        obs = r.obs;
    }
    Ok(obs.0.map(f64::to_bits) == trace.steps.last().map_or(obs.0, |s| s.next_obs).map(f64::to_bits))
}

/// Writes `bytes` to `path` via a temporary file and rename, so readers never
/// see a partial file.
pub fn write_atomic(path: &Path, bytes: &[u8]) -> Result<(), HarnessError> {
    let tmp = path.with_extension("tmp");
    {
        let mut f = std::fs::File::create(&tmp)?;
        f.write_all(bytes)?;
        f.sync_all()?;
    }
    std::fs::rename(&tmp, path)?;
    Ok(())
}
