use std::path::Path;
use std::sync::Arc;
use std::time::Instant;

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::episode::{EvalSetup, GreedyPolicy, TrialTrace};
use super::log::{
    traces_from_jsonl, traces_to_jsonl, write_atomic, BlockRecord, EvalRecord, HeaderRecord,
    LogRecord, RunLog, TrialRecord,
};
use super::{config_hash, sample_std, HarnessError, RunConfig};
use crate::codec::{Decoder, Encoder};
use crate::env::{EnvConfig, Observation, TrayEnv};
use crate::partner::{CommandSource, Partner, PartnerSpec};
use crate::rng::{self, derive_seed, SimRng};
use crate::sac::{ActionMode, ReplayBuffer, SacAgent, Transition};
use crate::sim::TrayLayout;

pub const LOG_FILE: &str = "run.jsonl";
pub const TRACES_FILE: &str = "traces.jsonl";
pub const CHECKPOINT_FILE: &str = "checkpoint.bin";
pub const CONFIG_FILE: &str = "config.toml";

const CKPT_MAGIC: &[u8; 8] = b"TRAYCKPT";
const CKPT_VERSION: u32 = 1;

// Tags separating the random streams derived from the run seed.
const TAG_INIT: u64 = 1;
const TAG_ACT: u64 = 2;
const TAG_ENV: u64 = 3;
const TAG_PARTNER: u64 = 4;
const TAG_EVAL: u64 = 5;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(tag = "phase", rename_all = "snake_case")]
pub enum Phase {
    Training { block: usize },
    Testing { block: usize },
    Finished,
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepInfo {
    pub agent_action: f64,
    pub partner_action: f64,
    pub reward: f64,
    pub done: bool,
    pub reached_goal: bool,
}

/// Observation points into a run. The live server uses these for pacing and
/// streaming; headless runs use [`NoHooks`].
pub trait RunHooks {
    fn on_phase(&mut self, _phase: Phase) {}
    /// Called before every episode, training or evaluation. May block; an
    /// error aborts the run.
    fn before_episode(&mut self) -> Result<(), HarnessError> {
        Ok(())
    }
    /// Called before the commands for the next step are chosen. Pacing goes
    /// here; an error aborts the run.
    fn before_step(&mut self, _env: &TrayEnv) -> Result<(), HarnessError> {
        Ok(())
    }
    fn after_step(&mut self, _env: &TrayEnv, _info: &StepInfo) {}
    /// Called once per block between collection and the gradient updates.
    fn before_updates(&mut self) {}
    fn on_trial(&mut self, _rec: &TrialRecord) {}
    fn on_block(&mut self, _rec: &BlockRecord) {}
    /// Whether the env should keep per-substep states for `after_step`.
    fn wants_substeps(&self) -> bool {
        false
    }
}

pub struct NoHooks;

impl RunHooks for NoHooks {}

#[derive(Default)]
struct LossSums {
    q1: f64,
    q2: f64,
    policy: f64,
    alpha_loss: f64,
    alpha: f64,
    entropy: f64,
    n: f64,
}

/// Owns every piece of state in a run, so that a checkpoint taken between
/// blocks resumes bit-exactly.
#[derive(Debug)]
pub struct Trainer {
    cfg: RunConfig,
    layout: TrayLayout,
    hash: [u8; 32],
    env_cfg: EnvConfig,
    partner_spec: PartnerSpec,
    agent: SacAgent,
    buffer: ReplayBuffer,
    env: TrayEnv,
    partner: Partner,
    rng: SimRng,
    source: Option<Arc<dyn CommandSource>>,
    blocks_done: usize,
    env_steps: usize,
    updates: u64,
    train_episodes: usize,
    train_successes: usize,
    trial_counter: u64,
    log: RunLog,
    traces: Vec<TrialTrace>,
}

impl Trainer {
    pub fn new(cfg: RunConfig) -> Result<Self, HarnessError> {
        let layout = cfg.load_layout()?;
        Self::with_layout(cfg, layout)
    }

    pub fn with_layout(cfg: RunConfig, layout: TrayLayout) -> Result<Self, HarnessError> {
        cfg.validate()?;
        layout.validate()?;
        let seed = cfg.seed;
        let env_cfg = EnvConfig {
            seed: derive_seed(seed, &[TAG_ENV, cfg.env.seed]),
            ..cfg.env
        };
        let partner_spec = PartnerSpec {
            seed: derive_seed(seed, &[TAG_PARTNER, cfg.partner.seed]),
            ..cfg.partner
        };
        let agent = SacAgent::new(cfg.sac, &mut rng::seeded(derive_seed(seed, &[TAG_INIT, cfg.sac.seed])))?;
        let env = TrayEnv::new(layout.clone(), cfg.phys, env_cfg)?;
        let partner = Partner::new(partner_spec, env_cfg.agent_axis.other(), &layout, &cfg.phys, &env_cfg)?;
        let hash = config_hash(&cfg, &layout);
        let mut log = RunLog::new();
        log.push(LogRecord::Header(HeaderRecord {
            seed,
            config_hash: hex(&hash),
            config: cfg.to_toml_string(),
            n_blocks: cfg.schedule.n_blocks(),
            total_updates: cfg.schedule.total_updates(),
        }));
        Ok(Self {
            rng: rng::seeded(derive_seed(seed, &[TAG_ACT, cfg.sac.seed])),
            buffer: ReplayBuffer::new(cfg.sac.replay_capacity),
            cfg,
            layout,
            hash,
            env_cfg,
            partner_spec,
            agent,
            env,
            partner,
            source: None,
            blocks_done: 0,
            env_steps: 0,
            updates: 0,
            train_episodes: 0,
            train_successes: 0,
            trial_counter: 0,
            log,
            traces: Vec::new(),
        })
    }

    /// Connects the live command cell used by a `live` partner.
    pub fn set_partner_source(&mut self, source: Arc<dyn CommandSource>) {
        self.partner = self.partner.clone().with_source(source.clone());
        self.source = Some(source);
    }

    pub fn config(&self) -> &RunConfig {
        &self.cfg
    }
    pub fn layout(&self) -> &TrayLayout {
        &self.layout
    }
    pub fn agent(&self) -> &SacAgent {
        &self.agent
    }
    pub fn buffer(&self) -> &ReplayBuffer {
        &self.buffer
    }
    pub fn log(&self) -> &RunLog {
        &self.log
    }
    pub fn traces(&self) -> &[TrialTrace] {
        &self.traces
    }
    pub fn blocks_done(&self) -> usize {
        self.blocks_done
    }
    pub fn env_steps(&self) -> usize {
        self.env_steps
    }
    pub fn updates_done(&self) -> u64 {
        self.updates
    }
    pub fn is_finished(&self) -> bool {
        self.blocks_done >= self.cfg.schedule.n_blocks()
    }
    pub fn config_hash(&self) -> [u8; 32] {
        self.hash
    }

    /// Evaluation world with this run's partner.
    pub fn eval_setup(&self) -> EvalSetup {
        EvalSetup {
            source: self.source.clone(),
            ..EvalSetup::new(self.layout.clone(), self.cfg.phys, self.env_cfg, self.partner_spec)
        }
    }

    /// Seed of evaluation block `block`; trial seeds derive from it.
    pub fn eval_seed(&self, block: usize) -> u64 {
        derive_seed(self.cfg.seed, &[TAG_EVAL, block as u64])
    }

    /// Collection, updates and evaluation for the next block. Returns false
    /// when the schedule is already complete.
    pub fn run_block(&mut self, hooks: &mut dyn RunHooks) -> Result<bool, HarnessError> {
        if self.is_finished() {
            return Ok(false);
        }
        let started = Instant::now();
        let block = self.blocks_done;
        let sched = self.cfg.schedule;

        hooks.on_phase(Phase::Training { block });
        self.env.set_record_substeps(hooks.wants_substeps());
        // Each block starts a fresh episode; one still running at the end of
        // the block is dropped.
        let mut obs: Option<Observation> = None;
        for _ in 0..sched.block_size {
            let o = match obs {
                Some(o) => o,
                None => {
                    hooks.before_episode()?;
                    self.partner.reset();
                    self.env.reset()
                }
            };
            hooks.before_step(&self.env)?;
            let now = self.env.now();
            let a = if self.env_steps < self.cfg.sac.random_steps {
                self.rng.random_range(-1.0..=1.0)
            } else {
                self.agent.select_action(&o, ActionMode::Stochastic, &mut self.rng)
            };
            let p = self.partner.act(&o, now)?;
            let r = self.env.step(a, p)?;
            self.buffer.store(Transition {
                s: o,
                a,
                r: r.reward,
                s_next: r.obs,
                done: r.reached_goal,
            });
            self.env_steps += 1;
            hooks.after_step(
                &self.env,
                &StepInfo {
                    agent_action: a,
                    partner_action: p,
                    reward: r.reward,
                    done: r.done,
                    reached_goal: r.reached_goal,
                },
            );
            if r.done {
                self.train_episodes += 1;
                self.train_successes += r.reached_goal as usize;
                obs = None;
            } else {
                obs = Some(r.obs);
            }
        }

        hooks.before_updates();
        let mut sums = LossSums::default();
        for _ in 0..sched.updates_per_block {
            let rep = self.agent.update(&self.buffer, &mut self.rng)?;
            sums.q1 += rep.q1_loss;
            sums.q2 += rep.q2_loss;
            sums.policy += rep.policy_loss;
            sums.alpha_loss += rep.alpha_loss;
            sums.alpha += rep.alpha;
            sums.entropy += rep.entropy;
            sums.n += 1.0;
            self.updates += 1;
        }

        hooks.on_phase(Phase::Testing { block });
        let setup = self.eval_setup();
        let eval_seed = self.eval_seed(block);
        let mut trials = Vec::with_capacity(sched.eval_trials);
        let mut traces = Vec::with_capacity(sched.eval_trials);
        for k in 0..sched.eval_trials {
            let seed = EvalSetup::trial_seed(eval_seed, k);
            let out = setup.trial(&mut GreedyPolicy(&self.agent), seed, hooks)?;
            let rec = TrialRecord {
                block,
                trial: k,
                trial_id: self.trial_counter,
                seed,
                reached: out.score.reached,
                steps_used: out.score.steps_used,
                score: out.score.score,
                total_return: out.total_return,
            };
            hooks.on_trial(&rec);
            traces.push(TrialTrace {
                trial_id: self.trial_counter,
                block,
                seed,
                start: out.start,
                steps: out.steps,
                total_return: out.total_return,
            });
            trials.push(rec);
            self.trial_counter += 1;
        }

        let scores: Vec<f64> = trials.iter().map(|t| t.score as f64).collect();
        let n = scores.len();
        let std = sample_std(&scores);
        let eval = EvalRecord {
            block,
            n,
            mean: scores.iter().sum::<f64>() / n as f64,
            std,
            stderr: std / (n as f64).sqrt(),
            successes: trials.iter().filter(|t| t.reached).count(),
        };
        let k = sums.n.max(1.0);
        let block_rec = BlockRecord {
            block,
            env_steps: self.env_steps,
            buffer_size: self.buffer.len(),
            updates: self.updates,
            train_episodes: self.train_episodes,
            train_successes: self.train_successes,
            q1_loss: sums.q1 / k,
            q2_loss: sums.q2 / k,
            policy_loss: sums.policy / k,
            alpha_loss: sums.alpha_loss / k,
            alpha: sums.alpha / k,
            entropy: sums.entropy / k,
            wall_time_s: started.elapsed().as_secs_f64(),
        };
        self.log.push(LogRecord::Block(block_rec.clone()));
        for t in trials {
            self.log.push(LogRecord::Trial(t));
        }
        self.log.push(LogRecord::Eval(eval));
        self.traces.extend(traces);
        self.blocks_done += 1;
        hooks.on_block(&block_rec);
        if self.is_finished() {
            hooks.on_phase(Phase::Finished);
        }
        Ok(true)
    }

    /// Runs every remaining block.
    pub fn run(&mut self, hooks: &mut dyn RunHooks) -> Result<&RunLog, HarnessError> {
        while self.run_block(hooks)? {}
        Ok(&self.log)
    }

    /// Runs every remaining block, writing the log, traces and a checkpoint
    /// to `out` after each one. A failing block leaves the previous
    /// checkpoint in place.
    pub fn run_to_dir(&mut self, out: &Path, hooks: &mut dyn RunHooks) -> Result<&RunLog, HarnessError> {
        std::fs::create_dir_all(out)?;
        write_atomic(&out.join(CONFIG_FILE), self.cfg.to_toml_string().as_bytes())?;
        while self.run_block(hooks)? {
            self.write_outputs(out)?;
        }
        Ok(&self.log)
    }

    pub fn write_outputs(&self, out: &Path) -> Result<(), HarnessError> {
        let ckpt = self.checkpoint_bytes();
        write_atomic(&out.join(format!("ckpt-block-{}.bin", self.blocks_done)), &ckpt)?;
        write_atomic(&out.join(CHECKPOINT_FILE), &ckpt)?;
        write_atomic(&out.join(LOG_FILE), self.log.to_jsonl().as_bytes())?;
        write_atomic(&out.join(TRACES_FILE), traces_to_jsonl(&self.traces).as_bytes())?;
        Ok(())
    }

    pub fn checkpoint_bytes(&self) -> Vec<u8> {
        let mut enc = Encoder::new();
        enc.magic(CKPT_MAGIC, CKPT_VERSION);
        enc.str(&self.cfg.to_toml_string());
        enc.str(&self.layout.to_toml_string());
        enc.raw(&self.hash);
        self.agent.encode(&mut enc);
        self.buffer.encode(&mut enc);
        self.env.encode_state(&mut enc);
        self.partner.encode_state(&mut enc);
        rng::encode_rng(&mut enc, &self.rng);
        enc.usize(self.blocks_done);
        enc.usize(self.env_steps);
        enc.u64(self.updates);
        enc.usize(self.train_episodes);
        enc.usize(self.train_successes);
        enc.u64(self.trial_counter);
        enc.str(&self.log.to_jsonl());
        enc.str(&traces_to_jsonl(&self.traces));
        enc.into_bytes()
    }

    /// Config and layout stored in a checkpoint.
    pub fn checkpoint_config(bytes: &[u8]) -> Result<(RunConfig, TrayLayout), HarnessError> {
        let mut dec = Decoder::new(bytes);
        Self::decode_header(&mut dec)
    }

    fn decode_header(dec: &mut Decoder<'_>) -> Result<(RunConfig, TrayLayout), HarnessError> {
        dec.expect_version(CKPT_MAGIC, "checkpoint", CKPT_VERSION)?;
        let cfg = RunConfig::from_toml_str(&dec.str()?)?;
        let layout = TrayLayout::from_toml_str(&dec.str()?)?;
        let stored = dec.raw(32)?;
        if stored != config_hash(&cfg, &layout) {
            return Err(HarnessError::ConfigMismatch);
        }
        Ok((cfg, layout))
    }

    pub fn from_checkpoint(bytes: &[u8]) -> Result<Self, HarnessError> {
        let mut dec = Decoder::new(bytes);
        let (cfg, layout) = Self::decode_header(&mut dec)?;
        let mut t = Self::with_layout(cfg, layout)?;
        t.agent = SacAgent::decode(&mut dec)?;
        t.buffer = ReplayBuffer::decode(&mut dec)?;
        t.env.decode_state(&mut dec)?;
        t.partner.decode_state(&mut dec)?;
        t.rng = rng::decode_rng(&mut dec)?;
        t.blocks_done = dec.usize()?;
        t.env_steps = dec.usize()?;
        t.updates = dec.u64()?;
        t.train_episodes = dec.usize()?;
        t.train_successes = dec.usize()?;
        t.trial_counter = dec.u64()?;
        t.log = RunLog::from_jsonl(&dec.str()?)?;
        t.traces = traces_from_jsonl(&dec.str()?)?;
        Ok(t)
    }

    /// Like [`from_checkpoint`](Self::from_checkpoint), but fails unless the
    /// checkpoint was written for `expected`.
    pub fn resume(bytes: &[u8], expected: &RunConfig) -> Result<Self, HarnessError> {
        let t = Self::from_checkpoint(bytes)?;
        let layout = expected.load_layout()?;
        if config_hash(expected, &layout) != t.hash {
            return Err(HarnessError::ConfigMismatch);
        }
        Ok(t)
    }
}

fn hex(bytes: &[u8]) -> String {
    bytes.iter().map(|b| format!("{b:02x}")).collect()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::harness::{replay, resimulate, Schedule};
    use crate::partner::PartnerKind;
    use crate::sac::SacConfig;

    fn tiny(seed: u64) -> RunConfig {
        RunConfig {
            seed,
            sac: SacConfig {
                hidden: 8,
                batch_size: 16,
                random_steps: 30,
                ..Default::default()
            },
            schedule: Schedule::new(120, 15, 40, 3, 200).unwrap(),
            ..Default::default()
        }
    }

    #[test]
    fn bookkeeping_matches_schedule() {
        let mut t = Trainer::new(tiny(1)).unwrap();
        t.run(&mut NoHooks).unwrap();
        assert_eq!(t.updates_done(), 45);
        assert_eq!(t.env_steps(), 120);
        assert_eq!(t.log().evals().count(), 3);
        assert_eq!(t.log().trials().count(), 9);
        assert!(!t.run_block(&mut NoHooks).unwrap());
        for tr in t.log().trials() {
            assert!(tr.score <= 200);
        }
    }

    #[test]
    fn resume_is_bit_exact() {
        let mut full = Trainer::new(tiny(2)).unwrap();
        full.run(&mut NoHooks).unwrap();

        let mut first = Trainer::new(tiny(2)).unwrap();
        first.run_block(&mut NoHooks).unwrap();
        let bytes = first.checkpoint_bytes();
        drop(first);
        let mut resumed = Trainer::resume(&bytes, &tiny(2)).unwrap();
        resumed.run(&mut NoHooks).unwrap();

        assert_eq!(resumed.log().without_wall_time(), full.log().without_wall_time());
        assert_eq!(resumed.agent(), full.agent());
        assert!(resumed.buffer() == full.buffer());
        assert_eq!(resumed.traces(), full.traces());
    }

    #[test]
    fn resume_rejects_other_config() {
        let t = Trainer::new(tiny(3)).unwrap();
        let bytes = t.checkpoint_bytes();
        assert!(matches!(
            Trainer::resume(&bytes, &tiny(4)),
            Err(HarnessError::ConfigMismatch)
        ));
        let mut corrupt = bytes.clone();
        corrupt.truncate(bytes.len() / 2);
        assert!(Trainer::from_checkpoint(&corrupt).is_err());
    }

    #[test]
    fn evaluation_is_pure() {
        let mut t = Trainer::new(tiny(5)).unwrap();
        t.run_block(&mut NoHooks).unwrap();
        let agent = t.agent().clone();
        let buffer = t.buffer().clone();
        let setup = t.eval_setup();
        let a = setup.evaluate(&mut GreedyPolicy(t.agent()), 4, 9, &mut NoHooks).unwrap();
        let b = setup.evaluate(&mut GreedyPolicy(t.agent()), 4, 9, &mut NoHooks).unwrap();
        assert_eq!(a, b);
        assert_eq!(t.agent(), &agent);
        assert_eq!(t.buffer(), &buffer);
    }

    #[test]
    fn frozen_world_scores_zero() {
        let cfg = RunConfig {
            partner: PartnerSpec::of_kind(PartnerKind::Frozen),
            ..tiny(6)
        };
        let t = Trainer::new(cfg).unwrap();
        let setup = t.eval_setup();
        let mut still = crate::harness::FnController(|_: &Observation, _| 0.0);
        for o in setup.evaluate(&mut still, 5, 1, &mut NoHooks).unwrap() {
            assert_eq!(o.score.score, 0);
            assert!(!o.score.reached);
            assert_eq!(o.steps.len(), 200);
            let first = o.steps[0].obs;
            assert!(o.steps.iter().all(|s| s.next_obs == first));
        }
    }

    #[test]
    fn outputs_written_and_replayable() {
        let dir = tempfile::tempdir().unwrap();
        let mut t = Trainer::new(tiny(7)).unwrap();
        t.run_to_dir(dir.path(), &mut NoHooks).unwrap();
        for f in [LOG_FILE, TRACES_FILE, CHECKPOINT_FILE, CONFIG_FILE, "ckpt-block-3.bin"] {
            assert!(dir.path().join(f).exists(), "{f}");
        }
        let log = RunLog::read(&dir.path().join(LOG_FILE)).unwrap();
        assert_eq!(&log, t.log());
        for rec in log.trials() {
            let tr = replay(dir.path(), rec.trial_id).unwrap();
            assert!(tr.steps.len() <= 200);
            let sum: f64 = tr.steps.iter().map(|s| s.reward).sum();
            assert_eq!(sum, rec.total_return);
            let env = EnvConfig {
                seed: 0,
                ..t.config().env
            };
            assert!(resimulate(&tr, t.layout(), &t.config().phys, &env).unwrap());
        }
        assert!(matches!(
            replay(dir.path(), 999),
            Err(HarnessError::UnknownTrial(999))
        ));
    }
}
