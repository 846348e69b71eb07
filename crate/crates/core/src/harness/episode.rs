use std::sync::Arc;

use serde::{Deserialize, Serialize};

use super::trainer::{RunHooks, StepInfo};
use super::{HarnessError, TrialScore};
use crate::env::{EnvConfig, Observation, TrayEnv, OBS_DIM};
use crate::partner::{CommandSource, Partner, PartnerSpec};
use crate::rng::{derive_seed, seeded};
use crate::sac::SacAgent;
use crate::sim::{PhysConfig, PhysState, TrayLayout};

/// Agent-axis policy used for evaluation episodes.
pub trait Controller {
    fn act(&mut self, obs: &Observation, now: f64) -> f64;
}

/// The agent's mean action, `tanh(mean)`.
pub struct GreedyPolicy<'a>(pub &'a SacAgent);

impl Controller for GreedyPolicy<'_> {
    fn act(&mut self, obs: &Observation, _now: f64) -> f64 {
        self.0.head(obs).mean_action()
    }
}

pub struct FnController<F>(pub F);

impl<F: FnMut(&Observation, f64) -> f64> Controller for FnController<F> {
    fn act(&mut self, obs: &Observation, now: f64) -> f64 {
        (self.0)(obs, now)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TraceStep {
    pub obs: [f64; OBS_DIM],
    pub agent_action: f64,
    pub partner_action: f64,
    pub reward: f64,
    pub next_obs: [f64; OBS_DIM],
    pub done: bool,
}

/// Per-step record of one evaluation episode, enough to re-simulate it.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct TrialTrace {
    pub trial_id: u64,
    pub block: usize,
    pub seed: u64,
    pub start: PhysState,
    pub steps: Vec<TraceStep>,
    pub total_return: f64,
}

#[derive(Debug, Clone, PartialEq)]
pub struct EpisodeOutcome {
    pub score: TrialScore,
    pub start: PhysState,
    pub steps: Vec<TraceStep>,
    pub total_return: f64,
}

/// Plays one episode from the environment's current (freshly reset) state.
pub fn run_episode(
    env: &mut TrayEnv,
    controller: &mut dyn Controller,
    partner: &mut Partner,
    hooks: &mut dyn RunHooks,
) -> Result<EpisodeOutcome, HarnessError> {
    partner.reset();
    let start = *env.state();
    let mut obs = env.observe();
    let mut steps = Vec::new();
    let mut total_return = 0.0;
    loop {
        hooks.before_step(env)?;
        let now = env.now();
        let a = controller.act(&obs, now);
        let p = partner.act(&obs, now)?;
        let r = env.step(a, p)?;
        total_return += r.reward;
        steps.push(TraceStep {
            obs: obs.0,
            agent_action: a,
            partner_action: p,
            reward: r.reward,
            next_obs: r.obs.0,
            done: r.done,
        });
        hooks.after_step(
            env,
            &StepInfo {
                agent_action: a,
                partner_action: p,
                reward: r.reward,
                done: r.done,
                reached_goal: r.reached_goal,
            },
        );
        obs = r.obs;
        if r.done {
            let score = TrialScore::new(r.reached_goal, r.steps_elapsed, env.config().step_cap)?;
            return Ok(EpisodeOutcome {
                score,
                start,
                steps,
                total_return,
            });
        }
    }
}

/// Fixed world for evaluation episodes.
#[derive(Debug, Clone)]
pub struct EvalSetup {
    pub layout: TrayLayout,
    pub phys: PhysConfig,
    pub env: EnvConfig,
    pub partner: PartnerSpec,
    pub source: Option<Arc<dyn CommandSource>>,
}

impl EvalSetup {
    pub fn new(layout: TrayLayout, phys: PhysConfig, env: EnvConfig, partner: PartnerSpec) -> Self {
        Self {
            layout,
            phys,
            env,
            partner,
            source: None,
        }
    }

    /// Seed for trial `k` of an evaluation seeded with `seed`.
    pub fn trial_seed(seed: u64, k: usize) -> u64 {
        derive_seed(seed, &[k as u64])
    }

    /// Plays one evaluation episode. Start position and partner noise come
    /// only from `trial_seed`, so the outcome does not depend on what ran
    /// before.
    pub fn trial(
        &self,
        controller: &mut dyn Controller,
        trial_seed: u64,
        hooks: &mut dyn RunHooks,
    ) -> Result<EpisodeOutcome, HarnessError> {
        let mut env = TrayEnv::new(self.layout.clone(), self.phys, self.env)?;
        env.set_record_substeps(hooks.wants_substeps());
        env.reset_with(&mut seeded(derive_seed(trial_seed, &[0])));
        let spec = PartnerSpec {
            seed: derive_seed(trial_seed, &[1, self.partner.seed]),
            ..self.partner
        };
        let mut partner = Partner::new(spec, self.env.agent_axis.other(), &self.layout, &self.phys, &self.env)?;
        if let Some(src) = &self.source {
            partner = partner.with_source(src.clone());
        }
        hooks.before_episode()?;
        run_episode(&mut env, controller, &mut partner, hooks)
    }

    pub fn evaluate(
        &self,
        controller: &mut dyn Controller,
        n_trials: usize,
        seed: u64,
        hooks: &mut dyn RunHooks,
    ) -> Result<Vec<EpisodeOutcome>, HarnessError> {
        (0..n_trials)
            .map(|k| self.trial(controller, Self::trial_seed(seed, k), hooks))
            .collect()
    }
}

/// Deterministic evaluation of `agent`: per-trial scores.
pub fn evaluate(
    agent: &SacAgent,
    setup: &EvalSetup,
    n_trials: usize,
    seed: u64,
) -> Result<Vec<TrialScore>, HarnessError> {
    let mut hooks = super::NoHooks;
    Ok(setup
        .evaluate(&mut GreedyPolicy(agent), n_trials, seed, &mut hooks)?
        .into_iter()
        .map(|o| o.score)
        .collect())
}
