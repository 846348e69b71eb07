//! Soft Actor-Critic with twin critics, Polyak-averaged target critics and
//! automatic temperature tuning.
//!
//! Per update, on a uniformly sampled batch:
//!
//! 1. critic target `y = r + gamma * (1 - done) * (min(Q1', Q2')(s', a') - alpha * log pi(a'|s'))`
//!    with `a'` freshly sampled from the current policy;
//! 2. one Adam step on each critic towards `y` (mean squared error);
//! 3. one Adam step on the policy for `alpha * log pi(a|s) - min(Q1, Q2)(s, a)`
//!    with reparameterized `a`;
//! 4. one Adam step on `log_alpha` for `-log_alpha * (log pi(a|s) + target_entropy)`
//!    (log-probabilities detached);
//! 5. Polyak update of both target critics.

mod replay;

use ndarray::{Array2, ArrayView2};
use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::env::{Observation, OBS_DIM};
use crate::nn::{
    squash_sample, tanh_correction_grad, AdamConfig, AdamState, GaussianHead, Mlp, SquashedSample,
    LOG_STD_MAX, LOG_STD_MIN,
};

pub use replay::{ReplayBuffer, Transition};

#[derive(Debug, Error, PartialEq)]
pub enum SacError {
    #[error("replay buffer holds {have} transitions, batch needs {need}")]
    InsufficientData { have: usize, need: usize },
    #[error("invalid sac config: {0}")]
    InvalidConfig(String),
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SacConfig {
    pub gamma: f64,
    pub tau: f64,
    pub batch_size: usize,
    pub replay_capacity: usize,
    pub target_entropy: f64,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub alpha_lr: f64,
    pub initial_alpha: f64,
    /// Width of both hidden layers in every network.
    pub hidden: usize,
    /// Environment steps with uniform random actions before the policy acts.
    pub random_steps: usize,
    pub seed: u64,
}

impl Default for SacConfig {
    fn default() -> Self {
        Self {
            gamma: 0.99,
            tau: 0.005,
            batch_size: 128,
            replay_capacity: 100_000,
            target_entropy: -1.0,
            actor_lr: 3e-4,
            critic_lr: 3e-4,
            alpha_lr: 3e-4,
            initial_alpha: 1.0,
            hidden: 64,
            random_steps: 300,
            seed: 0,
        }
    }
}

impl SacConfig {
    pub fn validate(&self) -> Result<(), SacError> {
        let bad = |m: &str| Err(SacError::InvalidConfig(m.to_string()));
        if !(self.gamma > 0.0 && self.gamma < 1.0) && self.gamma != 0.0 {
            return bad("gamma must lie in [0, 1)");
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return bad("tau must lie in (0, 1]");
        }
        if self.batch_size < 1 || self.replay_capacity < 1 || self.hidden < 1 {
            return bad("batch_size, replay_capacity and hidden must be positive");
        }
        if !(self.initial_alpha > 0.0) {
            return bad("initial_alpha must be positive");
        }
        if !(self.actor_lr > 0.0 && self.critic_lr > 0.0 && self.alpha_lr > 0.0) {
            return bad("learning rates must be positive");
        }
        Ok(())
    }

    fn adam(&self, lr: f64) -> AdamConfig {
        AdamConfig {
            lr,
            ..AdamConfig::default()
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ActionMode {
    Stochastic,
    Deterministic,
}

/// Learned temperature: `alpha = exp(log_alpha)`.
#[derive(Debug, Clone, PartialEq)]
pub struct TemperatureState {
    pub log_alpha: f64,
    pub target_entropy: f64,
    opt: AdamState,
}

impl TemperatureState {
    pub fn alpha(&self) -> f64 {
        self.log_alpha.exp()
    }

    /// d/d(log_alpha) of `-log_alpha * mean(log_prob + target_entropy)`.
    pub fn loss_grad(&self, log_probs: &[f64]) -> f64 {
        let n = log_probs.len() as f64;
        -log_probs.iter().map(|lp| lp + self.target_entropy).sum::<f64>() / n
    }

    /// One Adam step; returns the loss before the step.
    pub fn update(&mut self, log_probs: &[f64]) -> f64 {
        let grad = self.loss_grad(log_probs);
        let loss = self.log_alpha * grad;
        let mut p = [self.log_alpha];
        self.opt.step(&mut p, &[grad]);
        self.log_alpha = p[0];
        loss
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct LossReport {
    pub q1_loss: f64,
    pub q2_loss: f64,
    pub policy_loss: f64,
    pub alpha_loss: f64,
    pub alpha: f64,
    pub entropy: f64,
}

/// A sampled minibatch laid out for batched network passes.
#[derive(Debug, Clone)]
pub struct Batch {
    pub states: Array2<f64>,
    pub actions: Vec<f64>,
    pub rewards: Vec<f64>,
    pub next_states: Array2<f64>,
    pub dones: Vec<bool>,
}

impl Batch {
    pub fn from_transitions<'a>(items: impl IntoIterator<Item = &'a Transition>) -> Self {
        let items: Vec<&Transition> = items.into_iter().collect();
        let n = items.len();
        let mut states = Array2::zeros((n, OBS_DIM));
        let mut next_states = Array2::zeros((n, OBS_DIM));
        for (i, t) in items.iter().enumerate() {
            for j in 0..OBS_DIM {
                states[[i, j]] = t.s.0[j];
                next_states[[i, j]] = t.s_next.0[j];
            }
        }
        Self {
            states,
            actions: items.iter().map(|t| t.a).collect(),
            rewards: items.iter().map(|t| t.r).collect(),
            next_states,
            dones: items.iter().map(|t| t.done).collect(),
        }
    }

    pub fn len(&self) -> usize {
        self.actions.len()
    }

    pub fn is_empty(&self) -> bool {
        self.actions.is_empty()
    }
}

/// Policy objective on a batch with fixed noise, with its parameter gradient.
#[derive(Debug, Clone)]
pub struct PolicyObjective {
    pub loss: f64,
    pub grads: Vec<f64>,
    pub log_probs: Vec<f64>,
    /// Per row: whether Q1 was the smaller critic.
    pub used_q1: Vec<bool>,
}

fn with_action(states: ArrayView2<'_, f64>, actions: &[f64]) -> Array2<f64> {
    let (n, d) = states.dim();
    let mut x = Array2::zeros((n, d + 1));
    x.slice_mut(ndarray::s![.., ..d]).assign(&states);
    for (i, &a) in actions.iter().enumerate() {
        x[[i, d]] = a;
    }
    x
}

fn draw_noise<R: Rng + ?Sized>(n: usize, rng: &mut R) -> Vec<f64> {
    (0..n).map(|_| rng.sample(StandardNormal)).collect()
}

#[derive(Debug, Clone, PartialEq)]
pub struct SacAgent {
    cfg: SacConfig,
    pub policy: Mlp,
    pub q1: Mlp,
    pub q2: Mlp,
    pub q1_target: Mlp,
    pub q2_target: Mlp,
    policy_opt: AdamState,
    q1_opt: AdamState,
    q2_opt: AdamState,
    pub temperature: TemperatureState,
}

const SAC_MAGIC: &[u8; 8] = b"TRAYSAC\0";
const SAC_VERSION: u32 = 1;

impl SacAgent {
    pub fn new<R: Rng + ?Sized>(cfg: SacConfig, rng: &mut R) -> Result<Self, SacError> {
        cfg.validate()?;
        let h = cfg.hidden;
        let policy = Mlp::new(&[OBS_DIM, h, h, 2], rng);
        let q1 = Mlp::new(&[OBS_DIM + 1, h, h, 1], rng);
        let q2 = Mlp::new(&[OBS_DIM + 1, h, h, 1], rng);
        Ok(Self {
            policy_opt: AdamState::new(policy.n_params(), cfg.adam(cfg.actor_lr)),
            q1_opt: AdamState::new(q1.n_params(), cfg.adam(cfg.critic_lr)),
            q2_opt: AdamState::new(q2.n_params(), cfg.adam(cfg.critic_lr)),
            q1_target: q1.clone(),
            q2_target: q2.clone(),
            policy,
            q1,
            q2,
            temperature: TemperatureState {
                log_alpha: cfg.initial_alpha.ln(),
                target_entropy: cfg.target_entropy,
                opt: AdamState::new(1, cfg.adam(cfg.alpha_lr)),
            },
            cfg,
        })
    }

    pub fn config(&self) -> &SacConfig {
        &self.cfg
    }

    pub fn alpha(&self) -> f64 {
        self.temperature.alpha()
    }

    pub fn head(&self, obs: &Observation) -> GaussianHead {
        let out = self.policy.forward(obs.as_slice()).expect("policy input is 6-D");
        GaussianHead::new(out[0], out[1])
    }

    pub fn select_action<R: Rng + ?Sized>(
        &self,
        obs: &Observation,
        mode: ActionMode,
        rng: &mut R,
    ) -> f64 {
        let head = self.head(obs);
        match mode {
            ActionMode::Deterministic => head.mean_action(),
            ActionMode::Stochastic => squash_sample(head, rng.sample(StandardNormal)).action,
        }
    }

    fn heads(out: &Array2<f64>) -> Vec<GaussianHead> {
        out.rows()
            .into_iter()
            .map(|r| GaussianHead::new(r[0], r[1]))
            .collect()
    }

    fn sample_batch(&self, states: ArrayView2<'_, f64>, noise: &[f64]) -> Vec<SquashedSample> {
        let acts = self.policy.forward_batch(states).expect("policy input");
        Self::heads(acts.output())
            .into_iter()
            .zip(noise)
            .map(|(h, &e)| squash_sample(h, e))
            .collect()
    }

    /// Mean of `-log pi(a|s)` over one fresh squashed sample per row.
    pub fn entropy_estimate<R: Rng + ?Sized>(&self, states: ArrayView2<'_, f64>, rng: &mut R) -> f64 {
        assert!(states.nrows() > 0, "entropy of an empty batch");
        let noise = draw_noise(states.nrows(), rng);
        let samples = self.sample_batch(states, &noise);
        -samples.iter().map(|s| s.log_prob).sum::<f64>() / samples.len() as f64
    }

    /// Same estimate for the Gaussian before the tanh squash.
    pub fn latent_entropy_estimate<R: Rng + ?Sized>(
        &self,
        states: ArrayView2<'_, f64>,
        rng: &mut R,
    ) -> f64 {
        let noise = draw_noise(states.nrows(), rng);
        let acts = self.policy.forward_batch(states).expect("policy input");
        let heads = Self::heads(acts.output());
        heads
            .iter()
            .zip(&noise)
            .map(|(h, e)| 0.5 * e * e + h.log_std + 0.5 * (std::f64::consts::TAU).ln())
            .sum::<f64>()
            / heads.len() as f64
    }

    /// Bootstrapped critic targets for a batch.
    pub fn critic_targets(&self, batch: &Batch, noise: &[f64]) -> Vec<f64> {
        let alpha = self.alpha();
        let samples = self.sample_batch(batch.next_states.view(), noise);
        let next_actions: Vec<f64> = samples.iter().map(|s| s.action).collect();
        let x = with_action(batch.next_states.view(), &next_actions);
        let t1 = self.q1_target.forward_batch(x.view()).expect("critic input");
        let t2 = self.q2_target.forward_batch(x.view()).expect("critic input");
        (0..batch.len())
            .map(|i| {
                let soft_v =
                    t1.output()[[i, 0]].min(t2.output()[[i, 0]]) - alpha * samples[i].log_prob;
                let cont = if batch.dones[i] { 0.0 } else { 1.0 };
                batch.rewards[i] + self.cfg.gamma * cont * soft_v
            })
            .collect()
    }

    fn critic_step(net: &mut Mlp, opt: &mut AdamState, x: ArrayView2<'_, f64>, y: &[f64]) -> f64 {
        let n = y.len() as f64;
        let acts = net.forward_batch(x).expect("critic input");
        let q = acts.output();
        let mut og = Array2::zeros((y.len(), 1));
        let mut loss = 0.0;
        for i in 0..y.len() {
            let d = q[[i, 0]] - y[i];
            loss += d * d;
            og[[i, 0]] = 2.0 * d / n;
        }
        let mut grads = vec![0.0; net.n_params()];
        net.backward_batch(&acts, og.view(), Some(&mut grads), false)
            .expect("critic backward");
        opt.step(net.params_mut(), &grads);
        loss / n
    }

    /// One Adam step on each critic towards `targets`; returns both losses.
    pub fn update_critics(&mut self, batch: &Batch, targets: &[f64]) -> (f64, f64) {
        let x = with_action(batch.states.view(), &batch.actions);
        let l1 = Self::critic_step(&mut self.q1, &mut self.q1_opt, x.view(), targets);
        let l2 = Self::critic_step(&mut self.q2, &mut self.q2_opt, x.view(), targets);
        (l1, l2)
    }

    /// Evaluates `mean(alpha * log pi(a|s) - min(Q1, Q2)(s, a))` with
    /// `a = tanh(mean + std * noise)` and its gradient w.r.t. the policy
    /// parameters.
    pub fn policy_objective(&self, states: ArrayView2<'_, f64>, noise: &[f64]) -> PolicyObjective {
        let n = states.nrows();
        let nf = n as f64;
        let alpha = self.alpha();
        let pacts = self.policy.forward_batch(states).expect("policy input");
        let raw = pacts.output();
        let heads = Self::heads(raw);
        let samples: Vec<SquashedSample> = heads
            .iter()
            .zip(noise)
            .map(|(h, &e)| squash_sample(*h, e))
            .collect();
        let actions: Vec<f64> = samples.iter().map(|s| s.action).collect();
        let x = with_action(states, &actions);
        let a1 = self.q1.forward_batch(x.view()).expect("critic input");
        let a2 = self.q2.forward_batch(x.view()).expect("critic input");

        let mut og1 = Array2::zeros((n, 1));
        let mut og2 = Array2::zeros((n, 1));
        let mut used_q1 = Vec::with_capacity(n);
        let mut loss = 0.0;
        for i in 0..n {
            let (q1, q2) = (a1.output()[[i, 0]], a2.output()[[i, 0]]);
            let first = q1 <= q2;
            used_q1.push(first);
            if first {
                og1[[i, 0]] = -1.0 / nf;
            } else {
                og2[[i, 0]] = -1.0 / nf;
            }
            loss += alpha * samples[i].log_prob - q1.min(q2);
        }
        let d1 = self
            .q1
            .backward_batch(&a1, og1.view(), None, true)
            .expect("critic backward")
            .unwrap();
        let d2 = self
            .q2
            .backward_batch(&a2, og2.view(), None, true)
            .expect("critic backward")
            .unwrap();

        let mut head_grad = Array2::zeros((n, 2));
        for i in 0..n {
            let s = &samples[i];
            let dq_da = d1[[i, OBS_DIM]] + d2[[i, OBS_DIM]];
            let du = alpha / nf * tanh_correction_grad(s.action) + dq_da * (1.0 - s.action * s.action);
            head_grad[[i, 0]] = du;
            let raw_ls = raw[[i, 1]];
            if (LOG_STD_MIN..=LOG_STD_MAX).contains(&raw_ls) {
                head_grad[[i, 1]] = -alpha / nf + du * heads[i].std() * noise[i];
            }
        }
        let mut grads = vec![0.0; self.policy.n_params()];
        self.policy
            .backward_batch(&pacts, head_grad.view(), Some(&mut grads), false)
            .expect("policy backward");
        PolicyObjective {
            loss: loss / nf,
            grads,
            log_probs: samples.iter().map(|s| s.log_prob).collect(),
            used_q1,
        }
    }

    /// `Q' <- (1 - tau) Q' + tau Q` for both critics.
    pub fn soft_update_targets(&mut self) {
        self.q1_target.soft_update_from(&self.q1, self.cfg.tau);
        self.q2_target.soft_update_from(&self.q2, self.cfg.tau);
    }

    /// One full gradient update from a uniformly sampled batch. The buffer is
    /// only read.
    pub fn update<R: Rng + ?Sized>(
        &mut self,
        buffer: &ReplayBuffer,
        rng: &mut R,
    ) -> Result<LossReport, SacError> {
        let need = self.cfg.batch_size;
        if buffer.len() < need {
            return Err(SacError::InsufficientData {
                have: buffer.len(),
                need,
            });
        }
        let idx = buffer.sample_indices(need, rng);
        let batch = Batch::from_transitions(idx.iter().map(|&i| buffer.get(i).unwrap()));
        Ok(self.update_on_batch(&batch, rng))
    }

    pub fn update_on_batch<R: Rng + ?Sized>(&mut self, batch: &Batch, rng: &mut R) -> LossReport {
        let n = batch.len();
        let target_noise = draw_noise(n, rng);
        let targets = self.critic_targets(batch, &target_noise);
        let (q1_loss, q2_loss) = self.update_critics(batch, &targets);

        let policy_noise = draw_noise(n, rng);
        let obj = self.policy_objective(batch.states.view(), &policy_noise);
        self.policy_opt.step(self.policy.params_mut(), &obj.grads);

        let alpha_loss = self.temperature.update(&obj.log_probs);
        self.soft_update_targets();

        LossReport {
            q1_loss,
            q2_loss,
            policy_loss: obj.loss,
            alpha_loss,
            alpha: self.alpha(),
            entropy: -obj.log_probs.iter().sum::<f64>() / n as f64,
        }
    }

    pub fn encode(&self, enc: &mut Encoder) {
        enc.magic(SAC_MAGIC, SAC_VERSION);
        let c = &self.cfg;
        for v in [
            c.gamma,
            c.tau,
            c.target_entropy,
            c.actor_lr,
            c.critic_lr,
            c.alpha_lr,
            c.initial_alpha,
        ] {
            enc.f64(v);
        }
        for v in [c.batch_size, c.replay_capacity, c.hidden, c.random_steps] {
            enc.usize(v);
        }
        enc.u64(c.seed);
        for net in [
            &self.policy,
            &self.q1,
            &self.q2,
            &self.q1_target,
            &self.q2_target,
        ] {
            net.encode(enc);
        }
        for opt in [&self.policy_opt, &self.q1_opt, &self.q2_opt] {
            opt.encode(enc);
        }
        enc.f64(self.temperature.log_alpha);
        enc.f64(self.temperature.target_entropy);
        self.temperature.opt.encode(enc);
    }

    pub fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        dec.expect_version(SAC_MAGIC, "sac agent", SAC_VERSION)?;
        let mut f = [0.0; 7];
        for v in &mut f {
            *v = dec.f64()?;
        }
        let mut u = [0usize; 4];
        for v in &mut u {
            *v = dec.usize()?;
        }
        let cfg = SacConfig {
            gamma: f[0],
            tau: f[1],
            target_entropy: f[2],
            actor_lr: f[3],
            critic_lr: f[4],
            alpha_lr: f[5],
            initial_alpha: f[6],
            batch_size: u[0],
            replay_capacity: u[1],
            hidden: u[2],
            random_steps: u[3],
            seed: dec.u64()?,
        };
        let policy = Mlp::decode(dec)?;
        let q1 = Mlp::decode(dec)?;
        let q2 = Mlp::decode(dec)?;
        let q1_target = Mlp::decode(dec)?;
        let q2_target = Mlp::decode(dec)?;
        let policy_opt = AdamState::decode(dec)?;
        let q1_opt = AdamState::decode(dec)?;
        let q2_opt = AdamState::decode(dec)?;
        let log_alpha = dec.f64()?;
        let target_entropy = dec.f64()?;
        let alpha_opt = AdamState::decode(dec)?;

        let shapes_ok = policy.sizes() == [OBS_DIM, cfg.hidden, cfg.hidden, 2]
            && [&q1, &q2, &q1_target, &q2_target]
                .iter()
                .all(|q| q.sizes() == [OBS_DIM + 1, cfg.hidden, cfg.hidden, 1])
            && policy_opt.len() == policy.n_params()
            && q1_opt.len() == q1.n_params()
            && q2_opt.len() == q2.n_params()
            && alpha_opt.len() == 1;
        if !shapes_ok {
            return Err(CodecError::Invalid(
                "network shapes do not match the agent config".into(),
            ));
        }
        Ok(Self {
            cfg,
            policy,
            q1,
            q2,
            q1_target,
            q2_target,
            policy_opt,
            q1_opt,
            q2_opt,
            temperature: TemperatureState {
                log_alpha,
                target_entropy,
                opt: alpha_opt,
            },
        })
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::rng::seeded;

    fn small_cfg() -> SacConfig {
        SacConfig {
            hidden: 16,
            batch_size: 8,
            ..Default::default()
        }
    }

    fn random_obs<R: Rng>(rng: &mut R) -> Observation {
        let mut o = [0.0; 6];
        for v in &mut o {
            *v = rng.random_range(-1.0..1.0);
        }
        Observation(o)
    }

    fn random_batch<R: Rng>(n: usize, rng: &mut R) -> Batch {
        let items: Vec<Transition> = (0..n)
            .map(|_| Transition {
                s: random_obs(rng),
                a: rng.random_range(-1.0..1.0),
                r: if rng.random_bool(0.1) { 10.0 } else { -1.0 },
                s_next: random_obs(rng),
                done: rng.random_bool(0.1),
            })
            .collect();
        Batch::from_transitions(&items)
    }

    #[test]
    fn deterministic_action_is_repeatable() {
        let mut rng = seeded(1);
        let agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        let obs = random_obs(&mut rng);
        let a = agent.select_action(&obs, ActionMode::Deterministic, &mut rng);
        let b = agent.select_action(&obs, ActionMode::Deterministic, &mut rng);
        assert_eq!(a, b);
        assert_eq!(a, agent.head(&obs).mean.tanh());
    }

    #[test]
    fn stochastic_actions_reproducible_with_seed() {
        let agent = SacAgent::new(small_cfg(), &mut seeded(1)).unwrap();
        let obs = Observation([0.1; 6]);
        let draw = |seed| {
            let mut r = seeded(seed);
            (0..20)
                .map(|_| agent.select_action(&obs, ActionMode::Stochastic, &mut r))
                .collect::<Vec<_>>()
        };
        assert_eq!(draw(5), draw(5));
        assert_ne!(draw(5), draw(6));
    }

    #[test]
    fn fresh_policy_explores() {
        let agent = SacAgent::new(SacConfig::default(), &mut seeded(3)).unwrap();
        let obs = Observation([0.2, -0.4, 0.0, 0.1, 0.0, 0.3]);
        let mut rng = seeded(4);
        let acts: Vec<f64> = (0..1000)
            .map(|_| agent.select_action(&obs, ActionMode::Stochastic, &mut rng))
            .collect();
        let mean = acts.iter().sum::<f64>() / 1000.0;
        let var = acts.iter().map(|a| (a - mean).powi(2)).sum::<f64>() / 999.0;
        assert!(var.sqrt() > 0.1, "std {}", var.sqrt());
    }

    #[test]
    fn insufficient_buffer_is_an_error() {
        let mut rng = seeded(1);
        let mut agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        let buffer = ReplayBuffer::new(10);
        assert_eq!(
            agent.update(&buffer, &mut rng).unwrap_err(),
            SacError::InsufficientData { have: 0, need: 8 }
        );
    }

    #[test]
    fn terminal_targets_equal_reward_when_gamma_zero() {
        let cfg = SacConfig {
            gamma: 0.0,
            ..small_cfg()
        };
        let mut rng = seeded(7);
        let agent = SacAgent::new(cfg, &mut rng).unwrap();
        let mut batch = random_batch(8, &mut rng);
        batch.dones = vec![true; 8];
        let y = agent.critic_targets(&batch, &[0.3; 8]);
        assert_eq!(y, batch.rewards);
    }

    #[test]
    fn degenerate_target_is_fit() {
        let cfg = SacConfig {
            gamma: 0.0,
            critic_lr: 3e-3,
            ..small_cfg()
        };
        let mut rng = seeded(8);
        let mut agent = SacAgent::new(cfg, &mut rng).unwrap();
        let mut batch = random_batch(8, &mut rng);
        batch.dones = vec![true; 8];
        let mut last = (f64::INFINITY, f64::INFINITY);
        for _ in 0..3000 {
            let y = agent.critic_targets(&batch, &draw_noise(8, &mut rng));
            last = agent.update_critics(&batch, &y);
        }
        assert!(last.0 < 1e-3 && last.1 < 1e-3, "{last:?}");
    }

    #[test]
    fn tau_one_copies_online_critics() {
        let cfg = SacConfig {
            tau: 1.0,
            ..small_cfg()
        };
        let mut rng = seeded(9);
        let mut agent = SacAgent::new(cfg, &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(64);
        let b = random_batch(32, &mut rng);
        for i in 0..32 {
            buffer.store(Transition {
                s: Observation(b.states.row(i).to_vec().try_into().unwrap()),
                a: b.actions[i],
                r: b.rewards[i],
                s_next: Observation(b.next_states.row(i).to_vec().try_into().unwrap()),
                done: b.dones[i],
            });
        }
        agent.update(&buffer, &mut rng).unwrap();
        assert_eq!(agent.q1_target, agent.q1);
        assert_eq!(agent.q2_target, agent.q2);
    }

    #[test]
    fn target_lag_shrinks() {
        let mut rng = seeded(10);
        let mut agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        agent.q1 = Mlp::new(agent.q1.sizes(), &mut rng);
        let dist = |a: &SacAgent| -> f64 {
            a.q1.params()
                .iter()
                .zip(a.q1_target.params())
                .map(|(x, y)| (x - y).powi(2))
                .sum::<f64>()
                .sqrt()
        };
        let before = dist(&agent);
        agent.soft_update_targets();
        let after = dist(&agent);
        assert!(after < before);
        assert!((after - (1.0 - agent.config().tau) * before).abs() < 1e-12 * before);
    }

    #[test]
    fn temperature_gradient_sign() {
        let mut rng = seeded(11);
        let agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        let t = &agent.temperature;
        // entropy estimate = -mean(log_prob); target -1
        let low_entropy = [3.0, 2.5, 4.0]; // entropy -3.17 < -1
        let high_entropy = [-0.5, -1.0, 0.2]; // entropy 0.43 > -1
        assert!(t.loss_grad(&low_entropy) < 0.0, "descent must raise log_alpha");
        assert!(t.loss_grad(&high_entropy) > 0.0, "descent must lower log_alpha");

        let mut t1 = t.clone();
        t1.update(&low_entropy);
        assert!(t1.log_alpha > t.log_alpha);
        let mut t2 = t.clone();
        t2.update(&high_entropy);
        assert!(t2.log_alpha < t.log_alpha);
    }

    #[test]
    fn alpha_stays_positive_under_extreme_gradients() {
        let mut rng = seeded(12);
        let mut agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        for k in 0..100_000 {
            let lp = if k % 7 < 6 { -1e12 } else { 1e12 };
            agent.temperature.update(&[lp]);
            assert!(agent.alpha() > 0.0);
        }
    }

    #[test]
    fn policy_loss_uses_smaller_critic() {
        let mut rng = seeded(13);
        let mut agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        let batch = random_batch(8, &mut rng);
        let noise = draw_noise(8, &mut rng);
        // Q2 = Q1 + 1 by shifting the output bias
        agent.q2 = agent.q1.clone();
        *agent.q2.params_mut().last_mut().unwrap() += 1.0;
        let a = agent.policy_objective(batch.states.view(), &noise);
        assert!(a.used_q1.iter().all(|&u| u));
        // Q2 = Q1 - 1
        *agent.q2.params_mut().last_mut().unwrap() -= 2.0;
        let b = agent.policy_objective(batch.states.view(), &noise);
        assert!(b.used_q1.iter().all(|&u| !u));
        // min picks the lower critic: loss rises by exactly 1
        assert!((b.loss - a.loss - 1.0).abs() < 1e-12, "{} {}", a.loss, b.loss);
    }

    #[test]
    fn policy_gradient_matches_finite_differences() {
        let mut rng = seeded(14);
        let cfg = SacConfig {
            hidden: 6,
            initial_alpha: 0.7,
            ..small_cfg()
        };
        let mut agent = SacAgent::new(cfg, &mut rng).unwrap();
        // distinct critics so the min is not at a tie
        agent.q2 = Mlp::new(agent.q2.sizes(), &mut rng);
        let batch = random_batch(5, &mut rng);
        let noise = draw_noise(5, &mut rng);
        let obj = agent.policy_objective(batch.states.view(), &noise);
        let h = 1e-6;
        for k in 0..agent.policy.n_params() {
            let mut plus = agent.clone();
            plus.policy.params_mut()[k] += h;
            let mut minus = agent.clone();
            minus.policy.params_mut()[k] -= h;
            let lp = plus.policy_objective(batch.states.view(), &noise).loss;
            let lm = minus.policy_objective(batch.states.view(), &noise).loss;
            let fd = (lp - lm) / (2.0 * h);
            let an = obj.grads[k];
            assert!(
                (fd - an).abs() <= 1e-6 + 1e-4 * fd.abs().max(an.abs()),
                "param {k}: fd {fd} analytic {an}"
            );
        }
    }

    #[test]
    fn update_does_not_touch_buffer_and_is_reproducible() {
        let mut rng = seeded(15);
        let agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        let mut buffer = ReplayBuffer::new(100);
        let b = random_batch(50, &mut rng);
        for i in 0..50 {
            buffer.store(Transition {
                s: Observation(b.states.row(i).to_vec().try_into().unwrap()),
                a: b.actions[i],
                r: b.rewards[i],
                s_next: Observation(b.next_states.row(i).to_vec().try_into().unwrap()),
                done: b.dones[i],
            });
        }
        let snapshot = buffer.clone();
        let run = |seed| {
            let mut a = agent.clone();
            let mut r = seeded(seed);
            (0..5)
                .map(|_| a.update(&buffer, &mut r).unwrap())
                .collect::<Vec<_>>()
        };
        assert_eq!(run(99), run(99));
        assert_eq!(buffer, snapshot);
    }

    #[test]
    fn entropy_bounds() {
        let mut rng = seeded(16);
        let mut agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        let states = random_batch(64, &mut rng).states;
        // zero the policy and set the log_std output bias
        let set_log_std = |agent: &mut SacAgent, v: f64| {
            let n = agent.policy.n_params();
            let p = agent.policy.params_mut();
            p.iter_mut().for_each(|x| *x = 0.0);
            p[n - 1] = v;
        };
        set_log_std(&mut agent, LOG_STD_MIN);
        assert!(agent.entropy_estimate(states.view(), &mut rng) < -4.0);
        assert!(agent.latent_entropy_estimate(states.view(), &mut rng) < -4.0);
        set_log_std(&mut agent, 2.0);
        assert!(agent.latent_entropy_estimate(states.view(), &mut rng) > 1.0);
        // squashing onto (-1, 1) can only lose entropy
        assert!(
            agent.entropy_estimate(states.view(), &mut rng)
                < agent.latent_entropy_estimate(states.view(), &mut rng)
        );
    }

    #[test]
    fn identical_rows_match_single_estimate() {
        let mut rng = seeded(17);
        let agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        let obs = random_obs(&mut rng);
        let mut many = Array2::zeros((4000, OBS_DIM));
        for mut row in many.rows_mut() {
            row.assign(&ndarray::ArrayView1::from(&obs.0));
        }
        let batch_est = agent.entropy_estimate(many.view(), &mut rng);
        let single = ArrayView2::from_shape((1, OBS_DIM), &obs.0).unwrap();
        let singles: f64 = (0..4000)
            .map(|_| agent.entropy_estimate(single, &mut rng))
            .sum::<f64>()
            / 4000.0;
        assert!((batch_est - singles).abs() < 0.1, "{batch_est} vs {singles}");
    }

    #[test]
    fn codec_round_trip() {
        let mut rng = seeded(18);
        let mut agent = SacAgent::new(small_cfg(), &mut rng).unwrap();
        let batch = random_batch(8, &mut rng);
        agent.update_on_batch(&batch, &mut rng);
        let mut enc = Encoder::new();
        agent.encode(&mut enc);
        let bytes = enc.into_bytes();
        let back = SacAgent::decode(&mut Decoder::new(&bytes)).unwrap();
        assert_eq!(back, agent);
    }
}
