//! Episodic environment over the tray simulation.
//!
//! One interaction step holds both axis commands for `control_interval`
//! seconds. The agent drives one tilt axis, the partner the other. Reward is
//! -1 per step and +10 on the step the ball enters the goal, which ends the
//! episode immediately.

use rand::Rng;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::rng::{self, SimRng};
use crate::sim::{self, PhysConfig, PhysState, SimError, TrayLayout, Vec2};

pub const OBS_DIM: usize = 6;
pub const STEP_PENALTY: f64 = -1.0;
pub const GOAL_REWARD: f64 = 10.0;

#[derive(Debug, Error, PartialEq)]
pub enum EnvError {
    #[error("step called on a finished episode; call reset first")]
    EpisodeFinished,
    #[error("non-finite action (agent {agent}, partner {partner})")]
    NonFiniteAction { agent: f64, partner: f64 },
    #[error("invalid env config: {0}")]
    InvalidConfig(String),
    #[error(transparent)]
    Sim(#[from] SimError),
}

/// Tilt axis selector: rotation about the tray's x or y axis.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Axis {
    AboutX,
    AboutY,
}

impl Axis {
    /// Index into `tray_rot` / tilt-rate vectors.
    pub fn index(self) -> usize {
        match self {
            Axis::AboutX => 0,
            Axis::AboutY => 1,
        }
    }

    pub fn other(self) -> Axis {
        match self {
            Axis::AboutX => Axis::AboutY,
            Axis::AboutY => Axis::AboutX,
        }
    }

    /// Ball displacement axis this tilt drives (0 = x, 1 = y) and its sign:
    /// positive tilt about y pushes +x, positive tilt about x pushes -y.
    pub fn drives(self) -> (usize, f64) {
        match self {
            Axis::AboutX => (1, -1.0),
            Axis::AboutY => (0, 1.0),
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct EnvConfig {
    pub agent_axis: Axis,
    /// Seconds each command is held.
    pub control_interval: f64,
    pub step_cap: usize,
    /// Velocity normalization, m/s.
    pub v_norm: f64,
    /// Radius of the uniform start offset, m.
    pub reset_jitter: f64,
    pub seed: u64,
}

impl Default for EnvConfig {
    fn default() -> Self {
        Self {
            agent_axis: Axis::AboutX,
            control_interval: 0.2,
            step_cap: 200,
            v_norm: 1.0,
            reset_jitter: 0.02,
            seed: 0,
        }
    }
}

impl EnvConfig {
    pub fn validate(&self, phys: &PhysConfig) -> Result<(), EnvError> {
        let bad = |m: String| Err(EnvError::InvalidConfig(m));
        if !(self.control_interval > 0.0) {
            return bad("control_interval must be positive".into());
        }
        if self.step_cap < 1 {
            return bad("step_cap must be at least 1".into());
        }
        if !(self.v_norm > 0.0) {
            return bad("v_norm must be positive".into());
        }
        if !(self.reset_jitter >= 0.0) {
            return bad("reset_jitter must be non-negative".into());
        }
        let ratio = self.control_interval / phys.dt_sub;
        if (ratio - ratio.round()).abs() > 1e-6 || ratio.round() < 1.0 {
            return bad(format!(
                "control_interval {} is not a whole number of dt_sub {}",
                self.control_interval, phys.dt_sub
            ));
        }
        Ok(())
    }

    pub fn substeps(&self, phys: &PhysConfig) -> usize {
        (self.control_interval / phys.dt_sub).round() as usize
    }
}

/// Normalized 6-D observation:
/// `[ball_x, ball_y, vel_x, vel_y, rot_x, rot_y]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Observation(pub [f64; OBS_DIM]);

impl Observation {
    pub fn ball(&self) -> Vec2 {
        [self.0[0], self.0[1]]
    }
    pub fn vel(&self) -> Vec2 {
        [self.0[2], self.0[3]]
    }
    pub fn rot(&self) -> Vec2 {
        [self.0[4], self.0[5]]
    }
    pub fn as_slice(&self) -> &[f64] {
        &self.0
    }
}

/// Maps physical state to the normalized observation. Position is relative
/// to the tray center in half-extents, tilt in units of `theta_max`.
pub fn observe(
    phys: &PhysState,
    layout: &TrayLayout,
    phys_cfg: &PhysConfig,
    cfg: &EnvConfig,
) -> Observation {
    let half = layout.half_extent();
    Observation([
        (phys.ball_pos[0] - half[0]) / half[0],
        (phys.ball_pos[1] - half[1]) / half[1],
        phys.ball_vel[0] / cfg.v_norm,
        phys.ball_vel[1] / cfg.v_norm,
        phys.tray_rot[0] / phys_cfg.theta_max,
        phys.tray_rot[1] / phys_cfg.theta_max,
    ])
}

/// Inverse of [`observe`] for the position and velocity components.
pub fn denormalize(obs: &Observation, layout: &TrayLayout, cfg: &EnvConfig) -> (Vec2, Vec2) {
    let half = layout.half_extent();
    (
        [half[0] * (obs.0[0] + 1.0), half[1] * (obs.0[1] + 1.0)],
        [obs.0[2] * cfg.v_norm, obs.0[3] * cfg.v_norm],
    )
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct StepResult {
    pub obs: Observation,
    pub reward: f64,
    pub done: bool,
    pub reached_goal: bool,
    pub steps_elapsed: usize,
}

#[derive(Debug, Clone)]
pub struct TrayEnv {
    layout: TrayLayout,
    phys_cfg: PhysConfig,
    cfg: EnvConfig,
    state: PhysState,
    steps: usize,
    done: bool,
    rng: SimRng,
    substeps: usize,
    record_substeps: bool,
    trajectory: Vec<PhysState>,
}

impl TrayEnv {
    pub fn new(layout: TrayLayout, phys_cfg: PhysConfig, cfg: EnvConfig) -> Result<Self, EnvError> {
        phys_cfg.validate()?;
        cfg.validate(&phys_cfg)?;
        let start = layout.start_region.center;
        Ok(Self {
            substeps: cfg.substeps(&phys_cfg),
            rng: rng::seeded(cfg.seed),
            layout,
            phys_cfg,
            cfg,
            state: PhysState::at_rest(start),
            steps: 0,
            // A fresh environment must be reset before stepping.
            done: true,
            record_substeps: false,
            trajectory: Vec::new(),
        })
    }

    pub fn layout(&self) -> &TrayLayout {
        &self.layout
    }
    pub fn phys_config(&self) -> &PhysConfig {
        &self.phys_cfg
    }
    pub fn config(&self) -> &EnvConfig {
        &self.cfg
    }
    pub fn state(&self) -> &PhysState {
        &self.state
    }
    pub fn steps_elapsed(&self) -> usize {
        self.steps
    }
    pub fn is_done(&self) -> bool {
        self.done
    }

    /// Keep every substep state of the last [`step`](Self::step) for rendering.
    pub fn set_record_substeps(&mut self, on: bool) {
        self.record_substeps = on;
        self.trajectory.clear();
    }

    pub fn last_substeps(&self) -> &[PhysState] {
        &self.trajectory
    }

    /// Sim time of the next command, measured from episode start.
    pub fn now(&self) -> f64 {
        self.steps as f64 * self.cfg.control_interval
    }

    pub fn observe(&self) -> Observation {
        observe(&self.state, &self.layout, &self.phys_cfg, &self.cfg)
    }

    /// Starts an episode with the environment's own random stream.
    pub fn reset(&mut self) -> Observation {
        let mut rng = std::mem::replace(&mut self.rng, rng::seeded(0));
        let obs = self.reset_with(&mut rng);
        self.rng = rng;
        obs
    }

    /// Places the ball uniformly in a disc of radius
    /// `min(reset_jitter, start_region.radius)` around the start center,
    /// at rest on a flat tray.
    pub fn reset_with<R: Rng + ?Sized>(&mut self, rng: &mut R) -> Observation {
        let radius = self.cfg.reset_jitter.min(self.layout.start_region.radius);
        let c = self.layout.start_region.center;
        let pos = if radius > 0.0 {
            let r = radius * rng.random::<f64>().sqrt();
            let phi = std::f64::consts::TAU * rng.random::<f64>();
            [c[0] + r * phi.cos(), c[1] + r * phi.sin()]
        } else {
            c
        };
        self.reset_to(PhysState::at_rest(pos))
    }

    /// Starts an episode from an explicit state.
    pub fn reset_to(&mut self, state: PhysState) -> Observation {
        self.state = state;
        self.steps = 0;
        self.done = false;
        self.trajectory.clear();
        self.observe()
    }

    /// Commands in [-1, 1] scale `omega_max`; out-of-range values are clamped.
    pub fn step(&mut self, agent_action: f64, partner_action: f64) -> Result<StepResult, EnvError> {
        if self.done {
            return Err(EnvError::EpisodeFinished);
        }
        if !agent_action.is_finite() || !partner_action.is_finite() {
            return Err(EnvError::NonFiniteAction {
                agent: agent_action,
                partner: partner_action,
            });
        }
        let mut rates = [0.0; 2];
        rates[self.cfg.agent_axis.index()] = agent_action.clamp(-1.0, 1.0) * self.phys_cfg.omega_max;
        rates[self.cfg.agent_axis.other().index()] =
            partner_action.clamp(-1.0, 1.0) * self.phys_cfg.omega_max;

        self.trajectory.clear();
        let mut reached = false;
        for _ in 0..self.substeps {
            self.state = sim::step_physics(&self.state, rates, &self.phys_cfg, &self.layout);
            if self.record_substeps {
                self.trajectory.push(self.state);
            }
            if sim::in_goal(self.state.ball_pos, &self.layout) {
                reached = true;
                break;
            }
        }
        self.steps += 1;
        self.done = reached || self.steps >= self.cfg.step_cap;
        Ok(StepResult {
            obs: self.observe(),
            reward: if reached { GOAL_REWARD } else { STEP_PENALTY },
            done: self.done,
            reached_goal: reached,
            steps_elapsed: self.steps,
        })
    }

    pub fn encode_state(&self, enc: &mut Encoder) {
        encode_phys_state(enc, &self.state);
        enc.usize(self.steps);
        enc.bool(self.done);
        rng::encode_rng(enc, &self.rng);
    }

    pub fn decode_state(&mut self, dec: &mut Decoder<'_>) -> Result<(), CodecError> {
        self.state = decode_phys_state(dec)?;
        self.steps = dec.usize()?;
        self.done = dec.bool()?;
        self.rng = rng::decode_rng(dec)?;
        self.trajectory.clear();
        Ok(())
    }
}

pub fn encode_phys_state(enc: &mut Encoder, s: &PhysState) {
    for v in [s.ball_pos, s.ball_vel, s.tray_rot] {
        enc.f64(v[0]);
        enc.f64(v[1]);
    }
    enc.f64(s.t_sim);
}

pub fn decode_phys_state(dec: &mut Decoder<'_>) -> Result<PhysState, CodecError> {
    let mut v = [0.0; 7];
    for x in &mut v {
        *x = dec.f64()?;
    }
    Ok(PhysState {
        ball_pos: [v[0], v[1]],
        ball_vel: [v[2], v[3]],
        tray_rot: [v[4], v[5]],
        t_sim: v[6],
    })
}

/// Outcome of sweeping scripted single-axis controllers over one layout.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub struct SweepReport {
    pub episodes: usize,
    pub successes: usize,
}

/// Drives one axis with scripted controllers while the other stays flat and
/// counts goal reaches. Per axis: 64 bang-bang controllers (8 half-periods
/// x 8 phases) plus `random_seeds` uniform-random controllers, each run for
/// one capped episode from the start center.
pub fn single_axis_sweep(
    layout: &TrayLayout,
    phys: &PhysConfig,
    cfg: &EnvConfig,
    random_seeds: u64,
) -> Result<SweepReport, EnvError> {
    let mut report = SweepReport {
        episodes: 0,
        successes: 0,
    };
    let half_periods = [1usize, 2, 3, 4, 6, 8, 12, 16];
    for axis in [Axis::AboutX, Axis::AboutY] {
        let ecfg = EnvConfig {
            agent_axis: axis,
            reset_jitter: 0.0,
            ..*cfg
        };
        let mut env = TrayEnv::new(layout.clone(), *phys, ecfg)?;
        let mut run = |policy: &mut dyn FnMut(usize) -> f64| -> Result<bool, EnvError> {
            env.reset_to(PhysState::at_rest(layout.start_region.center));
            loop {
                let k = env.steps_elapsed();
                let r = env.step(policy(k), 0.0)?;
                if r.done {
                    return Ok(r.reached_goal);
                }
            }
        };
        for &hp in &half_periods {
            for phase in 0..8 {
                let offset = phase * hp / 4;
                let mut bang = |k: usize| {
                    if ((k + offset) / hp) % 2 == 0 {
                        1.0
                    } else {
                        -1.0
                    }
                };
                report.episodes += 1;
                report.successes += run(&mut bang)? as usize;
            }
        }
        for seed in 0..random_seeds {
            let mut r = rng::seeded(rng::derive_seed(seed, &[axis.index() as u64, 0x5eed]));
            let mut random = |_k: usize| r.random_range(-1.0..=1.0);
            report.episodes += 1;
            report.successes += run(&mut random)? as usize;
        }
    }
    Ok(report)
}
