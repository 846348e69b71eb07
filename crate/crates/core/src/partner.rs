//! Policies for the partner axis.
//!
//! Every partner is target-tilt in, rate out: it decides a desired tilt for
//! its axis, the desired tilt passes through a [`DelayLine`], and a PD law
//! turns the delayed target into a normalized tilt-rate command.

use std::collections::VecDeque;
use std::str::FromStr;
use std::sync::Arc;

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::codec::{CodecError, Decoder, Encoder};
use crate::env::{denormalize, Axis, EnvConfig, Observation};
use crate::rng::{self, SimRng};
use crate::sim::{PhysConfig, TrayLayout, Vec2};

/// Slack on delay maturity so that `k * 0.2` style timestamps mature on the
/// intended step despite rounding.
const DELAY_EPS: f64 = 1e-9;

#[derive(Debug, Error, Clone, PartialEq)]
pub enum PartnerError {
    #[error("time went backwards: {now} after {last}")]
    TimeRegression { now: f64, last: f64 },
    #[error("non-finite observation")]
    NonFiniteObservation,
    #[error("live partner has no command source")]
    NoSource,
    #[error("invalid partner spec: {0}")]
    InvalidSpec(String),
}

/// `clamp(kp * (target - current) - kd * current_rate, -1, 1)`.
pub fn pd_command(target_tilt: f64, current_tilt: f64, current_rate: f64, kp: f64, kd: f64) -> f64 {
    (kp * (target_tilt - current_tilt) - kd * current_rate).clamp(-1.0, 1.0)
}

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct PartnerCommand {
    pub value: f64,
    pub issued_at: f64,
}

/// FIFO that releases each command once it is at least `delay` seconds old.
#[derive(Debug, Clone, PartialEq)]
pub struct DelayLine {
    delay: f64,
    pending: VecDeque<PartnerCommand>,
    effective: f64,
    last_now: Option<f64>,
}

impl DelayLine {
    pub fn new(delay: f64) -> Self {
        assert!(delay >= 0.0, "negative delay");
        Self {
            delay,
            pending: VecDeque::new(),
            effective: 0.0,
            last_now: None,
        }
    }

    pub fn delay(&self) -> f64 {
        self.delay
    }

    pub fn clear(&mut self) {
        self.pending.clear();
        self.effective = 0.0;
        self.last_now = None;
    }

    /// Last released command, 0 before anything has matured.
    pub fn effective(&self) -> f64 {
        self.effective
    }

    /// Enqueues `cmd` issued at `now` and returns the newest command that is
    /// at least `delay` old.
    pub fn apply_delay(&mut self, cmd: f64, now: f64) -> Result<f64, PartnerError> {
        if let Some(last) = self.last_now {
            if now < last {
                return Err(PartnerError::TimeRegression { now, last });
            }
        }
        self.last_now = Some(now);
        self.pending.push_back(PartnerCommand {
            value: cmd,
            issued_at: now,
        });
        while let Some(front) = self.pending.front() {
            if now - front.issued_at + DELAY_EPS >= self.delay {
                self.effective = front.value;
                self.pending.pop_front();
            } else {
                break;
            }
        }
        Ok(self.effective)
    }

    fn encode(&self, enc: &mut Encoder) {
        enc.f64(self.delay);
        enc.usize(self.pending.len());
        for c in &self.pending {
            enc.f64(c.value);
            enc.f64(c.issued_at);
        }
        enc.f64(self.effective);
        enc.bool(self.last_now.is_some());
        enc.f64(self.last_now.unwrap_or(0.0));
    }

    fn decode(dec: &mut Decoder<'_>) -> Result<Self, CodecError> {
        let delay = dec.f64()?;
        let n = dec.usize()?;
        let mut pending = VecDeque::new();
        for _ in 0..n {
            pending.push_back(PartnerCommand {
                value: dec.f64()?,
                issued_at: dec.f64()?,
            });
        }
        let effective = dec.f64()?;
        let has_last = dec.bool()?;
        let last = dec.f64()?;
        Ok(Self {
            delay,
            pending,
            effective,
            last_now: has_last.then_some(last),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PartnerKind {
    Expert,
    Novice,
    Random,
    Frozen,
    Live,
}

impl FromStr for PartnerKind {
    type Err = PartnerError;

    fn from_str(s: &str) -> Result<Self, Self::Err> {
        Ok(match s {
            "expert" => Self::Expert,
            "novice" => Self::Novice,
            "random" => Self::Random,
            "frozen" => Self::Frozen,
            "live" => Self::Live,
            other => return Err(PartnerError::InvalidSpec(format!("unknown kind {other:?}"))),
        })
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct PartnerSpec {
    pub kind: PartnerKind,
    /// PD gain on tilt error, per radian.
    pub kp: f64,
    /// PD gain on tilt rate, per rad/s.
    pub kd: f64,
    /// Std of Gaussian noise added to the novice's rate command.
    pub noise_std: f64,
    /// Seconds between deciding a target tilt and acting on it.
    pub reaction_delay: f64,
    pub seed: u64,
    /// Desired tilt per metre of waypoint error (rad/m).
    pub waypoint_gain: f64,
    /// Desired tilt per m/s of ball velocity (rad s/m).
    pub waypoint_damping: f64,
}

impl Default for PartnerSpec {
    fn default() -> Self {
        Self {
            kind: PartnerKind::Expert,
            kp: 6.0,
            kd: 1.5,
            noise_std: 0.0,
            reaction_delay: 0.2,
            seed: 0,
            waypoint_gain: 2.0,
            waypoint_damping: 0.8,
        }
    }
}

impl PartnerSpec {
    pub fn validate(&self) -> Result<(), PartnerError> {
        let ok = [self.kp, self.kd, self.noise_std, self.reaction_delay]
            .iter()
            .all(|v| v.is_finite() && *v >= 0.0)
            && self.waypoint_gain.is_finite()
            && self.waypoint_damping.is_finite();
        if ok {
            Ok(())
        } else {
            Err(PartnerError::InvalidSpec(
                "gains, noise_std and reaction_delay must be finite and non-negative".into(),
            ))
        }
    }

    pub fn expert() -> Self {
        Self::default()
    }

    pub fn novice(noise_std: f64) -> Self {
        Self {
            kind: PartnerKind::Novice,
            noise_std,
            ..Self::default()
        }
    }

    pub fn of_kind(kind: PartnerKind) -> Self {
        Self {
            kind,
            ..Self::default()
        }
    }
}

/// Latest-command cell written by a live front end. Values are normalized
/// target tilts; implementations apply their own staleness rule.
pub trait CommandSource: Send + Sync + std::fmt::Debug {
    fn latest(&self) -> f64;
}

/// Index of the waypoint the ball should head for: the successor of the
/// furthest waypoint within `reach` of `pos`, never moving backwards from
/// `current`. The last waypoint is never skipped.
pub fn next_waypoint(waypoints: &[Vec2], current: usize, pos: Vec2, reach: f64) -> usize {
    let last = waypoints.len().saturating_sub(1);
    (current..=last)
        .rev()
        .find(|&j| {
            let w = waypoints[j];
            (w[0] - pos[0]).hypot(w[1] - pos[1]) <= reach
        })
        .map_or(current, |j| (j + 1).min(last))
}

/// Desired tilt (radians) on `axis` that pushes the ball towards `waypoint`
/// along the ball axis that `axis` drives, damped by ball velocity.
pub fn waypoint_target_tilt(
    axis: Axis,
    pos: Vec2,
    vel: Vec2,
    waypoint: Vec2,
    spec: &PartnerSpec,
    theta_max: f64,
) -> f64 {
    let (i, sign) = axis.drives();
    let push = spec.waypoint_gain * (waypoint[i] - pos[i]) - spec.waypoint_damping * vel[i];
    sign * push.clamp(-theta_max, theta_max)
}

/// A partner for one tilt axis. Scripted kinds are deterministic given the
/// seed; the live kind reads a [`CommandSource`].
#[derive(Debug, Clone)]
pub struct Partner {
    spec: PartnerSpec,
    axis: Axis,
    layout: TrayLayout,
    theta_max: f64,
    env_cfg: EnvConfig,
    rng: SimRng,
    delay: DelayLine,
    waypoint: usize,
    prev_tilt: Option<(f64, f64)>,
    source: Option<Arc<dyn CommandSource>>,
}

impl Partner {
    pub fn new(
        spec: PartnerSpec,
        axis: Axis,
        layout: &TrayLayout,
        phys: &PhysConfig,
        env_cfg: &EnvConfig,
    ) -> Result<Self, PartnerError> {
        spec.validate()?;
        Ok(Self {
            spec,
            axis,
            layout: layout.clone(),
            theta_max: phys.theta_max,
            env_cfg: *env_cfg,
            rng: rng::seeded(spec.seed),
            delay: DelayLine::new(spec.reaction_delay),
            waypoint: 0,
            prev_tilt: None,
            source: None,
        })
    }

    pub fn with_source(mut self, source: Arc<dyn CommandSource>) -> Self {
        self.source = Some(source);
        self
    }

    pub fn spec(&self) -> &PartnerSpec {
        &self.spec
    }

    pub fn kind(&self) -> PartnerKind {
        self.spec.kind
    }

    pub fn axis(&self) -> Axis {
        self.axis
    }

    pub fn waypoint_index(&self) -> usize {
        self.waypoint
    }

    /// The delayed command currently in force (a normalized target tilt).
    pub fn effective_command(&self) -> f64 {
        self.delay.effective()
    }

    /// Clears per-episode state. The random stream continues.
    pub fn reset(&mut self) {
        self.delay.clear();
        self.waypoint = 0;
        self.prev_tilt = None;
    }

    pub fn reseed(&mut self, seed: u64) {
        self.rng = rng::seeded(seed);
    }

    /// Rate command in [-1, 1] for this axis at episode time `now`.
    pub fn act(&mut self, obs: &Observation, now: f64) -> Result<f64, PartnerError> {
        if obs.0.iter().any(|v| !v.is_finite()) {
            return Err(PartnerError::NonFiniteObservation);
        }
        let tilt = obs.0[4 + self.axis.index()] * self.theta_max;
        let rate = match self.prev_tilt {
            Some((t0, p0)) if now > t0 => (tilt - p0) / (now - t0),
            _ => 0.0,
        };
        if let Some((t0, _)) = self.prev_tilt {
            if now < t0 {
                return Err(PartnerError::TimeRegression { now, last: t0 });
            }
        }
        self.prev_tilt = Some((now, tilt));

        let cmd = match self.spec.kind {
            PartnerKind::Frozen => 0.0,
            PartnerKind::Random => self.rng.random_range(-1.0..=1.0),
            PartnerKind::Expert | PartnerKind::Novice => {
                let (pos, vel) = denormalize(obs, &self.layout, &self.env_cfg);
                let reach = 2.0 * self.layout.goal_radius;
                self.waypoint = next_waypoint(&self.layout.waypoints, self.waypoint, pos, reach);
                let target = waypoint_target_tilt(
                    self.axis,
                    pos,
                    vel,
                    self.layout.waypoints[self.waypoint],
                    &self.spec,
                    self.theta_max,
                );
                let delayed = self.delay.apply_delay(target / self.theta_max, now)?;
                let mut out =
                    pd_command(delayed * self.theta_max, tilt, rate, self.spec.kp, self.spec.kd);
                if self.spec.kind == PartnerKind::Novice && self.spec.noise_std > 0.0 {
                    let n: f64 = self.rng.sample(StandardNormal);
                    out = (out + self.spec.noise_std * n).clamp(-1.0, 1.0);
                }
                out
            }
            PartnerKind::Live => {
                let src = self.source.as_ref().ok_or(PartnerError::NoSource)?;
                let wanted = src.latest().clamp(-1.0, 1.0);
                let delayed = self.delay.apply_delay(wanted, now)?;
                pd_command(delayed * self.theta_max, tilt, rate, self.spec.kp, self.spec.kd)
            }
        };
        Ok(cmd)
    }

    pub fn encode_state(&self, enc: &mut Encoder) {
        rng::encode_rng(enc, &self.rng);
        self.delay.encode(enc);
        enc.usize(self.waypoint);
        enc.bool(self.prev_tilt.is_some());
        let (t, p) = self.prev_tilt.unwrap_or((0.0, 0.0));
        enc.f64(t);
        enc.f64(p);
    }

    pub fn decode_state(&mut self, dec: &mut Decoder<'_>) -> Result<(), CodecError> {
        let rng = rng::decode_rng(dec)?;
        let delay = DelayLine::decode(dec)?;
        let waypoint = dec.usize()?;
        let has_prev = dec.bool()?;
        let t = dec.f64()?;
        let p = dec.f64()?;
        if waypoint >= self.layout.waypoints.len().max(1) {
            return Err(CodecError::Invalid(format!("waypoint index {waypoint}")));
        }
        self.rng = rng;
        self.delay = delay;
        self.waypoint = waypoint;
        self.prev_tilt = has_prev.then_some((t, p));
        Ok(())
    }
}
