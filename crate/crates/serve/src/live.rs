//! Real-time driver: hooks that pace the trainer to wall-clock time, hold
//! episodes while nobody is connected, and stream render frames.

use std::collections::VecDeque;
use std::sync::atomic::{AtomicBool, Ordering};
use std::sync::Arc;
use std::thread;
use std::time::{Duration, Instant};

use tokio::sync::broadcast;
use trayco_core::harness::{BlockRecord, HarnessError, Phase, RunHooks, StepInfo, TrialRecord};
use trayco_core::{PhysState, TrayEnv};

use crate::protocol::{SessionPhase, WireMessage};
use crate::session::Session;

/// Outbound queue shared by every connected client.
pub type Outbox = broadcast::Sender<String>;

#[derive(Debug, Clone, Copy, PartialEq)]
pub struct LiveOptions {
    /// Wall time per agent step.
    pub tick: Duration,
    /// State frames per second of wall time.
    pub render_hz: f64,
    /// Step periods further than this from `tick` are logged.
    pub cadence_tolerance: Duration,
    /// Poll interval while waiting for a client.
    pub wait_poll: Duration,
}

impl Default for LiveOptions {
    fn default() -> Self {
        Self {
            tick: Duration::from_millis(200),
            render_hz: 30.0,
            cadence_tolerance: Duration::from_millis(20),
            wait_poll: Duration::from_millis(50),
        }
    }
}

impl LiveOptions {
    /// Frames per step, at least one so every step is shown.
    pub fn frames_per_step(&self) -> usize {
        ((self.tick.as_secs_f64() * self.render_hz).round() as usize).max(1)
    }
}

/// Measured step periods. Only periods inside one episode count; the first
/// step of an episode starts a new measurement.
#[derive(Debug, Clone, Copy, Default, PartialEq)]
pub struct CadenceStats {
    pub periods: u64,
    pub violations: u64,
    pub max_deviation: Duration,
}

pub struct LiveHooks {
    session: Arc<Session>,
    out: Outbox,
    opts: LiveOptions,
    stop: Arc<AtomicBool>,
    last_tick: Option<Instant>,
    frames: VecDeque<(Instant, String)>,
    phase: SessionPhase,
    block: usize,
    last_reward: f64,
    stats: CadenceStats,
}

impl LiveHooks {
    pub fn new(session: Arc<Session>, out: Outbox, opts: LiveOptions, stop: Arc<AtomicBool>) -> Self {
        Self {
            session,
            out,
            opts,
            stop,
            last_tick: None,
            frames: VecDeque::new(),
            phase: SessionPhase::Waiting,
            block: 0,
            last_reward: 0.0,
            stats: CadenceStats::default(),
        }
    }

    pub fn cadence(&self) -> CadenceStats {
        self.stats
    }

    fn stopped(&self) -> bool {
        self.stop.load(Ordering::Relaxed)
    }

    fn send(&self, text: String) {
        // No receivers just means nobody is watching.
        let _ = self.out.send(text);
    }

    fn state_frame(&self, s: &PhysState, step_index: usize) -> String {
        WireMessage::State {
            t_sim: s.t_sim,
            ball: s.ball_pos,
            vel: s.ball_vel,
            tray: s.tray_rot,
            step_index,
            phase: self.phase,
            block: self.block,
            last_reward: self.last_reward,
        }
        .to_text()
    }

    /// Sends queued frames due at or before `until`, sleeping until each
    /// one's display time.
    fn emit_until(&mut self, until: Instant) {
        while let Some(&(at, _)) = self.frames.front() {
            if at > until {
                break;
            }
            sleep_until(at);
            let (_, text) = self.frames.pop_front().expect("front exists");
            self.send(text);
        }
    }

    fn flush(&mut self) {
        while let Some((at, text)) = self.frames.pop_front() {
            sleep_until(at);
            self.send(text);
        }
    }

    fn set_phase(&mut self, phase: SessionPhase) {
        self.phase = phase;
        self.session.set_phase(phase);
    }
}

fn sleep_until(at: Instant) {
    let now = Instant::now();
    if at > now {
        thread::sleep(at - now);
    }
}

impl RunHooks for LiveHooks {
    fn on_phase(&mut self, phase: Phase) {
        self.flush();
        match phase {
            Phase::Training { block } => {
                self.block = block;
                self.session.set_block(block);
                self.set_phase(SessionPhase::Training);
            }
            Phase::Testing { block } => {
                self.block = block;
                self.session.set_block(block);
                self.set_phase(SessionPhase::Testing);
            }
            Phase::Finished => self.set_phase(SessionPhase::Finished),
        }
    }

    fn before_episode(&mut self) -> Result<(), HarnessError> {
        self.flush();
        self.last_tick = None;
        self.last_reward = 0.0;
        if self.session.client_count() == 0 {
            let resume = self.phase;
            self.set_phase(SessionPhase::Waiting);
            log::info!("no client connected; waiting");
            while self.session.client_count() == 0 {
                if self.stopped() {
                    return Err(HarnessError::Interrupted);
                }
                thread::sleep(self.opts.wait_poll);
            }
            self.set_phase(resume);
        }
        if self.stopped() {
            return Err(HarnessError::Interrupted);
        }
        Ok(())
    }

    fn before_step(&mut self, env: &TrayEnv) -> Result<(), HarnessError> {
        if self.stopped() {
            return Err(HarnessError::Interrupted);
        }
        let now = match self.last_tick {
            None => {
                // First step of an episode: show where the ball starts.
                self.send(self.state_frame(env.state(), env.steps_elapsed()));
                Instant::now()
            }
            Some(last) => {
                let deadline = last + self.opts.tick;
                self.emit_until(deadline);
                sleep_until(deadline);
                let now = Instant::now();
                let period = now - last;
                let dev = period.abs_diff(self.opts.tick);
                self.stats.periods += 1;
                self.stats.max_deviation = self.stats.max_deviation.max(dev);
                if dev > self.opts.cadence_tolerance {
                    self.stats.violations += 1;
                    log::warn!(
                        "step period {:.1} ms, expected {:.1} ms",
                        period.as_secs_f64() * 1e3,
                        self.opts.tick.as_secs_f64() * 1e3
                    );
                }
                now
            }
        };
        self.last_tick = Some(now);
        Ok(())
    }

    fn after_step(&mut self, env: &TrayEnv, info: &StepInfo) {
        self.last_reward = info.reward;
        let Some(start) = self.last_tick else { return };
        let subs = env.last_substeps();
        let n = self.opts.frames_per_step();
        for k in 1..=n {
            // Frame k shows the substep at fraction k/n of the step; the last
            // one is the state the step ended in.
            let s = if k == n || subs.is_empty() {
                env.state()
            } else {
                let i = (k * subs.len()).div_ceil(n).saturating_sub(1);
                &subs[i.min(subs.len() - 1)]
            };
            let at = start + self.opts.tick.mul_f64(k as f64 / n as f64);
            self.frames.push_back((at, self.state_frame(s, env.steps_elapsed())));
        }
    }

    fn before_updates(&mut self) {
        self.flush();
    }

    fn on_trial(&mut self, rec: &TrialRecord) {
        self.flush();
        self.send(
            WireMessage::EpisodeResult {
                trial_id: rec.trial_id,
                reached: rec.reached,
                steps_used: rec.steps_used,
                score: rec.score,
            }
            .to_text(),
        );
    }

    fn on_block(&mut self, rec: &BlockRecord) {
        log::info!(
            "block {} done: {} env steps, {} updates, alpha {:.4}",
            rec.block,
            rec.env_steps,
            rec.updates,
            rec.alpha
        );
    }

    fn wants_substeps(&self) -> bool {
        true
    }
}
