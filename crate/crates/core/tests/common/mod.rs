//! Checks shared by the property tests and the acceptance run.
#![allow(dead_code)]

use rand::Rng;
use trayco_core::env::{single_axis_sweep, SweepReport};
use trayco_core::harness::{NoHooks, Schedule};
use trayco_core::nn::{squash_sample, GaussianHead, Mlp};
use trayco_core::rng::{derive_seed, seeded};
use trayco_core::sac::{ReplayBuffer, SacConfig, Transition};
use trayco_core::sim::{default_layout, step_physics, PhysConfig, PhysState, StartRegion, TrayLayout};
use trayco_core::{Axis, EnvConfig, Observation, Partner, PartnerSpec, RunConfig, Trainer, TrayEnv};

/// Central-difference step for gradient checks.
pub const FD_STEP: f64 = 1e-5;

fn rel_err(a: f64, b: f64) -> f64 {
    // Relative error with a floor so that gradients that are zero up to
    // rounding compare on an absolute scale.
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

/// Worst relative error between reverse-mode and central-difference
/// gradients (parameters and inputs) over `n_nets` random networks.
pub fn gradient_check_worst(n_nets: u64) -> f64 {
    let mut worst: f64 = 0.0;
    for k in 0..n_nets {
        let mut rng = seeded(derive_seed(0x6a7d, &[k]));
        let depth = rng.random_range(1..=3);
        let mut sizes = vec![rng.random_range(1..=7)];
        for _ in 0..depth {
            sizes.push(rng.random_range(1..=9));
        }
        let mut net = Mlp::new(&sizes, &mut rng);
        // Non-zero biases so every code path is exercised.
        for p in net.params_mut() {
            *p += rng.random_range(-0.3..0.3);
        }
        let x: Vec<f64> = (0..sizes[0]).map(|_| rng.random_range(-2.0..2.0)).collect();
        let c: Vec<f64> = (0..net.output_dim()).map(|_| rng.random_range(-1.0..1.0)).collect();
        let loss = |net: &Mlp, x: &[f64]| -> f64 {
            net.forward(x).unwrap().iter().zip(&c).map(|(o, c)| o * c).sum()
        };
        let (gp, gx) = net.backward(&x, &c).unwrap();
        for i in 0..net.n_params() {
            let orig = net.params()[i];
            net.params_mut()[i] = orig + FD_STEP;
            let up = loss(&net, &x);
            net.params_mut()[i] = orig - FD_STEP;
            let down = loss(&net, &x);
            net.params_mut()[i] = orig;
            worst = worst.max(rel_err(gp[i], (up - down) / (2.0 * FD_STEP)));
        }
        for i in 0..x.len() {
            let mut xp = x.clone();
            xp[i] += FD_STEP;
            let mut xm = x.clone();
            xm[i] -= FD_STEP;
            let fd = (loss(&net, &xp) - loss(&net, &xm)) / (2.0 * FD_STEP);
            worst = worst.max(rel_err(gx[i], fd));
        }
    }
    worst
}

/// Heads used for the density check: means across the useful range and
/// standard deviations up to e^0.5.
pub fn density_heads() -> Vec<GaussianHead> {
    let mut heads = Vec::new();
    for &m in &[-2.0, -0.7, 0.0, 0.4, 1.5] {
        for &ls in &[-2.5, -1.0, 0.0, 0.5] {
            heads.push(GaussianHead::new(m, ls));
        }
    }
    heads
}

/// Integral over the action interval of `exp(log_prob)` for one head. The
/// substitution `a = tanh(u)` turns it into an integral over the latent line,
/// done with the composite Simpson rule over mean +- 12 std.
pub fn squashed_density_integral(h: GaussianHead) -> f64 {
    let s = h.std();
    let (lo, hi) = (h.mean - 12.0 * s, h.mean + 12.0 * s);
    let n = 200_000;
    let dx = (hi - lo) / n as f64;
    let f = |u: f64| {
        let smp = squash_sample(h, (u - h.mean) / s);
        let da_du = 1.0 - smp.action * smp.action;
        smp.log_prob.exp() * da_du
    };
    let mut acc = f(lo) + f(hi);
    for i in 1..n {
        let w = if i % 2 == 1 { 4.0 } else { 2.0 };
        acc += w * f(lo + i as f64 * dx);
    }
    acc * dx / 3.0
}

/// Chi-square statistic and p-value of replay sampling counts over
/// `slots` slots filled to capacity.
pub fn replay_chi_square(slots: usize, draws_per_slot: usize, seed: u64) -> (f64, f64) {
    use statrs::distribution::{ChiSquared, ContinuousCDF};
    let mut b = ReplayBuffer::new(slots);
    for k in 0..slots * 3 {
        b.store(Transition {
            s: Observation([k as f64; 6]),
            a: 0.0,
            r: -1.0,
            s_next: Observation([0.0; 6]),
            done: false,
        });
    }
    let mut rng = seeded(seed);
    let mut counts = vec![0usize; slots];
    let batch = 64;
    let total = slots * draws_per_slot;
    for _ in 0..total / batch {
        for i in b.sample_indices(batch, &mut rng) {
            counts[i] += 1;
        }
    }
    let n: usize = counts.iter().sum();
    let expected = n as f64 / slots as f64;
    let chi2: f64 = counts.iter().map(|&c| (c as f64 - expected).powi(2) / expected).sum();
    let p = 1.0 - ChiSquared::new((slots - 1) as f64).unwrap().cdf(chi2);
    (chi2, p)
}

/// Open tray with no walls, large enough that nothing is hit in `secs`.
pub fn open_tray() -> TrayLayout {
    TrayLayout {
        width: 6.0,
        height: 6.0,
        ball_radius: 0.02,
        walls: vec![],
        goal_center: [5.5, 5.5],
        goal_radius: 0.04,
        start_region: StartRegion {
            center: [3.0, 3.0],
            radius: 0.0,
        },
        waypoints: vec![],
    }
}

/// Relative drift of `0.5 |v|^2 - acc . x` (energy per unit effective mass)
/// over `secs` of frictionless motion on a fixed tilt, relative to the
/// kinetic energy at the end.
pub fn energy_drift(dt_sub: f64, secs: f64) -> f64 {
    let cfg = PhysConfig {
        damping: 0.0,
        restitution: 1.0,
        dt_sub,
        ..Default::default()
    };
    let layout = open_tray();
    let tilt = [0.12, -0.2];
    let acc = trayco_core::sim::ball_acceleration(tilt, &cfg);
    let energy = |s: &PhysState| {
        0.5 * (s.ball_vel[0].powi(2) + s.ball_vel[1].powi(2))
            - (acc[0] * s.ball_pos[0] + acc[1] * s.ball_pos[1])
    };
    let mut s = PhysState {
        ball_pos: [3.0, 3.0],
        ball_vel: [0.25, -0.1],
        tray_rot: tilt,
        t_sim: 0.0,
    };
    let e0 = energy(&s);
    let n = (secs / dt_sub).round() as usize;
    for _ in 0..n {
        s = step_physics(&s, [0.0, 0.0], &cfg, &layout);
        assert_eq!(s.tray_rot, tilt);
    }
    let ke = 0.5 * (s.ball_vel[0].powi(2) + s.ball_vel[1].powi(2));
    (energy(&s) - e0).abs() / ke
}

pub fn default_sweep() -> SweepReport {
    single_axis_sweep(&default_layout(), &PhysConfig::default(), &EnvConfig::default(), 32).unwrap()
}

/// What drives the agent's axis in a paired-episode comparison.
#[derive(Debug, Clone, Copy)]
pub enum AgentSide {
    Scripted(PartnerSpec),
    /// Uniform random rate commands.
    Random,
}

/// Plays `n` episodes and returns the step at which each reached the goal.
/// Episode `k` has the same start state, agent-side randomness and partner
/// seed whatever `partner` is, so two calls form a paired comparison.
pub fn paired_episodes(agent: AgentSide, partner: PartnerSpec, n: u64, step_cap: usize) -> Vec<Option<usize>> {
    let layout = default_layout();
    let phys = PhysConfig::default();
    (0..n)
        .map(|k| {
            let cfg = EnvConfig {
                seed: derive_seed(0xe915, &[k]),
                step_cap,
                ..Default::default()
            };
            let mut env = TrayEnv::new(layout.clone(), phys, cfg).unwrap();
            let mut p = Partner::new(
                PartnerSpec {
                    seed: derive_seed(0xba57, &[k]),
                    ..partner
                },
                Axis::AboutY,
                &layout,
                &phys,
                &cfg,
            )
            .unwrap();
            let mut scripted = match agent {
                AgentSide::Scripted(spec) => Some(
                    Partner::new(
                        PartnerSpec {
                            seed: derive_seed(0xa6e7, &[k]),
                            ..spec
                        },
                        Axis::AboutX,
                        &layout,
                        &phys,
                        &cfg,
                    )
                    .unwrap(),
                ),
                AgentSide::Random => None,
            };
            let mut rng = seeded(derive_seed(0x7a4d, &[k]));
            let mut obs = env.reset();
            loop {
                let now = env.now();
                let a = match &mut scripted {
                    Some(s) => s.act(&obs, now).unwrap(),
                    None => rng.random_range(-1.0..=1.0),
                };
                let b = p.act(&obs, now).unwrap();
                let r = env.step(a, b).unwrap();
                if r.done {
                    return r.reached_goal.then_some(r.steps_elapsed);
                }
                obs = r.obs;
            }
        })
        .collect()
}

pub fn successes(v: &[Option<usize>]) -> usize {
    v.iter().filter(|s| s.is_some()).count()
}

/// Small run config for bookkeeping checks.
pub fn tiny_config(seed: u64) -> RunConfig {
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

/// Interrupts a run after `stop_after` blocks, resumes from the checkpoint
/// bytes and compares against an uninterrupted run.
pub fn resume_matches(cfg: &RunConfig, stop_after: usize) -> bool {
    let mut full = Trainer::new(cfg.clone()).unwrap();
    full.run(&mut NoHooks).unwrap();

    let mut first = Trainer::new(cfg.clone()).unwrap();
    for _ in 0..stop_after {
        first.run_block(&mut NoHooks).unwrap();
    }
    let bytes = first.checkpoint_bytes();
    drop(first);
    let mut resumed = Trainer::resume(&bytes, cfg).unwrap();
    resumed.run(&mut NoHooks).unwrap();

    resumed.log().without_wall_time() == full.log().without_wall_time()
        && resumed.agent() == full.agent()
        && resumed.buffer() == full.buffer()
        && resumed.traces() == full.traces()
}
