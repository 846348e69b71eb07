use std::io::Write;
use std::net::IpAddr;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand, ValueEnum};
use trayco_core::harness::{evaluate, replay, sample_std, CHECKPOINT_FILE, TrialTrace};
use trayco_core::{PartnerKind, PartnerSpec, RunConfig, Trainer};
use trayco_serve::{ServeOptions, ServeReport};

#[derive(Parser)]
#[command(name = "trayco", version, about = "Ball-on-tray co-learning: SAC agent on one tilt axis, partner on the other")]
struct Cli {
    #[command(subcommand)]
    cmd: Cmd,
}

#[derive(Subcommand)]
enum Cmd {
    /// Train headless (or live, with `--partner live`) and write the run directory.
    Train {
        /// Run configuration (TOML). Built-in defaults when omitted.
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long)]
        out: PathBuf,
        #[arg(long)]
        seed: Option<u64>,
        /// Partner kind, optionally with overrides: `novice:noise_std=0.5`.
        #[arg(long)]
        partner: Option<String>,
        /// Continue from `<out>/checkpoint.bin`.
        #[arg(long)]
        resume: bool,
        /// Websocket port when the partner is live.
        #[arg(long, default_value_t = 8765)]
        port: u16,
    },
    /// Evaluate a checkpoint's mean policy.
    Eval {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long, default_value_t = 10)]
        trials: usize,
        /// Partner for the agent's other axis: `expert`, `novice:noise_std=0.5`,
        /// `expert:reaction_delay=1.0`, or a TOML file.
        #[arg(long, default_value = "expert")]
        partner: String,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Refuse to evaluate unless the checkpoint was trained with this config.
        #[arg(long)]
        config: Option<PathBuf>,
    },
    /// Run a live session: a person drives the partner axis over a websocket.
    Serve {
        #[arg(long)]
        config: Option<PathBuf>,
        #[arg(long, default_value_t = 8765)]
        port: u16,
        #[arg(long, default_value = "127.0.0.1")]
        bind: IpAddr,
        #[arg(long, default_value = "live-run")]
        out: PathBuf,
    },
    /// Dump the stored trace of one evaluation trial.
    Replay {
        #[arg(long)]
        run: PathBuf,
        #[arg(long)]
        trial: u64,
        #[arg(long, value_enum, default_value_t = Format::Jsonl)]
        format: Format,
    },
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Jsonl,
    Csv,
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("info")).init();
    match Cli::parse().cmd {
        Cmd::Train {
            config,
            out,
            seed,
            partner,
            resume,
            port,
        } => {
            let mut cfg = load_config(config.as_deref())?;
            if let Some(s) = seed {
                cfg.seed = s;
            }
            if let Some(p) = partner {
                cfg.partner = parse_partner(cfg.partner, &p)?;
            }
            cfg.validate()?;
            if cfg.partner.kind == PartnerKind::Live {
                if resume {
                    bail!("live runs cannot resume");
                }
                let report = run_live(ServeOptions::new(cfg, port, out))?;
                return summarize_live(&report);
            }
            train(cfg, &out, resume)
        }
        Cmd::Eval {
            checkpoint,
            trials,
            partner,
            seed,
            config,
        } => eval(&checkpoint, trials, &partner, seed, config.as_deref()),
        Cmd::Serve {
            config,
            port,
            bind,
            out,
        } => {
            let cfg = load_config(config.as_deref())?;
            let mut opts = ServeOptions::new(cfg, port, out);
            opts.addr.set_ip(bind);
            let report = run_live(opts)?;
            summarize_live(&report)
        }
        Cmd::Replay { run, trial, format } => {
            let trace = replay(&run, trial)?;
            let stdout = std::io::stdout();
            write_trace(&trace, format, stdout.lock())
        }
    }
}

fn load_config(path: Option<&Path>) -> Result<RunConfig> {
    Ok(match path {
        Some(p) => RunConfig::load(p).with_context(|| format!("loading {}", p.display()))?,
        None => RunConfig::default(),
    })
}

/// `kind[:key=value,...]` on top of `base`, or a TOML file holding a
/// partner table. Unknown keys are rejected.
fn parse_partner(base: PartnerSpec, text: &str) -> Result<PartnerSpec> {
    if text.ends_with(".toml") {
        let s = std::fs::read_to_string(text).with_context(|| format!("reading {text}"))?;
        return Ok(toml::from_str(&s)?);
    }
    let (kind, rest) = text.split_once(':').unwrap_or((text, ""));
    // TOML integers are i64; the seed goes around the table.
    let mut table = toml::Table::try_from(PartnerSpec { seed: 0, ..base })?;
    table.insert("kind".into(), toml::Value::String(kind.trim().into()));
    for pair in rest.split(',').filter(|p| !p.trim().is_empty()) {
        let Some((k, v)) = pair.split_once('=') else {
            bail!("partner override {pair:?} is not key=value");
        };
        let value: toml::Value = toml::from_str::<toml::Table>(&format!("v = {}", v.trim()))
            .with_context(|| format!("bad value in {pair:?}"))?
            .remove("v")
            .expect("parsed key");
        table.insert(k.trim().into(), value);
    }
    let seed_given = table.get("seed").and_then(toml::Value::as_integer) != Some(0);
    let mut spec: PartnerSpec = table.try_into().with_context(|| format!("partner spec {text:?}"))?;
    if !seed_given {
        spec.seed = base.seed;
    }
    spec.validate()?;
    Ok(spec)
}

fn train(cfg: RunConfig, out: &Path, resume: bool) -> Result<()> {
    let mut trainer = if resume {
        let bytes = std::fs::read(out.join(CHECKPOINT_FILE))
            .with_context(|| format!("reading checkpoint in {}", out.display()))?;
        let t = Trainer::resume(&bytes, &cfg)?;
        log::info!("resuming after block {}", t.blocks_done());
        t
    } else {
        Trainer::new(cfg)?
    };
    struct Progress;
    impl trayco_core::harness::RunHooks for Progress {
        fn on_block(&mut self, b: &trayco_core::harness::BlockRecord) {
            log::info!(
                "block {}: {} steps and {} updates so far, {}/{} training episodes reached the goal, alpha {:.4}, {:.1}s",
                b.block,
                b.env_steps,
                b.updates,
                b.train_successes,
                b.train_episodes,
                b.alpha,
                b.wall_time_s
            );
        }
    }
    let log = trainer.run_to_dir(out, &mut Progress)?;
    for e in log.evals() {
        println!(
            "block {}  mean {:6.1}  std {:5.1}  stderr {:5.1}  reached {}/{}",
            e.block, e.mean, e.std, e.stderr, e.successes, e.n
        );
    }
    Ok(())
}

fn eval(checkpoint: &Path, trials: usize, partner: &str, seed: u64, config: Option<&Path>) -> Result<()> {
    if trials == 0 {
        bail!("--trials must be positive");
    }
    let bytes = std::fs::read(checkpoint).with_context(|| format!("reading {}", checkpoint.display()))?;
    let trainer = match config {
        Some(p) => Trainer::resume(&bytes, &RunConfig::load(p)?)?,
        None => Trainer::from_checkpoint(&bytes)?,
    };
    let mut setup = trainer.eval_setup();
    setup.partner = parse_partner(setup.partner, partner)?;
    if setup.partner.kind == PartnerKind::Live {
        bail!("live partners are only available through `serve`");
    }
    let scores = evaluate(trainer.agent(), &setup, trials, seed)?;
    for (k, s) in scores.iter().enumerate() {
        println!("trial {k:3}  reached {:5}  steps {:3}  score {:3}", s.reached, s.steps_used, s.score);
    }
    let v: Vec<f64> = scores.iter().map(|s| s.score as f64).collect();
    let mean = v.iter().sum::<f64>() / v.len() as f64;
    let stderr = sample_std(&v) / (v.len() as f64).sqrt();
    let reached = scores.iter().filter(|s| s.reached).count();
    println!("mean {mean:.2}  stderr {stderr:.2}  reached {reached}/{trials}");
    Ok(())
}

fn run_live(opts: ServeOptions) -> Result<ServeReport> {
    let rt = tokio::runtime::Runtime::new()?;
    Ok(rt.block_on(trayco_serve::serve(opts))?)
}

fn summarize_live(report: &ServeReport) -> Result<()> {
    if report.interrupted {
        println!("stopped after {} blocks", report.log.blocks().count());
    }
    for e in report.log.evals() {
        println!("block {}  mean {:6.1}  reached {}/{}", e.block, e.mean, e.successes, e.n);
    }
    let c = report.cadence;
    println!(
        "cadence: {} step periods, {} outside tolerance, worst deviation {:.1} ms",
        c.periods,
        c.violations,
        c.max_deviation.as_secs_f64() * 1e3
    );
    Ok(())
}

fn write_trace(trace: &TrialTrace, format: Format, mut out: impl Write) -> Result<()> {
    match format {
        Format::Jsonl => {
            for s in &trace.steps {
                serde_json::to_writer(&mut out, s)?;
                writeln!(out)?;
            }
        }
        Format::Csv => {
            let mut w = csv::Writer::from_writer(out);
            let mut header = vec!["step".to_string()];
            header.extend((0..6).map(|i| format!("obs{i}")));
            header.extend(["agent_action", "partner_action", "reward"].map(String::from));
            header.extend((0..6).map(|i| format!("next_obs{i}")));
            header.push("done".into());
            w.write_record(&header)?;
            for (k, s) in trace.steps.iter().enumerate() {
                let mut row = vec![k.to_string()];
                row.extend(s.obs.iter().map(f64::to_string));
                row.extend([s.agent_action, s.partner_action, s.reward].map(|v| v.to_string()));
                row.extend(s.next_obs.iter().map(f64::to_string));
                row.push(s.done.to_string());
                w.write_record(&row)?;
            }
            w.flush()?;
        }
    }
    Ok(())
}
