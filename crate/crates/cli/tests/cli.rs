use std::path::{Path, PathBuf};
use std::process::{Command, Output};

use trayco_core::harness::{read_traces, Schedule, CHECKPOINT_FILE, LOG_FILE, TRACES_FILE};
use trayco_core::{RunConfig, RunLog};

fn trayco(args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_trayco"))
        .args(args)
        .env("RUST_LOG", "warn")
        .output()
        .expect("binary runs")
}

fn ok(out: &Output) -> String {
    assert!(
        out.status.success(),
        "exit {:?}\nstdout:\n{}\nstderr:\n{}",
        out.status,
        String::from_utf8_lossy(&out.stdout),
        String::from_utf8_lossy(&out.stderr)
    );
    String::from_utf8(out.stdout.clone()).unwrap()
}

fn configs_dir() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

const TINY: &str = r#"
seed = 4

[sac]
hidden = 8
batch_size = 16
random_steps = 30

[schedule]
total_interaction_steps = 80
updates_per_block = 10
block_size = 40
eval_trials = 3
step_cap = 200
"#;

#[test]
fn train_eval_replay_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(&cfg_path, TINY).unwrap();
    let out = dir.path().join("run");
    let cfg = cfg_path.to_str().unwrap();
    let out_s = out.to_str().unwrap();

    let stdout = ok(&trayco(&["train", "--config", cfg, "--out", out_s, "--seed", "9"]));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("block")).count(), 2);
    for f in [LOG_FILE, TRACES_FILE, CHECKPOINT_FILE, "config.toml", "ckpt-block-1.bin", "ckpt-block-2.bin"] {
        assert!(out.join(f).exists(), "missing {f}");
    }
    let log = RunLog::read(&out.join(LOG_FILE)).unwrap();
    assert_eq!(log.header().unwrap().seed, 9);
    assert_eq!(log.trials().count(), 6);

    // eval: one line per trial plus a summary.
    let ckpt = out.join(CHECKPOINT_FILE);
    let ckpt_s = ckpt.to_str().unwrap();
    let stdout = ok(&trayco(&["eval", "--checkpoint", ckpt_s, "--trials", "4", "--partner", "frozen"]));
    assert_eq!(stdout.lines().filter(|l| l.starts_with("trial")).count(), 4);
    assert!(stdout.lines().last().unwrap().starts_with("mean"));

    // Trained with seed 9, so the file's own config (seed 4) does not match.
    let bad = trayco(&["eval", "--checkpoint", ckpt_s, "--trials", "2", "--config", cfg]);
    assert!(!bad.status.success());
    assert!(String::from_utf8_lossy(&bad.stderr).contains("different config"));
    let saved_cfg = out.join("config.toml");
    ok(&trayco(&["eval", "--checkpoint", ckpt_s, "--trials", "2", "--config", saved_cfg.to_str().unwrap()]));

    // replay: rewards in the dump re-sum to the recorded return.
    let trace = &read_traces(&out.join(TRACES_FILE)).unwrap()[4];
    let id = trace.trial_id.to_string();
    let jsonl = ok(&trayco(&["replay", "--run", out_s, "--trial", &id, "--format", "jsonl"]));
    let rewards: f64 = jsonl
        .lines()
        .map(|l| serde_json::from_str::<serde_json::Value>(l).unwrap()["reward"].as_f64().unwrap())
        .sum();
    assert_eq!(jsonl.lines().count(), trace.steps.len());
    assert_eq!(rewards, trace.total_return);

    let csv = ok(&trayco(&["replay", "--run", out_s, "--trial", &id, "--format", "csv"]));
    let mut lines = csv.lines();
    assert!(lines.next().unwrap().starts_with("step,obs0,"));
    assert_eq!(lines.count(), trace.steps.len());

    let missing = trayco(&["replay", "--run", out_s, "--trial", "999"]);
    assert!(!missing.status.success());
}

#[test]
fn resume_continues_to_the_same_log() {
    let dir = tempfile::tempdir().unwrap();
    let cfg_path = dir.path().join("tiny.toml");
    std::fs::write(&cfg_path, TINY).unwrap();
    let cfg = cfg_path.to_str().unwrap();

    let full = dir.path().join("full");
    ok(&trayco(&["train", "--config", cfg, "--out", full.to_str().unwrap()]));

    // Stop a copy after its first block by restoring the block-1 checkpoint.
    let part = dir.path().join("part");
    ok(&trayco(&["train", "--config", cfg, "--out", part.to_str().unwrap()]));
    std::fs::copy(part.join("ckpt-block-1.bin"), part.join(CHECKPOINT_FILE)).unwrap();
    ok(&trayco(&["train", "--config", cfg, "--out", part.to_str().unwrap(), "--resume"]));

    let a = RunLog::read(&full.join(LOG_FILE)).unwrap().without_wall_time();
    let b = RunLog::read(&part.join(LOG_FILE)).unwrap().without_wall_time();
    assert_eq!(a, b);
}

#[test]
fn bad_arguments_fail_cleanly() {
    let dir = tempfile::tempdir().unwrap();
    let out = dir.path().join("x");
    let r = trayco(&["train", "--out", out.to_str().unwrap(), "--partner", "wizard"]);
    assert!(!r.status.success());
    let r = trayco(&["eval", "--checkpoint", "/nonexistent/ckpt.bin"]);
    assert!(!r.status.success());
    let r = trayco(&["replay", "--run", ".", "--trial", "0", "--format", "xml"]);
    assert!(!r.status.success());
}

#[test]
fn shipped_configs_load() {
    let e1 = RunConfig::load(&configs_dir().join("experiment1.toml")).unwrap();
    assert_eq!(e1, RunConfig::default());
    assert_eq!(e1.schedule, Schedule::experiment_1());
    let e2 = RunConfig::load(&configs_dir().join("experiment2.toml")).unwrap();
    assert_eq!(e2.schedule, Schedule::experiment_2());
    for f in ["live.toml", "novice.toml"] {
        RunConfig::load(&configs_dir().join(f)).unwrap().validate().unwrap();
    }
}
