use std::path::Path;
use std::process::{Command, Output};

fn run(dir: &Path, args: &[&str]) -> Output {
    let out = Command::new(env!("CARGO_BIN_EXE_ba-lambda"))
        .args(["--out-dir", dir.to_str().unwrap()])
        .args(args)
        .output()
        .unwrap();
    assert!(out.status.success(), "{args:?}: {}", String::from_utf8_lossy(&out.stderr));
    out
}

#[test]
fn generate_then_solve_a_bal_file() {
    let dir = tempfile::tempdir().unwrap();
    run(dir.path(), &["generate", "--count", "2", "--first-seed", "5"]);
    let bal = dir.path().join("synthetic-6.bal");
    assert!(bal.exists());
    run(dir.path(), &["--deterministic-time", "solve", "--bal", bal.to_str().unwrap(), "--policy", "fixed", "--value", "1e-4"]);
    let trace = std::fs::read_to_string(dir.path().join("solve_trace.csv")).unwrap();
    assert!(trace.lines().count() > 1);
    assert!(dir.path().join("solve_summary.json").exists());
}

#[test]
fn train_eval_profile_round_trip() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("run.toml");
    std::fs::write(&config, "train_scenes = 2\ntest_scenes = 2\n[train]\nepisodes = 3\nrandom_warmup_actions = 10\nbatch_size = 8\n").unwrap();
    let c = config.to_str().unwrap();
    run(dir.path(), &["--config", c, "--deterministic-time", "train"]);
    assert!(dir.path().join("agent.json").exists());
    let out = run(dir.path(), &["--config", c, "--deterministic-time", "eval", "--agent", "agent.json", "--with-scheduler"]);
    let table = String::from_utf8(out.stdout).unwrap();
    for label in ["classic-standard", "agent", "constant_scheduler"] {
        assert!(table.lines().any(|l| l.starts_with(&format!("{label},"))), "{table}");
    }
    run(dir.path(), &["--config", c, "profile"]);
    assert!(dir.path().join("profile_tau_0.1.csv").exists());
}

#[test]
fn unknown_config_keys_are_errors() {
    let dir = tempfile::tempdir().unwrap();
    let config = dir.path().join("bad.toml");
    std::fs::write(&config, "[train]\nwarmup_actions = 3\n").unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_ba-lambda"))
        .args(["--config", config.to_str().unwrap(), "--out-dir", dir.path().to_str().unwrap(), "generate"])
        .output()
        .unwrap();
    assert!(!out.status.success());
}
