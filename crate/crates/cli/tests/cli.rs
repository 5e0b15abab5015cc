use std::fs;
use std::path::{Path, PathBuf};
use std::process::{Command, Output};

const SMALL: &str = r#"
name = "small"
setting = "coop"

[fixture]
kind = "chain"
n_states = 3
n_agents = 2
slip = 0.1
gamma = 0.8
r_max = 1.0
reward_noise = 0.2

[schedule]
kind = "ring"

[data]
length = 500
burn_in = 20

[run]
iterations = 3
rounds = 100
alpha_scale = 0.1

[sweep]
seeds = [0, 1]
"#;

fn marl(root: &Path, args: &[&str]) -> Output {
    Command::new(env!("CARGO_BIN_EXE_marl"))
        .args(args)
        .env("MARL_OUTPUT_ROOT", root)
        .output()
        .unwrap()
}

fn write_config(dir: &Path, name: &str, text: &str) -> String {
    let path = dir.join(name);
    fs::write(&path, text).unwrap();
    path.to_str().unwrap().to_string()
}

fn configs() -> PathBuf {
    Path::new(env!("CARGO_MANIFEST_DIR")).join("../../configs")
}

#[test]
fn run_coop_writes_under_the_output_root() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = marl(tmp.path(), &["run-coop", &cfg]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let dir = tmp.path().join("small");
    assert!(dir.join("results.csv").exists());
    assert!(dir.join("runs/n2_t500_l100_k3/theta.csv").exists());
    assert!(dir.join("runs/n2_t500_l100_k3/policy.csv").exists());
    assert!(dir.join("runs/n2_t500_l100_k3/trace.csv").exists());
}

#[test]
fn overrides_change_the_run() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = marl(tmp.path(), &["run-coop", &cfg, "--iterations", "2", "--rounds", "10"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    assert!(tmp.path().join("small/runs/n2_t500_l10_k2").exists());
    assert_eq!(marl(tmp.path(), &["run-coop", &cfg, "--iterations", "0"]).status.code(), Some(2));
}

#[test]
fn wrong_setting_and_malformed_configs_exit_2() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    assert_eq!(marl(tmp.path(), &["run-compet", &cfg]).status.code(), Some(2));
    let bad = write_config(tmp.path(), "bad.toml", "name = \"x\"\n[fixture\n");
    let out = marl(tmp.path(), &["sweep", &bad]);
    assert_eq!(out.status.code(), Some(2));
    assert!(String::from_utf8_lossy(&out.stderr).contains("error"));
    assert_eq!(marl(tmp.path(), &["validate", "/nonexistent.toml"]).status.code(), Some(2));
}

#[test]
fn divergent_step_size_exits_3() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let out = marl(tmp.path(), &["run-coop", &cfg, "--alpha", "1000"]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn disconnected_schedule_fails_validation_with_3() {
    let tmp = tempfile::tempdir().unwrap();
    let text = SMALL.replace(
        "[schedule]\nkind = \"ring\"",
        "[schedule]\nkind = \"explicit\"\nrounds = [[]]",
    );
    let cfg = write_config(tmp.path(), "disc.toml", &text);
    let out = marl(tmp.path(), &["validate", &cfg]);
    assert_eq!(out.status.code(), Some(3), "{}", String::from_utf8_lossy(&out.stderr));
}

#[test]
fn validate_accepts_shipped_configs() {
    let tmp = tempfile::tempdir().unwrap();
    for name in ["coop_garnet.toml", "compet_game.toml"] {
        let path = configs().join(name);
        let out = marl(tmp.path(), &["validate", path.to_str().unwrap()]);
        assert!(out.status.success(), "{name}: {}", String::from_utf8_lossy(&out.stderr));
        let stdout = String::from_utf8_lossy(&out.stdout);
        assert!(stdout.contains("chi") && stdout.trim_end().ends_with("ok"), "{stdout}");
    }
}

#[test]
fn sweep_then_plotdata() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = write_config(tmp.path(), "small.toml", SMALL);
    let custom = tmp.path().join("custom");
    let out = marl(tmp.path(), &["sweep", &cfg, "--out", custom.to_str().unwrap()]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let results = custom.join("results.csv");
    assert_eq!(fs::read_to_string(&results).unwrap().lines().count(), 3);

    let r = results.to_str().unwrap();
    let out = marl(tmp.path(), &["plotdata", r, "--x", "seed", "--y", "q_error", "--group", "rounds"]);
    assert!(out.status.success(), "{}", String::from_utf8_lossy(&out.stderr));
    let long = custom.join("plots/q_error_vs_seed_by_rounds.csv");
    assert_eq!(fs::read_to_string(long).unwrap().lines().count(), 3);

    let out = marl(tmp.path(), &["plotdata", r, "--x", "seed", "--y", "nope"]);
    assert_eq!(out.status.code(), Some(2));
}
