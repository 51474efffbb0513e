use std::path::Path;
use std::process::{Command, Output};
use std::time::{Duration, Instant};

const SMOKE: &str = r#"
[trainer]
warmup_steps = 5
batch_size = 4
hidden = [8]
global_hidden = [4]

[evaluation]
eval_episodes = 1

[run]
seed = 3
episodes = 1
"#;

fn ppmarl(args: &[&str], cwd: &Path) -> Output {
    Command::new(env!("CARGO_BIN_EXE_ppmarl"))
        .args(args)
        .current_dir(cwd)
        .env_remove("PPMARL_OUTPUT_ROOT")
        .output()
        .unwrap()
}

fn text(o: &Output) -> String {
    format!("{}{}", String::from_utf8_lossy(&o.stdout), String::from_utf8_lossy(&o.stderr))
}

#[test]
fn smoke_run_is_fast_and_complete() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.toml"), SMOKE).unwrap();
    let t = Instant::now();
    let o = ppmarl(&["run", "--config", "smoke.toml", "--out", "r"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    assert!(t.elapsed() < Duration::from_secs(10));
    let manifest = std::fs::read_to_string(tmp.path().join("r/manifest.json")).unwrap();
    assert!(manifest.contains("\"completed\""));
}

#[test]
fn seed_flag_and_default_run_dir() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.toml"), SMOKE).unwrap();
    let o = ppmarl(&["run", "--config", "smoke.toml", "--seed", "9"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    assert!(tmp.path().join("runs/drone-pp_marl-s9/manifest.json").exists());
}

#[test]
fn output_root_variable_relocates_relative_output() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.toml"), SMOKE).unwrap();
    let o = Command::new(env!("CARGO_BIN_EXE_ppmarl"))
        .args(["run", "--config", "smoke.toml"])
        .current_dir(tmp.path())
        .env("PPMARL_OUTPUT_ROOT", tmp.path().join("elsewhere"))
        .output()
        .unwrap();
    assert!(o.status.success(), "{}", text(&o));
    assert!(tmp.path().join("elsewhere/runs/drone-pp_marl-s3/manifest.json").exists());
}

#[test]
fn unknown_key_is_a_config_error_naming_the_key() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("bad.toml"), "[run]\nepisodez = 3\n").unwrap();
    let o = ppmarl(&["run", "--config", "bad.toml"], tmp.path());
    assert_eq!(o.status.code(), Some(2));
    assert!(text(&o).contains("episodez"), "{}", text(&o));
}

#[test]
fn sweep_rejects_unsweepable_axis_and_empty_values() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.toml"), SMOKE).unwrap();
    let o = ppmarl(&["sweep", "--config", "smoke.toml", "--axis", "gamma", "--values", "0.9"], tmp.path());
    assert_eq!(o.status.code(), Some(2), "{}", text(&o));
    let o = ppmarl(&["sweep", "--config", "smoke.toml", "--axis", "seed", "--values", ""], tmp.path());
    assert!(!o.status.success());
}

#[test]
fn sweep_then_report() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.toml"), SMOKE).unwrap();
    let o = ppmarl(
        &["sweep", "--config", "smoke.toml", "--axis", "obs_range", "--values", "low,medium,high", "--out", "sw", "--parallel", "3"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let csv = std::fs::read_to_string(tmp.path().join("sw/coverage_by_range.csv")).unwrap();
    assert_eq!(csv.lines().count(), 4);
    // different observation ranges are different environments
    let o = ppmarl(&["report", "sw", "--out", "rep"], tmp.path());
    assert_eq!(o.status.code(), Some(1), "{}", text(&o));
    assert!(text(&o).contains("comparison"));

    let o = ppmarl(
        &["sweep", "--config", "smoke.toml", "--axis", "trainer", "--values", "pp_marl,maddpg,ddpg", "--out", "tr"],
        tmp.path(),
    );
    assert!(o.status.success(), "{}", text(&o));
    let o = ppmarl(&["report", "tr", "--out", "rep"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    let table = std::fs::read_to_string(tmp.path().join("rep/table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 4, "{table}");
}

#[test]
fn single_run_report_has_one_row_and_attack_reruns() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = SMOKE.replace("eval_episodes = 1", "eval_episodes = 1\nattack = true")
        .replace("episodes = 1\n", "episodes = 4\n");
    std::fs::write(tmp.path().join("a.toml"), cfg).unwrap();
    let o = ppmarl(&["run", "--config", "a.toml", "--out", "r"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    let o = ppmarl(&["report", "r", "--out", "rep"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    let table = std::fs::read_to_string(tmp.path().join("rep/table1.csv")).unwrap();
    assert_eq!(table.lines().count(), 2, "{table}");
    let o = ppmarl(&["attack", "r"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"rmse\""));
}

#[test]
fn report_refuses_tampered_runs() {
    let tmp = tempfile::tempdir().unwrap();
    std::fs::write(tmp.path().join("smoke.toml"), SMOKE).unwrap();
    assert!(ppmarl(&["run", "--config", "smoke.toml", "--out", "r"], tmp.path()).status.success());
    std::fs::write(tmp.path().join("r/metrics.jsonl"), "").unwrap();
    let o = ppmarl(&["report", "r", "--out", "rep"], tmp.path());
    assert!(!o.status.success());
    assert!(text(&o).contains("integrity"), "{}", text(&o));
}

#[test]
fn bench_he_prints_h() {
    let tmp = tempfile::tempdir().unwrap();
    let o = ppmarl(&["bench-he", "--key-bits", "512", "--samples", "4"], tmp.path());
    assert!(o.status.success(), "{}", text(&o));
    assert!(String::from_utf8_lossy(&o.stdout).contains("\"h\""));
}
