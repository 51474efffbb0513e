use std::path::Path;

use ppmarl::coordinator::TrainerKind;
use ppmarl::env::EdgeConfig;
use ppmarl::experiment::report::{bench_he, collect_run_dirs, report};
use ppmarl::experiment::sweep::sweep;
use ppmarl::experiment::{attack_existing, run, EnvironmentConfig, ExperimentConfig, RunManifest, RunStatus, TrajectoryLog};
use ppmarl::Error;

fn small(trainer: TrainerKind, seed: u64) -> ExperimentConfig {
    let mut c = ExperimentConfig::default();
    c.trainer.trainer = trainer;
    c.trainer.warmup_steps = 20;
    c.trainer.batch_size = 8;
    c.trainer.hidden = vec![16];
    c.trainer.global_hidden = vec![8];
    c.run.seed = seed;
    c.run.episodes = 6;
    c.evaluation.eval_episodes = 3;
    c.evaluation.attack = true;
    c.evaluation.attacker.max_epochs = 20;
    c
}

fn read(p: &Path) -> String {
    std::fs::read_to_string(p).unwrap()
}

#[test]
fn run_writes_a_verifiable_directory() {
    let tmp = tempfile::tempdir().unwrap();
    let dir = tmp.path().join("r");
    let out = run(&small(TrainerKind::PpMarl, 1), &dir).unwrap();
    assert_eq!(out.metrics.len(), 6);
    assert_eq!(out.evaluation.per_episode.len(), 3);
    assert!(out.privacy.is_some());
    for f in [
        "manifest.json",
        "config.toml",
        "metrics.jsonl",
        "bus.jsonl",
        "trajectory.jsonl",
        "reports/overhead.json",
        "reports/evaluation.json",
        "reports/privacy.json",
        "eval/public.jsonl",
        "eval/private.jsonl",
        "checkpoints/final/agent0_actor.json",
        "checkpoints/final/global0_critic.json",
    ] {
        assert!(dir.join(f).exists(), "{f} missing");
    }
    let m = RunManifest::read(&dir).unwrap();
    assert_eq!(m.status, RunStatus::Completed);
    m.verify(&dir).unwrap();

    std::fs::write(dir.join("metrics.jsonl"), "{}\n").unwrap();
    assert!(matches!(m.verify(&dir), Err(Error::Integrity(_))));
}

#[test]
fn runs_are_deterministic() {
    let tmp = tempfile::tempdir().unwrap();
    let cfg = small(TrainerKind::PpMarl, 4);
    run(&cfg, &tmp.path().join("a")).unwrap();
    run(&cfg, &tmp.path().join("b")).unwrap();
    for f in ["metrics.jsonl", "bus.jsonl", "trajectory.jsonl", "reports/evaluation.json", "reports/privacy.json"] {
        assert_eq!(read(&tmp.path().join("a").join(f)), read(&tmp.path().join("b").join(f)), "{f}");
    }
}

#[test]
fn zero_episodes_still_yields_a_manifest() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(TrainerKind::Ddpg, 0);
    cfg.run.episodes = 0;
    cfg.evaluation.attack = false;
    let dir = tmp.path().join("z");
    run(&cfg, &dir).unwrap();
    RunManifest::read(&dir).unwrap().verify(&dir).unwrap();
}

#[test]
fn rerun_replaces_a_run_but_not_foreign_directories() {
    let tmp = tempfile::tempdir().unwrap();
    let mut cfg = small(TrainerKind::Ddpg, 0);
    cfg.run.episodes = 1;
    cfg.evaluation.attack = false;
    let dir = tmp.path().join("r");
    run(&cfg, &dir).unwrap();
    run(&cfg, &dir).unwrap();
    let foreign = tmp.path().join("f");
    std::fs::create_dir_all(&foreign).unwrap();
    std::fs::write(foreign.join("notes.txt"), "keep").unwrap();
    assert!(run(&cfg, &foreign).is_err());
    assert_eq!(read(&foreign.join("notes.txt")), "keep");
}

#[test]
fn report_and_reattack() {
    let tmp = tempfile::tempdir().unwrap();
    let mut dirs = Vec::new();
    for (k, t) in [TrainerKind::PpMarl, TrainerKind::Maddpg, TrainerKind::Ddpg].into_iter().enumerate() {
        let d = tmp.path().join(format!("r{k}"));
        run(&small(t, 2), &d).unwrap();
        dirs.push(d);
    }
    let rep = report(&dirs, &tmp.path().join("rep")).unwrap();
    assert_eq!(rep.table.len(), 3);
    for f in ["table1.csv", "overhead_ratios.csv", "learning_curves.csv", "report.json"] {
        assert!(tmp.path().join("rep").join(f).exists());
    }
    let pp_vs_maddpg = rep
        .overhead_ratios
        .iter()
        .find(|r| r.scheme == "pp_marl" && r.baseline == "maddpg")
        .unwrap();
    assert!(pp_vs_maddpg.bandwidth_ratio.unwrap() < 1.0);

    let before = read(&dirs[0].join("reports/privacy.json"));
    let again = attack_existing(&dirs[0]).unwrap();
    assert_eq!(serde_json::to_string_pretty(&again).unwrap().trim(), before.trim());
    RunManifest::read(&dirs[0]).unwrap().verify(&dirs[0]).unwrap();
}

#[test]
fn report_refuses_mixed_environments() {
    let tmp = tempfile::tempdir().unwrap();
    let mut a = small(TrainerKind::Ddpg, 0);
    a.run.episodes = 1;
    a.evaluation.attack = false;
    let mut b = a.clone();
    b.environment = EnvironmentConfig::Edge(EdgeConfig::default());
    b.evaluation.eval_episodes = 1;
    b.evaluation.trajectory = TrajectoryLog::None;
    run(&a, &tmp.path().join("a")).unwrap();
    run(&b, &tmp.path().join("b")).unwrap();
    let e = report(&[tmp.path().join("a"), tmp.path().join("b")], &tmp.path().join("rep")).unwrap_err();
    assert!(matches!(e, Error::Comparison(_)), "{e}");
}

#[test]
fn edge_run_reports_db_baseline_and_hours() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small(TrainerKind::PpMarl, 3);
    c.environment = EnvironmentConfig::Edge(EdgeConfig::default());
    c.run.episodes = 2;
    c.evaluation.eval_episodes = 1;
    c.evaluation.attack = false;
    let out = run(&c, &tmp.path().join("e")).unwrap();
    assert!(out.evaluation.baseline_mean.unwrap() > 0.0);
    let hourly = out.evaluation.hourly.unwrap();
    assert_eq!(hourly.len(), 24);
    assert!(hourly.iter().all(|h| h.steps > 0));
}

#[test]
fn sweep_runs_children_and_writes_coverage_table() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small(TrainerKind::Ddpg, 0);
    c.run.episodes = 1;
    c.evaluation.attack = false;
    c.sweep.set_axis("obs_range", &["low".into(), "high".into()]).unwrap();
    c.sweep.set_axis("seed", &["1".into(), "2".into()]).unwrap();
    let s = sweep(&c, tmp.path(), 2).unwrap();
    assert_eq!(s.children.len(), 4);
    assert_eq!(s.failures(), 0);
    let csv = read(&tmp.path().join("coverage_by_range.csv"));
    assert_eq!(csv.lines().count(), 3, "{csv}");
    assert_eq!(collect_run_dirs(&[tmp.path().to_path_buf()]).unwrap().len(), 4);
}

#[test]
fn he_bench_reports_positive_costs() {
    let b = bench_he(512, 4, 0).unwrap();
    assert!(b.h > 1.0 && b.scale_us > 0.0 && b.f64_mul_ns > 0.0);
}

#[test]
fn shipped_experiment_configs_validate() {
    let dir = Path::new(env!("CARGO_MANIFEST_DIR")).join("../../experiments");
    let mut n = 0;
    for entry in std::fs::read_dir(&dir).unwrap() {
        let p = entry.unwrap().path();
        if p.extension().is_some_and(|e| e == "toml") {
            let c = ExperimentConfig::load(&p).unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            c.validate().unwrap_or_else(|e| panic!("{}: {e}", p.display()));
            n += 1;
        }
    }
    assert!(n >= 5);
}

#[test]
fn sweep_aggregates_match_per_run_recomputation() {
    let tmp = tempfile::tempdir().unwrap();
    let mut c = small(TrainerKind::Ddpg, 0);
    c.run.episodes = 2;
    c.evaluation.attack = false;
    c.sweep.set_axis("obs_range", &["low".into()]).unwrap();
    c.sweep.set_axis("seed", &["1".into(), "2".into(), "3".into()]).unwrap();
    let s = sweep(&c, tmp.path(), 1).unwrap();
    let mut per_run = Vec::new();
    for child in &s.children {
        let eval: serde_json::Value = serde_json::from_str(&read(&child.run_dir.join("reports/evaluation.json"))).unwrap();
        let episodes: Vec<f64> = serde_json::from_value(eval["per_episode"].clone()).unwrap();
        let m = episodes.iter().sum::<f64>() / episodes.len() as f64;
        assert_eq!(child.mean_metric, Some(m));
        per_run.push(m);
    }
    let rows = ppmarl::experiment::sweep::coverage_rows(&s);
    assert_eq!(rows.len(), 1);
    let mean = per_run.iter().sum::<f64>() / 3.0;
    assert!((rows[0].mean_coverage - mean).abs() < 1e-12);
    assert_eq!(rows[0].n_runs, 3);
    assert!(rows[0].ci_lo <= mean && mean <= rows[0].ci_hi);
}
