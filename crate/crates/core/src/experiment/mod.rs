//! Experiment runner: config in, run directory out.
//!
//! ```text
//! run_dir/
//!   manifest.json        config hash, timing, sha256 of every other file
//!   config.toml          resolved config
//!   metrics.jsonl        one record per training episode
//!   bus.jsonl            one record per message (evaluation.bus_log)
//!   trajectory.jsonl     per-step records (evaluation.trajectory)
//!   checkpoints/<tag>/   one JSON network checkpoint per file
//!   reports/             overhead.json, evaluation.json, privacy.json
//!   eval/                evaluation-only attack inputs (public.jsonl, private.jsonl)
//! ```

mod config;
pub mod manifest;
pub mod report;
pub mod sweep;

use std::collections::BTreeMap;
use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

pub use config::{EnvironmentConfig, EvaluationConfig, ExperimentConfig, RunConfig, SweepConfig, TrajectoryLog, SWEEP_AXES};
pub use manifest::{RunManifest, RunStatus};

use crate::agent::{Experience, MemoryId};
use crate::bus::{Bus, BusTotals, MessageKind};
use crate::coordinator::{build_trainer, Trainer, TrainerKind, TrainerSpec};
use crate::env::edge::db_assignment;
use crate::env::{DroneEnv, EdgeEnv, MultiAgentEnv};
use crate::error::{Error, Result};
use crate::evaluation::{self, Exposure, Harvester, OverheadReport, PrivacyReport, PrivateRecord, Workload};
use crate::rng;

/// Overrides the parent directory of relative `run.output_dir` values.
pub const OUTPUT_ROOT_ENV: &str = "PPMARL_OUTPUT_ROOT";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpisodeMetrics {
    pub episode: usize,
    #[serde(rename = "return")]
    pub episode_return: f64,
    /// Summed coverage (drone) or mean delay in ms (edge).
    pub metric: f64,
    pub critic_loss: Option<f64>,
    /// Mean global critic value over the episode's batches, when visible.
    #[serde(default, skip_serializing_if = "Option::is_none")]
    pub mean_q: Option<f64>,
    pub updates: u64,
    pub env_steps: u64,
    pub bytes: u64,
    pub messages: u64,
    pub bytes_by_kind: BTreeMap<String, u64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourBin {
    pub hour: usize,
    pub steps: usize,
    pub mean_delay_ms: f64,
    pub db_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EvaluationSummary {
    pub scheme: String,
    pub environment: String,
    pub metric_name: String,
    pub episodes: usize,
    pub mean_metric: f64,
    pub per_episode: Vec<f64>,
    /// Distance-based greedy assignment on the same slots (edge only).
    pub baseline_mean: Option<f64>,
    pub baseline_per_episode: Option<Vec<f64>>,
    pub hourly: Option<Vec<HourBin>>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub run_dir: PathBuf,
    pub metrics: Vec<EpisodeMetrics>,
    pub evaluation: EvaluationSummary,
    pub overhead: OverheadReport,
    pub privacy: Option<PrivacyReport>,
}

#[derive(Debug, Clone, Serialize)]
struct TrajectoryRecord<'a> {
    phase: &'a str,
    episode: usize,
    step: usize,
    state: serde_json::Value,
    actions: &'a [Vec<f64>],
    reward: f64,
    metric: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    hour: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    db_metric: Option<f64>,
}

enum EnvInstance {
    Drone(DroneEnv),
    Edge(Box<EdgeEnv>),
}

impl EnvInstance {
    fn build(cfg: &EnvironmentConfig) -> Result<Self> {
        Ok(match cfg {
            EnvironmentConfig::Drone(d) => EnvInstance::Drone(DroneEnv::new(d.clone())?),
            EnvironmentConfig::Edge(e) => EnvInstance::Edge(Box::new(EdgeEnv::new(e.clone())?)),
        })
    }

    fn env(&mut self) -> &mut dyn MultiAgentEnv {
        match self {
            EnvInstance::Drone(d) => d,
            EnvInstance::Edge(e) => e.as_mut(),
        }
    }

    /// Delay the distance-based greedy policy would get on the current slot.
    fn db_metric(&self) -> Option<f64> {
        match self {
            EnvInstance::Drone(_) => None,
            EnvInstance::Edge(e) => Some(e.slot_mean_delay(&db_assignment(&e.config, e.positions()))),
        }
    }

    fn is_edge(&self) -> bool {
        matches!(self, EnvInstance::Edge(_))
    }

    fn metric_name(&self) -> &'static str {
        if self.is_edge() {
            "mean_delay_ms"
        } else {
            "summed_coverage"
        }
    }

    /// Episode aggregate of per-step metrics.
    fn aggregate(&self, steps: &[f64]) -> f64 {
        if self.is_edge() {
            evaluation::stats::mean(steps)
        } else {
            steps.iter().sum()
        }
    }
}

/// Where a run writes: `--out` wins, then the output-root variable for
/// relative output directories, then the config's own directory.
pub fn resolve_run_dir(config: &ExperimentConfig, out: Option<&Path>) -> PathBuf {
    let parent = match out {
        Some(o) => o.to_path_buf(),
        None => match std::env::var_os(OUTPUT_ROOT_ENV) {
            Some(root) if config.run.output_dir.is_relative() => PathBuf::from(root).join(&config.run.output_dir),
            _ => config.run.output_dir.clone(),
        },
    };
    parent.join(config.run.name.clone().unwrap_or_else(|| config.default_run_name()))
}

fn prepare_dir(dir: &Path) -> Result<()> {
    if dir.exists() {
        let has_manifest = dir.join(manifest::MANIFEST_FILE).exists();
        let empty = std::fs::read_dir(dir).map_err(|e| Error::io(dir, e))?.next().is_none();
        if has_manifest {
            std::fs::remove_dir_all(dir).map_err(|e| Error::io(dir, e))?;
        } else if !empty {
            return Err(Error::Config(format!(
                "{} exists and is not a run directory; refusing to overwrite",
                dir.display()
            )));
        }
    }
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

fn create(path: &Path) -> Result<BufWriter<File>> {
    if let Some(p) = path.parent() {
        std::fs::create_dir_all(p).map_err(|e| Error::io(p, e))?;
    }
    Ok(BufWriter::new(File::create(path).map_err(|e| Error::io(path, e))?))
}

fn write_json_line<T: Serialize>(w: &mut impl Write, value: &T, path: &Path) -> Result<()> {
    serde_json::to_writer(&mut *w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))
}

pub(crate) fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut w = create(path)?;
    serde_json::to_writer_pretty(&mut w, value)?;
    w.write_all(b"\n").map_err(|e| Error::io(path, e))?;
    w.flush().map_err(|e| Error::io(path, e))
}

pub(crate) fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_str(&text)?)
}

pub(crate) fn read_json_lines<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<Vec<T>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
    text.lines()
        .filter(|l| !l.trim().is_empty())
        .map(|l| serde_json::from_str(l).map_err(Error::from))
        .collect()
}

fn write_checkpoints(trainer: &dyn Trainer, dir: &Path) -> Result<()> {
    std::fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    for (name, net) in trainer.networks() {
        let p = dir.join(format!("{name}.json"));
        std::fs::write(&p, net.to_checkpoint_json()).map_err(|e| Error::io(&p, e))?;
    }
    Ok(())
}

fn by_kind(t: &BusTotals) -> BTreeMap<String, u64> {
    MessageKind::ALL
        .iter()
        .filter(|k| t.bytes_of(**k) > 0)
        .map(|k| (k.name().to_string(), t.bytes_of(*k)))
        .collect()
}

/// Trains, evaluates and writes a complete run directory. On failure the
/// partial outputs stay and the manifest is marked failed.
pub fn run(config: &ExperimentConfig, run_dir: &Path) -> Result<RunOutcome> {
    config.validate()?;
    prepare_dir(run_dir)?;
    let cfg_path = run_dir.join(manifest::CONFIG_FILE);
    std::fs::write(&cfg_path, config.to_toml()).map_err(|e| Error::io(&cfg_path, e))?;
    let mut manifest = RunManifest::new(config.hash(), config.run.seed, config.scheme());
    manifest.write(run_dir)?;
    match run_inner(config, run_dir) {
        Ok(outcome) => {
            manifest.status = RunStatus::Completed;
            manifest.finished_at = Some(manifest::now());
            manifest.write(run_dir)?;
            Ok(outcome)
        }
        Err(e) => {
            manifest.status = RunStatus::Failed;
            manifest.error = Some(e.to_string());
            manifest.finished_at = Some(manifest::now());
            manifest.write(run_dir)?;
            Err(e)
        }
    }
}

fn run_inner(config: &ExperimentConfig, run_dir: &Path) -> Result<RunOutcome> {
    let seed = config.run.seed;
    let eval_cfg = &config.evaluation;
    let mut env = EnvInstance::build(&config.environment)?;
    let (n, obs_dim, action_dim) = {
        let e = env.env();
        (e.n_agents(), e.obs_dim(), e.action_dim())
    };
    let spec = TrainerSpec {
        n_agents: n,
        obs_dim,
        action_dim,
        training: config.trainer.clone(),
        privacy: config.privacy.clone(),
        seed,
    };
    let mut bus = Bus::counting().with_link(eval_cfg.link);
    let bus_path = run_dir.join("bus.jsonl");
    if eval_cfg.bus_log {
        bus.set_sink(Box::new(create(&bus_path)?));
    }
    if eval_cfg.attack {
        bus.enable_tap();
    }
    let mut trainer = build_trainer(&spec, bus)?;

    let metrics_path = run_dir.join("metrics.jsonl");
    let mut metrics_w = create(&metrics_path)?;
    let traj_path = run_dir.join("trajectory.jsonl");
    let mut traj_w = match eval_cfg.trajectory {
        TrajectoryLog::None => None,
        _ => Some(create(&traj_path)?),
    };
    let log_train = eval_cfg.trajectory == TrajectoryLog::All;
    let mut harvester = Harvester::new();

    let mut metrics = Vec::with_capacity(config.run.episodes);
    let mut global_step: u64 = 0;
    let mut iterations: u64 = 0;
    let train_start = Instant::now();
    for ep in 0..config.run.episodes {
        let before = trainer.bus().totals().clone();
        let mut obs = env.env().reset(rng::derive(seed, "episode", ep as u64));
        let mut ep_return = 0.0;
        let mut step_metrics = Vec::new();
        let mut losses = Vec::new();
        let mut q_values = Vec::new();
        let mut updates = 0;
        let len = env.env().episode_len();
        for step in 0..len {
            let noise = config.trainer.noise_at(global_step as usize);
            let actions = trainer.act(&obs, noise)?;
            let state = if log_train { Some(env.env().snapshot()) } else { None };
            let db = if log_train { env.db_metric() } else { None };
            let s = env.env().step(&actions)?;
            if let (Some(w), Some(state)) = (traj_w.as_mut(), state) {
                let rec = TrajectoryRecord {
                    phase: "train",
                    episode: ep,
                    step,
                    state,
                    actions: &actions,
                    reward: s.reward,
                    metric: s.metric,
                    hour: s.hour,
                    db_metric: db,
                };
                write_json_line(w, &rec, &traj_path)?;
            }
            let exps = (0..n)
                .map(|i| Experience {
                    observation: obs[i].clone(),
                    action: actions[i].clone(),
                    reward: s.reward,
                    next_observation: s.observations[i].clone(),
                    done: s.done,
                })
                .collect();
            let id = MemoryId::new(
                u32::try_from(ep).map_err(|_| Error::Config("too many episodes".into()))?,
                step as u32,
            );
            trainer.observe(id, exps, s.done)?;
            global_step += 1;
            ep_return += s.reward;
            step_metrics.push(s.metric);
            if global_step > config.trainer.warmup_steps as u64
                && global_step % config.trainer.update_every as u64 == 0
            {
                if let Some(st) = trainer.update()? {
                    losses.push(st.critic_loss);
                    q_values.extend(st.mean_q);
                    updates += 1;
                    iterations += 1;
                }
            }
            if eval_cfg.attack {
                let tap = trainer.bus_mut().take_tap();
                harvester.ingest(tap.iter().map(|(_, m)| m));
            }
            obs = s.observations;
            if s.done {
                break;
            }
        }
        let delta = trainer.bus().totals().since(&before);
        let m = EpisodeMetrics {
            episode: ep,
            episode_return: ep_return,
            metric: env.aggregate(&step_metrics),
            critic_loss: if losses.is_empty() {
                None
            } else {
                Some(evaluation::stats::mean(&losses))
            },
            mean_q: (!q_values.is_empty()).then(|| evaluation::stats::mean(&q_values)),
            updates,
            env_steps: global_step,
            bytes: delta.bytes,
            messages: delta.messages,
            bytes_by_kind: by_kind(&delta),
        };
        write_json_line(&mut metrics_w, &m, &metrics_path)?;
        metrics.push(m);
        if config.run.checkpoint_every > 0 && (ep + 1) % config.run.checkpoint_every == 0 {
            write_checkpoints(trainer.as_ref(), &run_dir.join("checkpoints").join(format!("ep{:06}", ep + 1)))?;
        }
    }
    metrics_w.flush().map_err(|e| Error::io(&metrics_path, e))?;
    trainer.bus_mut().flush()?;
    let train_secs = train_start.elapsed().as_secs_f64();
    write_checkpoints(trainer.as_ref(), &run_dir.join("checkpoints").join("final"))?;

    // noise-free evaluation
    let eval_start = Instant::now();
    let mut per_episode = Vec::new();
    let mut baseline = Vec::new();
    let mut hour_bins: Vec<(usize, f64, f64)> = vec![(0, 0.0, 0.0); 24];
    for k in 0..eval_cfg.eval_episodes {
        let mut obs = env.env().reset(rng::derive(seed, "eval-episode", k as u64));
        let mut step_metrics = Vec::new();
        let mut step_db = Vec::new();
        for step in 0..env.env().episode_len() {
            let actions = trainer.act(&obs, 0.0)?;
            let state = traj_w.as_ref().map(|_| env.env().snapshot());
            let db = env.db_metric();
            let s = env.env().step(&actions)?;
            if let (Some(w), Some(state)) = (traj_w.as_mut(), state) {
                let rec = TrajectoryRecord {
                    phase: "eval",
                    episode: k,
                    step,
                    state,
                    actions: &actions,
                    reward: s.reward,
                    metric: s.metric,
                    hour: s.hour,
                    db_metric: db,
                };
                write_json_line(w, &rec, &traj_path)?;
            }
            if let (Some(h), Some(d)) = (s.hour, db) {
                let b = &mut hour_bins[(h.floor() as usize) % 24];
                b.0 += 1;
                b.1 += s.metric;
                b.2 += d;
            }
            step_metrics.push(s.metric);
            if let Some(d) = db {
                step_db.push(d);
            }
            obs = s.observations;
            if s.done {
                break;
            }
        }
        per_episode.push(env.aggregate(&step_metrics));
        if !step_db.is_empty() {
            baseline.push(env.aggregate(&step_db));
        }
    }
    if let Some(mut w) = traj_w {
        w.flush().map_err(|e| Error::io(&traj_path, e))?;
    }
    let is_edge = env.is_edge();
    let evaluation = EvaluationSummary {
        scheme: config.scheme(),
        environment: config.environment.name().into(),
        metric_name: env.metric_name().into(),
        episodes: per_episode.len(),
        mean_metric: evaluation::stats::mean(&per_episode),
        per_episode,
        baseline_mean: (!baseline.is_empty()).then(|| evaluation::stats::mean(&baseline)),
        baseline_per_episode: (!baseline.is_empty()).then_some(baseline),
        hourly: is_edge.then(|| {
            hour_bins
                .iter()
                .enumerate()
                .map(|(h, (c, m, d))| HourBin {
                    hour: h,
                    steps: *c,
                    mean_delay_ms: if *c > 0 { m / *c as f64 } else { f64::NAN },
                    db_delay_ms: if *c > 0 { d / *c as f64 } else { f64::NAN },
                })
                .collect()
        }),
    };
    let eval_secs = eval_start.elapsed().as_secs_f64();
    let reports = run_dir.join("reports");
    write_json(&reports.join("evaluation.json"), &evaluation)?;

    let workload = Workload {
        environment: config.environment.name().into(),
        n_agents: n,
        obs_dim,
        action_dim,
        batch_size: config.trainer.batch_size,
        q_dim: config.trainer.q_dim,
    };
    let mut overhead = OverheadReport::account(&config.scheme(), workload, trainer.as_ref(), global_step, iterations);
    overhead.wall_clock_s.insert("train".into(), train_secs);
    overhead.wall_clock_s.insert("eval".into(), eval_secs);

    let privacy = if eval_cfg.attack {
        let attack_start = Instant::now();
        let eval_dir = run_dir.join("eval");
        let public = harvester.exposures();
        write_lines(&eval_dir.join("public.jsonl"), &public)?;
        let private: Vec<PrivateRecord> = trainer
            .agents()
            .iter()
            .flat_map(|a| {
                a.memory().dump().into_iter().map(move |(id, e)| PrivateRecord {
                    agent: a.index,
                    id,
                    experience: e.clone(),
                })
            })
            .collect();
        write_lines(&eval_dir.join("private.jsonl"), &private)?;
        let report = attack_run(config, &public, &private)?;
        write_json(&reports.join("privacy.json"), &report)?;
        overhead.wall_clock_s.insert("attack".into(), attack_start.elapsed().as_secs_f64());
        Some(report)
    } else {
        None
    };
    if eval_cfg.accounting {
        write_json(&reports.join("overhead.json"), &overhead)?;
    }
    Ok(RunOutcome {
        run_dir: run_dir.to_path_buf(),
        metrics,
        evaluation,
        overhead,
        privacy,
    })
}

fn write_lines<T: Serialize>(path: &Path, items: &[T]) -> Result<()> {
    let mut w = create(path)?;
    for it in items {
        write_json_line(&mut w, it, path)?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn attack_run(config: &ExperimentConfig, public: &[Exposure], private: &[PrivateRecord]) -> Result<PrivacyReport> {
    // a scheme that publishes nothing leaves the attacker with zero inputs
    let public = (config.trainer.trainer != TrainerKind::Ddpg).then_some(public);
    evaluation::attack(
        &config.scheme(),
        public,
        private,
        &config.evaluation.attacker,
        rng::derive(config.run.seed, "attack", 0),
    )
}

/// Re-runs the inference attack on an existing run directory and refreshes
/// its manifest.
pub fn attack_existing(run_dir: &Path) -> Result<PrivacyReport> {
    let manifest = RunManifest::read(run_dir)?;
    manifest.verify(run_dir)?;
    let config = ExperimentConfig::load(&run_dir.join(manifest::CONFIG_FILE))?;
    let eval_dir = run_dir.join("eval");
    let private: Vec<PrivateRecord> = read_json_lines(&eval_dir.join("private.jsonl"))
        .map_err(|e| Error::Data(format!("run has no evaluation-only private dump: {e}")))?;
    let public: Vec<Exposure> = read_json_lines(&eval_dir.join("public.jsonl"))?;
    let report = attack_run(&config, &public, &private)?;
    write_json(&run_dir.join("reports").join("privacy.json"), &report)?;
    let mut m = manifest;
    m.write(run_dir)?;
    Ok(report)
}
