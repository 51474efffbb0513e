//! Grid sweeps over observation range, trainer and seed.

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};
use std::sync::atomic::{AtomicUsize, Ordering};
use std::sync::Mutex;

use serde::{Deserialize, Serialize};

use super::{run, write_json, EnvironmentConfig, ExperimentConfig, SweepConfig};
use crate::error::{Error, Result};
use crate::evaluation::stats;

pub const SWEEP_FILE: &str = "sweep.json";
pub const COVERAGE_FILE: &str = "coverage_by_range.csv";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChildResult {
    pub name: String,
    pub run_dir: PathBuf,
    pub scheme: String,
    pub seed: u64,
    pub obs_range_m: Option<f64>,
    pub mean_metric: Option<f64>,
    pub error: Option<String>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepSummary {
    pub config_hash: String,
    pub children: Vec<ChildResult>,
}

impl SweepSummary {
    pub fn failures(&self) -> usize {
        self.children.iter().filter(|c| c.error.is_some()).count()
    }
}

/// One config per grid point, with the sweep section removed and a
/// distinct run name.
pub fn expand(config: &ExperimentConfig) -> Result<Vec<ExperimentConfig>> {
    let s = &config.sweep;
    s.validate()?;
    let ranges: Vec<Option<_>> = match &s.obs_range {
        Some(v) => v.iter().copied().map(Some).collect(),
        None => vec![None],
    };
    let trainers = s.trainer.clone().unwrap_or_else(|| vec![config.trainer.trainer]);
    let seeds = s.seed.clone().unwrap_or_else(|| vec![config.run.seed]);
    let mut out = Vec::new();
    for r in &ranges {
        for t in &trainers {
            for seed in &seeds {
                let mut c = config.clone();
                c.sweep = SweepConfig::default();
                c.trainer.trainer = *t;
                c.run.seed = *seed;
                if let Some(r) = r {
                    match &mut c.environment {
                        EnvironmentConfig::Drone(d) => d.obs_range = *r,
                        EnvironmentConfig::Edge(_) => {
                            return Err(Error::Config("obs_range sweeps need the drone environment".into()))
                        }
                    }
                }
                let mut name = format!("{}-{}", c.environment.name(), c.scheme());
                if let (Some(r), EnvironmentConfig::Drone(_)) = (r, &c.environment) {
                    name.push_str(&format!("-r{}", r.meters()));
                }
                name.push_str(&format!("-s{seed}"));
                c.run.name = Some(name);
                c.validate()?;
                out.push(c);
            }
        }
    }
    Ok(out)
}

/// Runs every grid point under `sweep_dir`, `parallel` at a time. Child
/// failures are recorded, not propagated.
pub fn sweep(config: &ExperimentConfig, sweep_dir: &Path, parallel: usize) -> Result<SweepSummary> {
    let children = expand(config)?;
    std::fs::create_dir_all(sweep_dir).map_err(|e| Error::io(sweep_dir, e))?;
    let next = AtomicUsize::new(0);
    let results: Mutex<Vec<Option<ChildResult>>> = Mutex::new(vec![None; children.len()]);
    std::thread::scope(|s| {
        for _ in 0..parallel.max(1).min(children.len().max(1)) {
            s.spawn(|| loop {
                let k = next.fetch_add(1, Ordering::SeqCst);
                let Some(c) = children.get(k) else { break };
                let name = c.run.name.clone().expect("expand names children");
                let dir = sweep_dir.join(&name);
                let outcome = run(c, &dir);
                let obs_range_m = match &c.environment {
                    EnvironmentConfig::Drone(d) if config.sweep.obs_range.is_some() => Some(d.obs_range.meters()),
                    _ => None,
                };
                let res = ChildResult {
                    name,
                    run_dir: dir,
                    scheme: c.scheme(),
                    seed: c.run.seed,
                    obs_range_m,
                    mean_metric: outcome.as_ref().ok().map(|o| o.evaluation.mean_metric),
                    error: outcome.err().map(|e| e.to_string()),
                };
                results.lock().expect("no poisoned workers")[k] = Some(res);
            });
        }
    });
    let summary = SweepSummary {
        config_hash: config.hash(),
        children: results.into_inner().expect("workers joined").into_iter().flatten().collect(),
    };
    write_json(&sweep_dir.join(SWEEP_FILE), &summary)?;
    if config.sweep.obs_range.is_some() {
        write_coverage_csv(&summary, &sweep_dir.join(COVERAGE_FILE))?;
    }
    Ok(summary)
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CoverageRow {
    pub scheme: String,
    pub obs_range_m: f64,
    pub n_runs: usize,
    pub mean_coverage: f64,
    pub ci_lo: f64,
    pub ci_hi: f64,
}

/// Mean evaluation coverage per (scheme, range) with a 95% interval over seeds.
pub fn coverage_rows(summary: &SweepSummary) -> Vec<CoverageRow> {
    let mut groups: BTreeMap<(String, u64), Vec<f64>> = BTreeMap::new();
    for c in &summary.children {
        if let (Some(r), Some(m)) = (c.obs_range_m, c.mean_metric) {
            groups.entry((c.scheme.clone(), r.to_bits())).or_default().push(m);
        }
    }
    groups
        .into_iter()
        .map(|((scheme, r), xs)| {
            let ci = stats::confidence_interval(&xs, 0.95);
            CoverageRow {
                scheme,
                obs_range_m: f64::from_bits(r),
                n_runs: xs.len(),
                mean_coverage: ci.mean,
                ci_lo: ci.lo,
                ci_hi: ci.hi,
            }
        })
        .collect()
}

fn write_coverage_csv(summary: &SweepSummary, path: &Path) -> Result<()> {
    let mut rows = coverage_rows(summary);
    rows.sort_by(|a, b| a.scheme.cmp(&b.scheme).then(a.obs_range_m.total_cmp(&b.obs_range_m)));
    super::report::write_csv(path, &rows)
}
