//! Tables across completed runs, and the HE cost coefficient benchmark.

use std::collections::BTreeMap;
use std::hint::black_box;
use std::path::{Path, PathBuf};
use std::time::Instant;

use serde::{Deserialize, Serialize};

use super::{
    manifest, read_json, read_json_lines, write_json, EpisodeMetrics, EvaluationSummary, ExperimentConfig, RunManifest,
    RunStatus,
};
use crate::error::{Error, Result};
use crate::evaluation::{compare_overheads, stats, OverheadRatio, OverheadReport, PrivacyReport};
use crate::privacy::paillier::{encryption_rng, DEFAULT_FRAC_BITS};
use crate::privacy::{HeOps, KeyPair};

/// One verified run directory.
#[derive(Debug, Clone)]
pub struct LoadedRun {
    pub dir: PathBuf,
    pub manifest: RunManifest,
    pub config: ExperimentConfig,
    pub metrics: Vec<EpisodeMetrics>,
    pub evaluation: EvaluationSummary,
    pub overhead: Option<OverheadReport>,
    pub privacy: Option<PrivacyReport>,
}

impl LoadedRun {
    pub fn load(dir: &Path) -> Result<Self> {
        let manifest = RunManifest::read(dir)?;
        manifest.verify(dir)?;
        if manifest.status != RunStatus::Completed {
            return Err(Error::Integrity(format!("{} did not complete", dir.display())));
        }
        let config = ExperimentConfig::load(&dir.join(manifest::CONFIG_FILE))?;
        let reports = dir.join("reports");
        let optional = |name: &str| {
            let p = reports.join(name);
            p.exists().then_some(p)
        };
        Ok(LoadedRun {
            dir: dir.to_path_buf(),
            metrics: read_json_lines(&dir.join("metrics.jsonl"))?,
            evaluation: read_json(&reports.join("evaluation.json"))?,
            overhead: optional("overhead.json").map(|p| read_json(&p)).transpose()?,
            privacy: optional("privacy.json").map(|p| read_json(&p)).transpose()?,
            manifest,
            config,
        })
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SchemeRow {
    pub scheme: String,
    pub runs: usize,
    pub metric_name: String,
    pub metric_mean: f64,
    pub metric_ci_lo: f64,
    pub metric_ci_hi: f64,
    pub baseline_mean: Option<f64>,
    pub privacy_rmse: Option<f64>,
    pub mean_predictor_rmse: Option<f64>,
    pub bytes_per_iteration: Option<f64>,
    pub rounds_per_iteration: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CurveRow {
    pub scheme: String,
    pub episode: usize,
    pub runs: usize,
    pub mean_return: f64,
    pub mean_metric: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HourRow {
    pub scheme: String,
    pub hour: usize,
    pub mean_delay_ms: f64,
    pub db_delay_ms: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub runs: Vec<PathBuf>,
    pub table: Vec<SchemeRow>,
    pub overhead_ratios: Vec<OverheadRatio>,
    pub learning_curves: Vec<CurveRow>,
    pub hourly_delay: Vec<HourRow>,
}

pub(crate) fn write_csv<T: Serialize>(path: &Path, rows: &[T]) -> Result<()> {
    let mut w = csv::Writer::from_path(path).map_err(|e| Error::Serde(e.to_string()))?;
    for r in rows {
        w.serialize(r).map_err(|e| Error::Serde(e.to_string()))?;
    }
    w.flush().map_err(|e| Error::io(path, e))
}

fn mean_opt(xs: impl Iterator<Item = Option<f64>>) -> Option<f64> {
    let v: Vec<f64> = xs.flatten().collect();
    (!v.is_empty()).then(|| stats::mean(&v))
}

/// Verifies every run, checks they are comparable and aggregates them by
/// scheme.
pub fn build_report(runs: &[LoadedRun]) -> Result<Report> {
    let Some(first) = runs.first() else {
        return Err(Error::Usage("no runs to report".into()));
    };
    for r in runs {
        if r.config.environment != first.config.environment {
            return Err(Error::Comparison(format!(
                "{} and {} use different environments",
                r.dir.display(),
                first.dir.display()
            )));
        }
        if r.evaluation.metric_name != first.evaluation.metric_name {
            return Err(Error::Comparison("runs report different metrics".into()));
        }
    }
    let mut by_scheme: BTreeMap<String, Vec<&LoadedRun>> = BTreeMap::new();
    for r in runs {
        by_scheme.entry(r.config.scheme()).or_default().push(r);
    }

    let mut table = Vec::new();
    let mut curves = Vec::new();
    let mut hourly = Vec::new();
    let mut per_scheme_overhead = Vec::new();
    for (scheme, rs) in &by_scheme {
        let metrics: Vec<f64> = rs.iter().map(|r| r.evaluation.mean_metric).collect();
        let ci = stats::confidence_interval(&metrics, 0.95);
        let overheads: Vec<&OverheadReport> = rs.iter().filter_map(|r| r.overhead.as_ref()).collect();
        table.push(SchemeRow {
            scheme: scheme.clone(),
            runs: rs.len(),
            metric_name: first.evaluation.metric_name.clone(),
            metric_mean: ci.mean,
            metric_ci_lo: ci.lo,
            metric_ci_hi: ci.hi,
            baseline_mean: mean_opt(rs.iter().map(|r| r.evaluation.baseline_mean)),
            privacy_rmse: mean_opt(rs.iter().map(|r| r.privacy.as_ref().map(|p| p.rmse))),
            mean_predictor_rmse: mean_opt(rs.iter().map(|r| r.privacy.as_ref().map(|p| p.mean_predictor_rmse))),
            bytes_per_iteration: mean_opt(overheads.iter().map(|o| Some(o.bytes_per_iteration))),
            rounds_per_iteration: mean_opt(overheads.iter().map(|o| Some(o.rounds_per_iteration))),
        });
        if let Some(o) = overheads.first() {
            let mut agg = (*o).clone();
            agg.bytes_per_iteration = stats::mean(&overheads.iter().map(|o| o.bytes_per_iteration).collect::<Vec<_>>());
            agg.rounds_per_iteration = stats::mean(&overheads.iter().map(|o| o.rounds_per_iteration).collect::<Vec<_>>());
            per_scheme_overhead.push(agg);
        }

        let longest = rs.iter().map(|r| r.metrics.len()).max().unwrap_or(0);
        for ep in 0..longest {
            let at: Vec<&EpisodeMetrics> = rs.iter().filter_map(|r| r.metrics.get(ep)).collect();
            curves.push(CurveRow {
                scheme: scheme.clone(),
                episode: ep,
                runs: at.len(),
                mean_return: stats::mean(&at.iter().map(|m| m.episode_return).collect::<Vec<_>>()),
                mean_metric: stats::mean(&at.iter().map(|m| m.metric).collect::<Vec<_>>()),
            });
        }

        for h in 0..24 {
            let bins: Vec<_> = rs
                .iter()
                .filter_map(|r| r.evaluation.hourly.as_ref())
                .filter_map(|b| b.get(h))
                .filter(|b| b.steps > 0)
                .collect();
            if !bins.is_empty() {
                hourly.push(HourRow {
                    scheme: scheme.clone(),
                    hour: h,
                    mean_delay_ms: stats::mean(&bins.iter().map(|b| b.mean_delay_ms).collect::<Vec<_>>()),
                    db_delay_ms: stats::mean(&bins.iter().map(|b| b.db_delay_ms).collect::<Vec<_>>()),
                });
            }
        }
    }
    Ok(Report {
        runs: runs.iter().map(|r| r.dir.clone()).collect(),
        table,
        overhead_ratios: compare_overheads(&per_scheme_overhead)?,
        learning_curves: curves,
        hourly_delay: hourly,
    })
}

/// Loads, verifies and aggregates `run_dirs`, writing the tables into `out_dir`.
pub fn report(run_dirs: &[PathBuf], out_dir: &Path) -> Result<Report> {
    let runs = run_dirs.iter().map(|d| LoadedRun::load(d)).collect::<Result<Vec<_>>>()?;
    let rep = build_report(&runs)?;
    std::fs::create_dir_all(out_dir).map_err(|e| Error::io(out_dir, e))?;
    write_csv(&out_dir.join("table1.csv"), &rep.table)?;
    write_csv(&out_dir.join("overhead_ratios.csv"), &rep.overhead_ratios)?;
    write_csv(&out_dir.join("learning_curves.csv"), &rep.learning_curves)?;
    if !rep.hourly_delay.is_empty() {
        write_csv(&out_dir.join("hourly_delay.csv"), &rep.hourly_delay)?;
    }
    write_json(&out_dir.join("report.json"), &rep)?;
    Ok(rep)
}

/// Expands arguments that are sweep directories into their child runs.
pub fn collect_run_dirs(paths: &[PathBuf]) -> Result<Vec<PathBuf>> {
    let mut out = Vec::new();
    for p in paths {
        if p.join(manifest::MANIFEST_FILE).exists() {
            out.push(p.clone());
        } else if p.is_dir() {
            let mut kids: Vec<PathBuf> = std::fs::read_dir(p)
                .map_err(|e| Error::io(p, e))?
                .filter_map(|e| e.ok().map(|e| e.path()))
                .filter(|k| k.join(manifest::MANIFEST_FILE).exists())
                .collect();
            if kids.is_empty() {
                return Err(Error::Usage(format!("{} holds no runs", p.display())));
            }
            kids.sort();
            out.extend(kids);
        } else {
            return Err(Error::Usage(format!("{} is not a run directory", p.display())));
        }
    }
    Ok(out)
}

/// Measured cost of Paillier operations relative to one f64 multiply.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HeBench {
    pub key_bits: u64,
    pub samples: usize,
    pub f64_mul_ns: f64,
    pub encrypt_us: f64,
    pub decrypt_us: f64,
    pub add_us: f64,
    pub scale_us: f64,
    /// Ciphertext-by-plaintext multiply over f64 multiply; the per-MAC
    /// slowdown of an encrypted linear layer.
    pub h: f64,
}

pub fn bench_he(key_bits: u64, samples: usize, seed: u64) -> Result<HeBench> {
    let samples = samples.max(1);
    let keys = KeyPair::generate(key_bits, seed)?;
    let pk = &keys.public;
    let mut ops = HeOps::default();
    let mut rng = encryption_rng(seed, 0);
    let f = DEFAULT_FRAC_BITS;
    let time_us = |t: Instant, n: usize| t.elapsed().as_secs_f64() * 1e6 / n as f64;

    let t = Instant::now();
    let cts = (0..samples)
        .map(|i| keys.encrypt(0.001 * i as f64, f, &mut rng, &mut ops))
        .collect::<Result<Vec<_>>>()?;
    let encrypt_us = time_us(t, samples);

    let t = Instant::now();
    for c in &cts {
        black_box(pk.add(c, &cts[0], &mut ops)?);
    }
    let add_us = time_us(t, samples);

    let t = Instant::now();
    for c in &cts {
        black_box(pk.scale(0.37, f, c, &mut ops)?);
    }
    let scale_us = time_us(t, samples);

    let t = Instant::now();
    for c in &cts {
        black_box(keys.decrypt(c, &mut ops));
    }
    let decrypt_us = time_us(t, samples);

    let n = 10_000_000usize;
    let mut acc = 1.0f64;
    let t = Instant::now();
    for i in 0..n {
        acc = black_box(acc * black_box(1.000_000_1 + (i & 1) as f64 * 1e-12));
    }
    black_box(acc);
    let f64_mul_ns = t.elapsed().as_secs_f64() * 1e9 / n as f64;

    Ok(HeBench {
        key_bits,
        samples,
        f64_mul_ns,
        encrypt_us,
        decrypt_us,
        add_us,
        scale_us,
        h: scale_us * 1e3 / f64_mul_ns,
    })
}
