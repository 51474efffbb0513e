use std::path::{Path, PathBuf};
use std::process::ExitCode;

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use ppmarl::experiment::report::{bench_he, collect_run_dirs, report};
use ppmarl::experiment::sweep::sweep;
use ppmarl::experiment::{attack_existing, resolve_run_dir, run, ExperimentConfig};

#[derive(Parser)]
#[command(name = "ppmarl", version, about = "Privacy-preserving multi-agent RL experiments")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Train and evaluate one configuration.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides run.seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Run directory; defaults to <output_dir>/<name>.
        #[arg(long)]
        out: Option<PathBuf>,
    },
    /// Run a grid of child configurations.
    Sweep {
        #[arg(long)]
        config: PathBuf,
        /// Replaces the seed axis with a single seed.
        #[arg(long)]
        seed: Option<u64>,
        /// Directory holding the child runs.
        #[arg(long)]
        out: Option<PathBuf>,
        #[arg(long, default_value_t = 1)]
        parallel: usize,
        /// Axis to set from the command line: obs_range, trainer or seed.
        #[arg(long, requires = "values")]
        axis: Option<String>,
        #[arg(long, value_delimiter = ',', requires = "axis")]
        values: Option<Vec<String>>,
    },
    /// Aggregate completed runs or sweep directories into CSV tables.
    Report {
        #[arg(required = true)]
        runs: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Re-run the inference attack on an existing run directory.
    Attack { run: PathBuf },
    /// Measure Paillier operation costs against one f64 multiply.
    BenchHe {
        #[arg(long, default_value_t = 2048)]
        key_bits: u64,
        #[arg(long, default_value_t = 200)]
        samples: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        /// Also write the result as JSON here.
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

fn load(path: &Path, seed: Option<u64>) -> Result<ExperimentConfig> {
    let mut cfg = ExperimentConfig::load(path).with_context(|| format!("loading {}", path.display()))?;
    if let Some(s) = seed {
        cfg.run.seed = s;
    }
    Ok(cfg)
}

fn print_json<T: serde::Serialize>(v: &T) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(v)?);
    Ok(())
}

fn execute(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Run { config, seed, out } => {
            let cfg = load(&config, seed)?;
            let dir = match out {
                Some(o) => o,
                None => resolve_run_dir(&cfg, None),
            };
            let outcome = run(&cfg, &dir).with_context(|| format!("run in {}", dir.display()))?;
            eprintln!("run complete: {}", dir.display());
            print_json(&outcome.evaluation)?;
            if let Some(p) = &outcome.privacy {
                print_json(p)?;
            }
        }
        Command::Sweep { config, seed, out, parallel, axis, values } => {
            let mut cfg = load(&config, None)?;
            if let (Some(a), Some(v)) = (axis, values) {
                cfg.sweep.set_axis(&a, &v)?;
            }
            if let Some(s) = seed {
                cfg.sweep.seed = Some(vec![s]);
            }
            cfg.validate()?;
            let dir = match out {
                Some(o) => o,
                None => {
                    let base = resolve_run_dir(&cfg, None);
                    base.with_file_name(format!("sweep-{}", &cfg.hash()[..12]))
                }
            };
            let summary = sweep(&cfg, &dir, parallel)?;
            for c in &summary.children {
                match &c.error {
                    None => eprintln!("ok    {}", c.run_dir.display()),
                    Some(e) => eprintln!("FAIL  {}: {e}", c.run_dir.display()),
                }
            }
            if summary.failures() > 0 {
                bail!("{} of {} child runs failed", summary.failures(), summary.children.len());
            }
            eprintln!("sweep complete: {}", dir.display());
        }
        Command::Report { runs, out } => {
            let dirs = collect_run_dirs(&runs)?;
            let rep = report(&dirs, &out)?;
            print_json(&rep.table)?;
            eprintln!("tables written to {}", out.display());
        }
        Command::Attack { run } => {
            print_json(&attack_existing(&run)?)?;
        }
        Command::BenchHe { key_bits, samples, seed, out } => {
            let b = bench_he(key_bits, samples, seed)?;
            if let Some(o) = out {
                std::fs::write(&o, serde_json::to_string_pretty(&b)?).with_context(|| format!("writing {}", o.display()))?;
            }
            print_json(&b)?;
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            let config_error = e
                .chain()
                .any(|c| matches!(c.downcast_ref::<ppmarl::Error>(), Some(ppmarl::Error::Config(_))));
            ExitCode::from(if config_error { 2 } else { 1 })
        }
    }
}
