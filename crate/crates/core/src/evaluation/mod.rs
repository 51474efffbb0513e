//! Measurement: inference-attack privacy and message overhead.

pub mod attack;
pub mod stats;

use std::collections::BTreeMap;

use serde::{Deserialize, Serialize};

use crate::bus::{BusTotals, MessageKind};
use crate::coordinator::{OpCounts, Trainer};
use crate::error::{Error, Result};

pub use attack::{
    attack, harvest, mean_predictor_rmse, privacy_rmse, train_attacker, AttackConfig, AttackDataset, Attacker,
    Exposure, Harvester, PrivacyReport, PrivateRecord,
};

/// Settings that must agree before two overhead reports are comparable.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Workload {
    pub environment: String,
    pub n_agents: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub batch_size: usize,
    pub q_dim: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadReport {
    pub scheme: String,
    pub workload: Workload,
    pub env_steps: u64,
    pub iterations: u64,
    pub messages: u64,
    pub bytes: u64,
    pub bytes_by_kind: BTreeMap<String, u64>,
    pub rounds: u64,
    pub bytes_per_iteration: f64,
    pub rounds_per_iteration: f64,
    pub ops: OpCounts,
    /// Serialized bytes over the link rate plus per-message latency, in seconds.
    pub delay_proxy_s: f64,
    pub wall_clock_s: BTreeMap<String, f64>,
}

impl OverheadReport {
    pub fn from_totals(
        scheme: &str,
        workload: Workload,
        totals: &BusTotals,
        delay_proxy_s: f64,
        ops: OpCounts,
        env_steps: u64,
        iterations: u64,
    ) -> Self {
        let per = |x: u64| if iterations == 0 { 0.0 } else { x as f64 / iterations as f64 };
        OverheadReport {
            scheme: scheme.to_string(),
            workload,
            env_steps,
            iterations,
            messages: totals.messages,
            bytes: totals.bytes,
            bytes_by_kind: MessageKind::ALL
                .iter()
                .filter(|k| totals.bytes_of(**k) > 0)
                .map(|k| (k.name().to_string(), totals.bytes_of(*k)))
                .collect(),
            rounds: totals.rounds,
            bytes_per_iteration: per(totals.bytes),
            rounds_per_iteration: per(totals.rounds),
            ops,
            delay_proxy_s,
            wall_clock_s: BTreeMap::new(),
        }
    }

    /// Report over everything a trainer's bus has carried so far.
    pub fn account(scheme: &str, workload: Workload, trainer: &dyn Trainer, env_steps: u64, iterations: u64) -> Self {
        let bus = trainer.bus();
        Self::from_totals(
            scheme,
            workload,
            &bus.totals(),
            bus.delay_proxy(),
            trainer.ops(),
            env_steps,
            iterations,
        )
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OverheadRatio {
    pub scheme: String,
    pub baseline: String,
    /// `scheme / baseline` bytes per iteration; `None` when the baseline sends nothing.
    pub bandwidth_ratio: Option<f64>,
    pub rounds_ratio: Option<f64>,
}

/// Pairwise ratios of every report against every other; refuses reports
/// from different workloads.
pub fn compare_overheads(reports: &[OverheadReport]) -> Result<Vec<OverheadRatio>> {
    let Some(first) = reports.first() else {
        return Ok(Vec::new());
    };
    for r in reports {
        if r.workload != first.workload {
            return Err(Error::Comparison(format!(
                "{} ran {:?} but {} ran {:?}",
                r.scheme, r.workload, first.scheme, first.workload
            )));
        }
    }
    let ratio = |a: f64, b: f64| if b > 0.0 { Some(a / b) } else { None };
    let mut out = Vec::new();
    for a in reports {
        for b in reports {
            if a.scheme != b.scheme {
                out.push(OverheadRatio {
                    scheme: a.scheme.clone(),
                    baseline: b.scheme.clone(),
                    bandwidth_ratio: ratio(a.bytes_per_iteration, b.bytes_per_iteration),
                    rounds_ratio: ratio(a.rounds_per_iteration, b.rounds_per_iteration),
                });
            }
        }
    }
    Ok(out)
}
