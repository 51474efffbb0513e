//! Edge-controller assignment over vehicle traces.
//!
//! Each base station hosts an edge controller (one agent). Vehicles inside
//! several coverage discs can be served by any of them; the controllers'
//! joint action decides who serves whom. A controller's action is a scalar
//! preference offset `a_c ∈ [-1, 1]`; the preference of controller `c` for
//! vehicle `v` is `gain·a_c − dist(v, c) / radius` and every vehicle goes to
//! the covering controller with the highest preference. All-zero actions
//! therefore reproduce the distance-based greedy assignment.
//!
//! Delay model (milliseconds):
//!
//! ```text
//! delay(v) = 1000·dist(v, c)/propagation_speed + base_processing
//!          + min(1000/(μ_c − λ_c), saturation)        (saturation if λ_c ≥ μ_c)
//! λ_c      = Σ_{v → c} request_rate · profile(hour)
//! ```
//!
//! Vehicles outside every coverage disc, or assigned to a controller that
//! does not cover them, cost `unserved_penalty`.

use std::path::PathBuf;

use serde::{Deserialize, Serialize};

use super::traces::{ingest_traces, synth_traces, SynthConfig, TraceSchema, VehicleTrace};
use super::{clamp_unit, EnvStep, MultiAgentEnv, Vec2};
use crate::error::{Error, Result};

pub const SECONDS_PER_DAY: i64 = 86_400;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EdgeConfig {
    pub arena: [f64; 2],
    pub bs_positions: Vec<[f64; 2]>,
    pub coverage_radius: f64,
    /// m/s
    pub propagation_speed: f64,
    /// Requests per second each controller can serve.
    pub service_rates: Vec<f64>,
    pub base_processing_ms: f64,
    pub saturation_ms: f64,
    pub unserved_penalty_ms: f64,
    /// Requests per second per vehicle before the hourly profile.
    pub request_rate: f64,
    pub hourly_profile: Vec<f64>,
    pub step_minutes: u32,
    pub preference_gain: f64,
    /// Reward is `−mean_delay_ms · reward_scale`.
    pub reward_scale: f64,
    pub n_vehicles: usize,
    /// Days of synthetic traces to generate when no trace file is given.
    pub days: u32,
    pub trace_seed: u64,
    pub mobility: SynthConfig,
    pub trace_file: Option<PathBuf>,
    pub trace_schema: TraceSchema,
}

impl Default for EdgeConfig {
    fn default() -> Self {
        EdgeConfig {
            arena: [10_000.0, 10_000.0],
            bs_positions: vec![[2500.0, 2500.0], [7500.0, 2500.0], [2500.0, 7500.0], [7500.0, 7500.0]],
            coverage_radius: 4000.0,
            propagation_speed: 2.0e8,
            service_rates: vec![100.0, 150.0, 250.0, 200.0],
            base_processing_ms: 2.0,
            saturation_ms: 200.0,
            unserved_penalty_ms: 300.0,
            request_rate: 1.0,
            hourly_profile: vec![
                0.3, 0.3, 0.3, 0.3, 0.3, 0.4, 0.8, 1.6, 1.6, 1.6, 1.1, 1.0, //
                1.0, 1.0, 1.0, 1.0, 1.2, 1.4, 1.4, 0.9, 0.8, 0.7, 0.5, 0.4,
            ],
            step_minutes: 30,
            preference_gain: 0.5,
            reward_scale: 0.05,
            n_vehicles: 200,
            days: 1,
            trace_seed: 0,
            mobility: SynthConfig::default(),
            trace_file: None,
            trace_schema: TraceSchema::Xy,
        }
    }
}

impl EdgeConfig {
    pub fn n_controllers(&self) -> usize {
        self.bs_positions.len()
    }

    pub fn validate(&self) -> Result<()> {
        if self.bs_positions.is_empty() {
            return Err(Error::Config("need at least one base station".into()));
        }
        if self.service_rates.len() != self.bs_positions.len() {
            return Err(Error::Config(format!(
                "{} service rates for {} base stations",
                self.service_rates.len(),
                self.bs_positions.len()
            )));
        }
        if self.service_rates.iter().any(|&m| !(m > 0.0)) {
            return Err(Error::Config("service rates must be positive".into()));
        }
        if self.hourly_profile.len() != 24 || self.hourly_profile.iter().any(|&p| !(p >= 0.0)) {
            return Err(Error::Config("hourly_profile needs 24 non-negative entries".into()));
        }
        if !(self.coverage_radius > 0.0 && self.propagation_speed > 0.0) {
            return Err(Error::Config("coverage radius and propagation speed must be positive".into()));
        }
        if self.step_minutes == 0 || (24 * 60) % self.step_minutes != 0 {
            return Err(Error::Config("step_minutes must divide a day".into()));
        }
        if self.days == 0 {
            return Err(Error::Config("days must be at least 1".into()));
        }
        Ok(())
    }

    pub fn steps_per_day(&self) -> usize {
        (24 * 60 / self.step_minutes) as usize
    }

    pub fn bs(&self, c: usize) -> Vec2 {
        Vec2::new(self.bs_positions[c][0], self.bs_positions[c][1])
    }

    pub fn covers(&self, c: usize, p: Vec2) -> bool {
        self.bs(c).dist(p) <= self.coverage_radius
    }

    pub fn profile(&self, hour: f64) -> f64 {
        self.hourly_profile[(hour.floor() as usize) % 24]
    }
}

/// M/M/1-style waiting term in ms, capped at saturation. Nondecreasing in `load`.
pub fn queue_delay_ms(load: f64, service_rate: f64, saturation_ms: f64) -> f64 {
    if load < service_rate {
        (1000.0 / (service_rate - load)).min(saturation_ms)
    } else {
        saturation_ms
    }
}

/// Preference-based assignment; `None` for vehicles nobody covers.
pub fn resolve_assignment(config: &EdgeConfig, positions: &[Vec2], actions: &[f64]) -> Vec<Option<usize>> {
    positions
        .iter()
        .map(|&p| {
            let mut best: Option<(usize, f64)> = None;
            for c in 0..config.n_controllers() {
                if !config.covers(c, p) {
                    continue;
                }
                let score = config.preference_gain * clamp_unit(actions[c])
                    - config.bs(c).dist(p) / config.coverage_radius;
                if best.is_none_or(|(_, s)| score > s) {
                    best = Some((c, score));
                }
            }
            best.map(|(c, _)| c)
        })
        .collect()
}

/// Distance-based greedy baseline: nearest covering controller.
pub fn db_assignment(config: &EdgeConfig, positions: &[Vec2]) -> Vec<Option<usize>> {
    resolve_assignment(config, positions, &vec![0.0; config.n_controllers()])
}

/// Per-controller request load of an assignment.
pub fn controller_loads(config: &EdgeConfig, positions: &[Vec2], assignment: &[Option<usize>], hour: f64) -> Vec<f64> {
    let per_vehicle = config.request_rate * config.profile(hour);
    let mut loads = vec![0.0; config.n_controllers()];
    for (&p, a) in positions.iter().zip(assignment) {
        if let Some(c) = *a {
            if c < loads.len() && config.covers(c, p) {
                loads[c] += per_vehicle;
            }
        }
    }
    loads
}

/// Delay of every vehicle under an explicit assignment.
pub fn assignment_delays(
    config: &EdgeConfig,
    positions: &[Vec2],
    assignment: &[Option<usize>],
    hour: f64,
) -> Vec<f64> {
    let loads = controller_loads(config, positions, assignment, hour);
    positions
        .iter()
        .zip(assignment)
        .map(|(&p, a)| match *a {
            Some(c) if c < config.n_controllers() && config.covers(c, p) => {
                let prop = 1000.0 * config.bs(c).dist(p) / config.propagation_speed;
                prop + config.base_processing_ms
                    + queue_delay_ms(loads[c], config.service_rates[c], config.saturation_ms)
            }
            _ => config.unserved_penalty_ms,
        })
        .collect()
}

pub fn mean(values: &[f64]) -> f64 {
    if values.is_empty() {
        0.0
    } else {
        values.iter().sum::<f64>() / values.len() as f64
    }
}

/// Stateful edge environment over a fixed trace set.
#[derive(Debug, Clone)]
pub struct EdgeEnv {
    pub config: EdgeConfig,
    traces: Vec<VehicleTrace>,
    first_day: i64,
    n_days: i64,
    day: i64,
    step_index: usize,
    positions: Vec<Vec2>,
    last_util: Vec<f64>,
}

impl EdgeEnv {
    pub fn new(config: EdgeConfig) -> Result<Self> {
        config.validate()?;
        let traces = match &config.trace_file {
            Some(path) => ingest_traces(path, config.trace_schema, config.arena)?.traces,
            None => {
                let mobility = SynthConfig {
                    arena: config.arena,
                    ..config.mobility.clone()
                };
                synth_traces(
                    &mobility,
                    config.trace_seed,
                    config.n_vehicles,
                    i64::from(config.days) * SECONDS_PER_DAY,
                )?
            }
        };
        Self::with_traces(config, traces)
    }

    pub fn with_traces(config: EdgeConfig, traces: Vec<VehicleTrace>) -> Result<Self> {
        config.validate()?;
        let t_min = traces.iter().filter_map(|t| t.points.first()).map(|p| p.0).min();
        let t_max = traces.iter().filter_map(|t| t.points.last()).map(|p| p.0).max();
        let (Some(t_min), Some(t_max)) = (t_min, t_max) else {
            return Err(Error::Data("no trace points".into()));
        };
        let first_day = t_min.div_euclid(SECONDS_PER_DAY);
        let n_days = (t_max - 1).div_euclid(SECONDS_PER_DAY) - first_day + 1;
        let n = config.n_controllers();
        let mut env = EdgeEnv {
            config,
            traces,
            first_day,
            n_days: n_days.max(1),
            day: first_day,
            step_index: 0,
            positions: Vec::new(),
            last_util: vec![0.0; n],
        };
        env.load_positions();
        Ok(env)
    }

    pub fn traces(&self) -> &[VehicleTrace] {
        &self.traces
    }

    pub fn n_days(&self) -> i64 {
        self.n_days
    }

    pub fn positions(&self) -> &[Vec2] {
        &self.positions
    }

    fn slot_time(&self) -> f64 {
        let step_s = f64::from(self.config.step_minutes) * 60.0;
        (self.day * SECONDS_PER_DAY) as f64 + (self.step_index as f64 + 0.5) * step_s
    }

    pub fn hour(&self) -> f64 {
        self.slot_time().rem_euclid(SECONDS_PER_DAY as f64) / 3600.0
    }

    fn load_positions(&mut self) {
        let t = self.slot_time();
        self.positions = self.traces.iter().map(|tr| tr.position_at(t)).collect();
    }

    fn observe(&self) -> Vec<Vec<f64>> {
        let cfg = &self.config;
        let n = self.positions.len().max(1) as f64;
        let hour = self.hour();
        let per_vehicle = cfg.request_rate * cfg.profile(hour);
        let nearest = db_assignment(cfg, &self.positions);
        let angle = 2.0 * std::f64::consts::PI * hour / 24.0;
        (0..cfg.n_controllers())
            .map(|c| {
                let mut covered = 0usize;
                let mut exclusive = 0usize;
                let mut nearest_load = 0usize;
                for (p, a) in self.positions.iter().zip(&nearest) {
                    if cfg.covers(c, *p) {
                        covered += 1;
                        let k = (0..cfg.n_controllers()).filter(|&o| cfg.covers(o, *p)).count();
                        if k == 1 {
                            exclusive += 1;
                        }
                        if *a == Some(c) {
                            nearest_load += 1;
                        }
                    }
                }
                let util = (nearest_load as f64 * per_vehicle / cfg.service_rates[c]).min(3.0);
                vec![
                    covered as f64 / n,
                    exclusive as f64 / n,
                    (covered - exclusive) as f64 / n,
                    util,
                    self.last_util[c].min(3.0),
                    angle.sin(),
                    angle.cos(),
                ]
            })
            .collect()
    }

    /// Mean delay of the current slot under an explicit assignment.
    pub fn slot_mean_delay(&self, assignment: &[Option<usize>]) -> f64 {
        mean(&assignment_delays(&self.config, &self.positions, assignment, self.hour()))
    }
}

pub const EDGE_OBS_DIM: usize = 7;

impl MultiAgentEnv for EdgeEnv {
    fn n_agents(&self) -> usize {
        self.config.n_controllers()
    }

    fn obs_dim(&self) -> usize {
        EDGE_OBS_DIM
    }

    fn action_dim(&self) -> usize {
        1
    }

    fn episode_len(&self) -> usize {
        self.config.steps_per_day()
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        self.day = self.first_day + (seed % self.n_days as u64) as i64;
        self.step_index = 0;
        self.last_util = vec![0.0; self.config.n_controllers()];
        self.load_positions();
        self.observe()
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<EnvStep> {
        let n = self.config.n_controllers();
        if actions.len() != n || actions.iter().any(|a| a.len() != 1) {
            return Err(Error::Usage(format!("expected {n} scalar controller actions")));
        }
        if self.step_index >= self.episode_len() {
            return Err(Error::Usage("episode already finished".into()));
        }
        let prefs: Vec<f64> = actions.iter().map(|a| a[0]).collect();
        let hour = self.hour();
        let assignment = resolve_assignment(&self.config, &self.positions, &prefs);
        let delays = assignment_delays(&self.config, &self.positions, &assignment, hour);
        let loads = controller_loads(&self.config, &self.positions, &assignment, hour);
        self.last_util = loads
            .iter()
            .zip(&self.config.service_rates)
            .map(|(l, m)| l / m)
            .collect();
        let mean_delay = mean(&delays);
        self.step_index += 1;
        let done = self.step_index == self.episode_len();
        if !done {
            self.load_positions();
        }
        Ok(EnvStep {
            observations: self.observe(),
            reward: -mean_delay * self.config.reward_scale,
            done,
            metric: mean_delay,
            hour: Some(hour),
        })
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::json!({
            "day": self.day,
            "step_index": self.step_index,
            "hour": self.hour(),
            "last_utilization": self.last_util,
        })
    }
}
