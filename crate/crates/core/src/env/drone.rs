//! Drone-assisted coverage: drones move in a rectangular arena and are
//! rewarded for every target place whose center they cover.

use rand::Rng;
use serde::{Deserialize, Serialize};

use super::{clamp_unit, EnvStep, MultiAgentEnv, Vec2};
use crate::error::{Error, Result};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum RangePreset {
    Low,
    Medium,
    High,
}

impl RangePreset {
    pub fn meters(self) -> f64 {
        match self {
            RangePreset::Low => 250.0,
            RangePreset::Medium => 500.0,
            RangePreset::High => 1500.0,
        }
    }
}

/// Observation range, either a named preset or meters.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(untagged)]
pub enum ObsRange {
    Preset(RangePreset),
    Meters(f64),
}

impl ObsRange {
    pub fn meters(self) -> f64 {
        match self {
            ObsRange::Preset(p) => p.meters(),
            ObsRange::Meters(m) => m,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum CoverageRule {
    /// Target center within the drone's coverage radius.
    #[default]
    Center,
    /// Whole target disc inside the coverage disc.
    FullDisc,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct DroneConfig {
    pub arena: [f64; 2],
    pub n_drones: usize,
    pub n_targets: usize,
    pub target_radius: f64,
    pub coverage_radius: f64,
    pub steps_per_episode: usize,
    pub obs_range: ObsRange,
    pub collision_distance: f64,
    pub collision_penalty: f64,
    /// Displacement in meters for a unit action component.
    pub max_speed: f64,
    pub coverage_rule: CoverageRule,
}

impl Default for DroneConfig {
    fn default() -> Self {
        DroneConfig {
            arena: [1000.0, 1000.0],
            n_drones: 3,
            n_targets: 3,
            target_radius: 40.0,
            coverage_radius: 50.0,
            steps_per_episode: 10,
            obs_range: ObsRange::Preset(RangePreset::Medium),
            collision_distance: 5.0,
            collision_penalty: 1.0,
            max_speed: 100.0,
            coverage_rule: CoverageRule::Center,
        }
    }
}

impl DroneConfig {
    pub fn validate(&self) -> Result<()> {
        let positive = [
            ("arena width", self.arena[0]),
            ("arena height", self.arena[1]),
            ("target_radius", self.target_radius),
            ("obs_range", self.obs_range.meters()),
            ("collision_distance", self.collision_distance),
            ("max_speed", self.max_speed),
        ];
        for (name, v) in positive {
            if !(v > 0.0 && v.is_finite()) {
                return Err(Error::Config(format!("{name} must be positive, got {v}")));
            }
        }
        if !(self.coverage_radius >= 0.0) {
            return Err(Error::Config("coverage_radius must be non-negative".into()));
        }
        if self.n_drones == 0 || self.n_targets == 0 {
            return Err(Error::Config("need at least one drone and one target".into()));
        }
        if self.steps_per_episode == 0 {
            return Err(Error::Config("steps_per_episode must be at least 1".into()));
        }
        Ok(())
    }

    /// Own position plus `(dx, dy, visible)` for every other drone and target.
    pub fn obs_dim(&self) -> usize {
        2 + 3 * (self.n_drones - 1) + 3 * self.n_targets
    }

    fn inside(&self, p: Vec2) -> Vec2 {
        Vec2::new(p.x.clamp(0.0, self.arena[0]), p.y.clamp(0.0, self.arena[1]))
    }

    fn covers(&self, drone: Vec2, target: Vec2) -> bool {
        let d = drone.dist(target);
        match self.coverage_rule {
            CoverageRule::Center => d <= self.coverage_radius,
            CoverageRule::FullDisc => d + self.target_radius <= self.coverage_radius,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DroneState {
    pub drone_positions: Vec<Vec2>,
    pub target_centers: Vec<Vec2>,
    pub step_index: usize,
}

pub fn drone_reset(config: &DroneConfig, seed: u64) -> (DroneState, Vec<Vec<f64>>) {
    let mut r = rng::stream(seed, "drone-reset", 0);
    let point = |r: &mut rng::Stream| {
        Vec2::new(
            r.random_range(0.0..=config.arena[0]),
            r.random_range(0.0..=config.arena[1]),
        )
    };
    let drone_positions = (0..config.n_drones).map(|_| point(&mut r)).collect();
    let target_centers = (0..config.n_targets).map(|_| point(&mut r)).collect();
    let state = DroneState {
        drone_positions,
        target_centers,
        step_index: 0,
    };
    let obs = observe_all(&state, config);
    (state, obs)
}

pub fn local_observe(state: &DroneState, agent: usize, config: &DroneConfig) -> Vec<f64> {
    let me = state.drone_positions[agent];
    let (w, h) = (config.arena[0], config.arena[1]);
    let range = config.obs_range.meters();
    let mut obs = Vec::with_capacity(config.obs_dim());
    obs.push(me.x / w);
    obs.push(me.y / h);
    let others = state
        .drone_positions
        .iter()
        .enumerate()
        .filter(|&(j, _)| j != agent)
        .map(|(_, p)| *p);
    for p in others.chain(state.target_centers.iter().copied()) {
        if me.dist(p) <= range {
            let d = p.sub(me);
            obs.extend_from_slice(&[d.x / w, d.y / h, 1.0]);
        } else {
            obs.extend_from_slice(&[0.0, 0.0, 0.0]);
        }
    }
    obs
}

pub fn observe_all(state: &DroneState, config: &DroneConfig) -> Vec<Vec<f64>> {
    (0..state.drone_positions.len())
        .map(|i| local_observe(state, i, config))
        .collect()
}

pub fn coverage_count(state: &DroneState, config: &DroneConfig) -> usize {
    state
        .target_centers
        .iter()
        .filter(|&&t| state.drone_positions.iter().any(|&d| config.covers(d, t)))
        .count()
}

pub fn collision_pairs(state: &DroneState, config: &DroneConfig) -> usize {
    let p = &state.drone_positions;
    let mut n = 0;
    for i in 0..p.len() {
        for j in i + 1..p.len() {
            if p[i].dist(p[j]) <= config.collision_distance {
                n += 1;
            }
        }
    }
    n
}

/// Team reward of a configuration.
pub fn shared_reward(state: &DroneState, config: &DroneConfig) -> f64 {
    coverage_count(state, config) as f64
        - config.collision_penalty * collision_pairs(state, config) as f64
}

pub fn drone_step(
    state: &DroneState,
    actions: &[Vec<f64>],
    config: &DroneConfig,
) -> Result<(DroneState, Vec<Vec<f64>>, f64, bool)> {
    if actions.len() != state.drone_positions.len() {
        return Err(Error::Usage(format!(
            "expected {} actions, got {}",
            state.drone_positions.len(),
            actions.len()
        )));
    }
    if state.step_index >= config.steps_per_episode {
        return Err(Error::Usage("episode already finished".into()));
    }
    let mut next = state.clone();
    for (p, a) in next.drone_positions.iter_mut().zip(actions) {
        if a.len() != 2 {
            return Err(Error::Usage(format!("drone action must have 2 components, got {}", a.len())));
        }
        let moved = Vec2::new(
            p.x + clamp_unit(a[0]) * config.max_speed,
            p.y + clamp_unit(a[1]) * config.max_speed,
        );
        *p = config.inside(moved);
    }
    next.step_index += 1;
    let reward = shared_reward(&next, config);
    let done = next.step_index == config.steps_per_episode;
    let obs = observe_all(&next, config);
    Ok((next, obs, reward, done))
}

/// Stateful wrapper implementing [`MultiAgentEnv`].
#[derive(Debug, Clone)]
pub struct DroneEnv {
    pub config: DroneConfig,
    pub state: DroneState,
}

impl DroneEnv {
    pub fn new(config: DroneConfig) -> Result<Self> {
        config.validate()?;
        let (state, _) = drone_reset(&config, 0);
        Ok(DroneEnv { config, state })
    }
}

impl MultiAgentEnv for DroneEnv {
    fn n_agents(&self) -> usize {
        self.config.n_drones
    }

    fn obs_dim(&self) -> usize {
        self.config.obs_dim()
    }

    fn action_dim(&self) -> usize {
        2
    }

    fn episode_len(&self) -> usize {
        self.config.steps_per_episode
    }

    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>> {
        let (state, obs) = drone_reset(&self.config, seed);
        self.state = state;
        obs
    }

    fn step(&mut self, actions: &[Vec<f64>]) -> Result<EnvStep> {
        let (next, observations, reward, done) = drone_step(&self.state, actions, &self.config)?;
        self.state = next;
        Ok(EnvStep {
            observations,
            reward,
            done,
            metric: coverage_count(&self.state, &self.config) as f64,
            hour: None,
        })
    }

    fn snapshot(&self) -> serde_json::Value {
        serde_json::to_value(&self.state).expect("state serializes")
    }
}
