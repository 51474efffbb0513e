//! Multi-agent environments.
//!
//! Both environments are DEC-POMDPs with a shared team reward: each agent
//! gets its own fixed-length observation vector and emits a continuous action
//! in `[-1, 1]^d`.

pub mod drone;
pub mod edge;
pub mod traces;

use serde::{Deserialize, Serialize};

use crate::error::Result;

pub use drone::{DroneConfig, DroneEnv, DroneState};
pub use edge::{EdgeConfig, EdgeEnv};
pub use traces::{SynthConfig, TraceSchema, VehicleTrace};

/// Planar position or displacement in meters.
#[derive(Debug, Clone, Copy, PartialEq, Default, Serialize, Deserialize)]
pub struct Vec2 {
    pub x: f64,
    pub y: f64,
}

impl Vec2 {
    pub const fn new(x: f64, y: f64) -> Self {
        Vec2 { x, y }
    }

    pub fn dist(self, other: Vec2) -> f64 {
        (self.x - other.x).hypot(self.y - other.y)
    }

    pub fn sub(self, other: Vec2) -> Vec2 {
        Vec2::new(self.x - other.x, self.y - other.y)
    }
}

/// Result of one joint step.
#[derive(Debug, Clone, PartialEq)]
pub struct EnvStep {
    pub observations: Vec<Vec<f64>>,
    pub reward: f64,
    pub done: bool,
    /// Task metric of this step: covered targets (drone) or mean delay in ms (edge).
    pub metric: f64,
    /// Hour of day for time-indexed environments.
    pub hour: Option<f64>,
}

pub trait MultiAgentEnv {
    fn n_agents(&self) -> usize;
    fn obs_dim(&self) -> usize;
    fn action_dim(&self) -> usize;
    fn episode_len(&self) -> usize;
    fn reset(&mut self, seed: u64) -> Vec<Vec<f64>>;
    fn step(&mut self, actions: &[Vec<f64>]) -> Result<EnvStep>;
    /// JSON view of the current state for trajectory logs.
    fn snapshot(&self) -> serde_json::Value;
}

pub(crate) fn clamp_unit(v: f64) -> f64 {
    if v.is_nan() {
        0.0
    } else {
        v.clamp(-1.0, 1.0)
    }
}
