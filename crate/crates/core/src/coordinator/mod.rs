//! The central node: identifier-only global memory, global critics, and the
//! trainers that drive agents through the accounting bus.

mod baselines;
mod ppmarl;

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use serde::{Deserialize, Serialize};

pub use baselines::{Ddpg, Maddpg};
pub use ppmarl::PpMarl;

use crate::agent::{Agent, AgentConfig, AgentNets, Experience, MemoryId};
use crate::bus::Bus;
use crate::error::{Error, Result};
use crate::nn::{Activation, Mlp, OptimConfig, OptimState, Tape};
use crate::privacy::{HeOps, PrivacyConfig};
use crate::rng;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum TrainerKind {
    PpMarl,
    Maddpg,
    Ddpg,
}

impl TrainerKind {
    pub fn name(self) -> &'static str {
        match self {
            TrainerKind::PpMarl => "pp_marl",
            TrainerKind::Maddpg => "maddpg",
            TrainerKind::Ddpg => "ddpg",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct TrainingConfig {
    pub trainer: TrainerKind,
    pub gamma: f64,
    pub batch_size: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub global_critic_lr: f64,
    pub tau: f64,
    /// Environment steps before the first update.
    pub warmup_steps: usize,
    /// One training iteration every this many environment steps.
    pub update_every: usize,
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub global_hidden: Vec<usize>,
    pub global_activation: Activation,
    pub q_dim: usize,
    pub memory_capacity: usize,
    /// Exploration noise decays linearly from `noise_start` to `noise_end`
    /// over `noise_decay_steps` environment steps.
    pub noise_start: f64,
    pub noise_end: f64,
    pub noise_decay_steps: usize,
    /// Partition of agents into teams, one global critic per team. `None`
    /// means a single team.
    pub reward_groups: Option<Vec<Vec<usize>>>,
}

impl Default for TrainingConfig {
    fn default() -> Self {
        TrainingConfig {
            trainer: TrainerKind::PpMarl,
            gamma: 0.95,
            batch_size: 64,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            global_critic_lr: 1e-3,
            tau: 0.01,
            warmup_steps: 1000,
            update_every: 1,
            hidden: vec![64, 64],
            hidden_activation: Activation::Relu,
            global_hidden: vec![64],
            global_activation: Activation::Relu,
            q_dim: 1,
            memory_capacity: 100_000,
            noise_start: 0.3,
            noise_end: 0.05,
            noise_decay_steps: 15_000,
            reward_groups: None,
        }
    }
}

impl TrainingConfig {
    pub fn validate(&self, n_agents: usize) -> Result<()> {
        if !(0.0..1.0).contains(&self.gamma) {
            return Err(Error::Config(format!("gamma must lie in [0, 1), got {}", self.gamma)));
        }
        if self.batch_size == 0 {
            return Err(Error::Config("batch_size must be at least 1".into()));
        }
        if !(self.tau > 0.0 && self.tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {}", self.tau)));
        }
        if self.update_every == 0 {
            return Err(Error::Config("update_every must be at least 1".into()));
        }
        if self.q_dim == 0 {
            return Err(Error::Config("q_dim must be at least 1".into()));
        }
        if self.memory_capacity < self.batch_size {
            return Err(Error::Config("memory_capacity must be at least batch_size".into()));
        }
        for lr in [self.actor_lr, self.critic_lr, self.global_critic_lr] {
            if !(lr >= 0.0 && lr.is_finite()) {
                return Err(Error::Config(format!("invalid learning rate {lr}")));
            }
        }
        if self.noise_start < 0.0 || self.noise_end < 0.0 {
            return Err(Error::Config("noise scales must be non-negative".into()));
        }
        self.groups(n_agents)?;
        Ok(())
    }

    /// Per-agent settings. `q_dim` only shapes the PP-MARL interface; the
    /// baselines' local critics are plain scalar Q functions.
    pub fn agent_config(&self) -> AgentConfig {
        AgentConfig {
            hidden: self.hidden.clone(),
            hidden_activation: self.hidden_activation,
            q_dim: if self.trainer == TrainerKind::PpMarl { self.q_dim } else { 1 },
            actor_lr: self.actor_lr,
            critic_lr: self.critic_lr,
            memory_capacity: self.memory_capacity,
        }
    }

    /// Exploration scale after `step` environment steps.
    pub fn noise_at(&self, step: usize) -> f64 {
        if self.noise_decay_steps == 0 || step >= self.noise_decay_steps {
            return self.noise_end;
        }
        let t = step as f64 / self.noise_decay_steps as f64;
        self.noise_start + (self.noise_end - self.noise_start) * t
    }

    /// Validated team partition.
    pub fn groups(&self, n_agents: usize) -> Result<Vec<Vec<usize>>> {
        let Some(groups) = &self.reward_groups else {
            return Ok(vec![(0..n_agents).collect()]);
        };
        let mut seen = vec![false; n_agents];
        for g in groups {
            if g.is_empty() {
                return Err(Error::Config("reward group is empty".into()));
            }
            for &i in g {
                if i >= n_agents || seen[i] {
                    return Err(Error::Config(format!(
                        "reward_groups must partition agents 0..{n_agents}; bad index {i}"
                    )));
                }
                seen[i] = true;
            }
        }
        if seen.iter().any(|s| !s) {
            return Err(Error::Config("reward_groups leave some agent unassigned".into()));
        }
        Ok(groups.clone())
    }
}

/// Identifier-only replay index. Entries carry the public episode-boundary
/// flag so the coordinator can cut bootstrapping without seeing experiences.
#[derive(Debug, Clone)]
pub struct GlobalMemory {
    capacity: usize,
    ids: VecDeque<MemoryId>,
    terminal: HashMap<MemoryId, bool>,
}

impl GlobalMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        Ok(GlobalMemory {
            capacity,
            ids: VecDeque::new(),
            terminal: HashMap::new(),
        })
    }

    /// FIFO insert mirroring the agents' local memories.
    pub fn insert(&mut self, id: MemoryId, terminal: bool) -> Result<Option<MemoryId>> {
        if self.terminal.contains_key(&id) {
            return Err(Error::Usage(format!("memory id {id:?} already acknowledged")));
        }
        let evicted = if self.ids.len() == self.capacity {
            let old = self.ids.pop_front().expect("full");
            self.terminal.remove(&old);
            Some(old)
        } else {
            None
        };
        self.ids.push_back(id);
        self.terminal.insert(id, terminal);
        Ok(evicted)
    }

    pub fn remove(&mut self, id: MemoryId) {
        if self.terminal.remove(&id).is_some() {
            self.ids.retain(|x| *x != id);
        }
    }

    pub fn len(&self) -> usize {
        self.ids.len()
    }

    pub fn is_empty(&self) -> bool {
        self.ids.is_empty()
    }

    pub fn contains(&self, id: MemoryId) -> bool {
        self.terminal.contains_key(&id)
    }

    pub fn is_terminal(&self, id: MemoryId) -> bool {
        self.terminal.get(&id).copied().unwrap_or(false)
    }

    pub fn ids(&self) -> impl Iterator<Item = MemoryId> + '_ {
        self.ids.iter().copied()
    }
}

/// Uniform sample without replacement; `None` until enough ids exist.
pub fn sample_batch<R: Rng + ?Sized>(memory: &GlobalMemory, batch_size: usize, rng: &mut R) -> Option<Vec<MemoryId>> {
    if batch_size == 0 || memory.len() < batch_size {
        return None;
    }
    let idx = rand::seq::index::sample(rng, memory.len(), batch_size);
    Some(idx.into_iter().map(|i| memory.ids[i]).collect())
}

/// `r̂ = Q − γ·Q′·(1 − done)`.
pub fn estimate_rewards(q_now: f64, q_next_target: f64, gamma: f64, done: bool) -> f64 {
    if done {
        q_now
    } else {
        q_now - gamma * q_next_target
    }
}

#[derive(Debug, Clone)]
pub struct GlobalCritic {
    pub net: Mlp,
    pub target: Mlp,
    opt: OptimState,
    n_inputs: usize,
}

impl GlobalCritic {
    pub fn new(net: Mlp, opt: OptimConfig) -> Result<Self> {
        if net.output_dim() != 1 {
            return Err(Error::Config("global critic must output a scalar".into()));
        }
        Ok(GlobalCritic {
            target: net.clone(),
            n_inputs: net.input_dim(),
            net,
            opt: OptimState::new(opt)?,
        })
    }

    pub fn init<R: Rng + ?Sized>(
        n_inputs: usize,
        hidden: &[usize],
        activation: Activation,
        lr: f64,
        rng: &mut R,
    ) -> Result<Self> {
        let mut sizes = vec![n_inputs];
        sizes.extend(hidden);
        sizes.push(1);
        Self::new(Mlp::new(&sizes, activation, Activation::Linear, rng)?, OptimConfig::adam(lr))
    }

    fn concat(&self, q_values: &[&[f64]]) -> Result<Vec<f64>> {
        let x: Vec<f64> = q_values.iter().flat_map(|q| q.iter().copied()).collect();
        if x.len() != self.n_inputs {
            return Err(Error::Usage(format!(
                "global critic expects {} q inputs, got {}",
                self.n_inputs,
                x.len()
            )));
        }
        Ok(x)
    }

    /// `Q = net(q_1 ⊕ … ⊕ q_n)`; the tape is only meaningful for the live net.
    pub fn global_q(&self, q_values: &[&[f64]], use_target: bool) -> Result<(f64, Tape)> {
        let x = self.concat(q_values)?;
        let net = if use_target { &self.target } else { &self.net };
        let (out, tape) = net.forward(&x)?;
        Ok((out[0], tape))
    }

    pub fn step(&mut self, grads: &crate::nn::Grads) -> Result<()> {
        self.opt.step(&mut self.net, grads)
    }

    pub fn soft_update(&mut self, tau: f64) -> Result<()> {
        self.target.soft_update_from(&self.net, tau)
    }
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Serialize, Deserialize)]
pub struct UpdateStats {
    pub critic_loss: f64,
    /// Mean global (or central) critic value on the batch; unknown to the
    /// coordinator under encryption.
    pub mean_q: Option<f64>,
}

/// Operation counts for the computation column of the overhead report.
#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct OpCounts {
    pub agent_macs: u64,
    pub coordinator_macs: u64,
    pub he: HeOps,
}

/// Common interface of PP-MARL and the baselines.
pub trait Trainer: Send {
    fn kind(&self) -> TrainerKind;
    fn n_agents(&self) -> usize;
    /// Decentralized execution: each agent acts on its own observation.
    fn act(&mut self, observations: &[Vec<f64>], noise: f64) -> Result<Vec<Vec<f64>>>;
    /// Stores one joint timestep; `terminal` is the public episode boundary.
    fn observe(&mut self, id: MemoryId, experiences: Vec<Experience>, terminal: bool) -> Result<()>;
    /// One training iteration; `None` while memory is too small.
    fn update(&mut self) -> Result<Option<UpdateStats>>;
    fn agents(&self) -> &[Agent];
    fn bus(&self) -> &Bus;
    fn bus_mut(&mut self) -> &mut Bus;
    fn ops(&self) -> OpCounts;
    /// Every trainable network by checkpoint name.
    fn networks(&self) -> Vec<(String, Mlp)>;
}

pub(crate) fn agent_networks(agents: &[Agent]) -> Vec<(String, Mlp)> {
    let mut out = Vec::new();
    for a in agents {
        let n = a.nets();
        let i = a.index;
        out.push((format!("agent{i}_actor"), n.actor.clone()));
        out.push((format!("agent{i}_actor_target"), n.actor_target.clone()));
        out.push((format!("agent{i}_critic"), n.critic.clone()));
        out.push((format!("agent{i}_critic_target"), n.critic_target.clone()));
    }
    out
}

/// Everything needed to build any trainer for an environment.
#[derive(Debug, Clone)]
pub struct TrainerSpec {
    pub n_agents: usize,
    pub obs_dim: usize,
    pub action_dim: usize,
    pub training: TrainingConfig,
    pub privacy: PrivacyConfig,
    pub seed: u64,
}

pub(crate) fn init_agent_nets(spec: &TrainerSpec) -> Result<Vec<AgentNets>> {
    let cfg = spec.training.agent_config();
    (0..spec.n_agents)
        .map(|i| {
            let mut r = rng::stream(spec.seed, "agent-init", i as u64);
            AgentNets::init(spec.obs_dim, spec.action_dim, &cfg, &mut r)
        })
        .collect()
}

/// Builds the trainer named by `spec.training.trainer`.
pub fn build_trainer(spec: &TrainerSpec, bus: Bus) -> Result<Box<dyn Trainer>> {
    spec.training.validate(spec.n_agents)?;
    spec.privacy.validate()?;
    if spec.training.trainer != TrainerKind::PpMarl && !spec.privacy.is_none() {
        return Err(Error::Config(format!(
            "privacy mode applies to pp_marl only, not {}",
            spec.training.trainer.name()
        )));
    }
    Ok(match spec.training.trainer {
        TrainerKind::PpMarl => Box::new(PpMarl::new(spec, bus)?),
        TrainerKind::Maddpg => Box::new(Maddpg::new(spec, bus)?),
        TrainerKind::Ddpg => Box::new(Ddpg::new(spec, bus)?),
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    fn filled(n: u32) -> GlobalMemory {
        let mut m = GlobalMemory::new(1000).unwrap();
        for s in 0..n {
            m.insert(MemoryId::new(0, s), false).unwrap();
        }
        m
    }

    #[test]
    fn baselines_ignore_q_dim() {
        for trainer in [TrainerKind::Ddpg, TrainerKind::Maddpg] {
            let spec = TrainerSpec {
                n_agents: 2,
                obs_dim: 3,
                action_dim: 2,
                training: TrainingConfig { trainer, q_dim: 4, batch_size: 2, ..TrainingConfig::default() },
                privacy: PrivacyConfig::None,
                seed: 0,
            };
            let t = build_trainer(&spec, Bus::counting()).unwrap();
            assert!(t.agents().iter().all(|a| a.q_dim() == 1));
        }
    }

    #[test]
    fn reward_estimate_examples() {
        assert_eq!(estimate_rewards(1.0, 0.5, 0.9, true), 1.0);
        assert_eq!(estimate_rewards(1.0, 0.5, 0.0, false), 1.0);
        assert!((estimate_rewards(1.0, 0.5, 0.9, false) - 0.55).abs() < 1e-15);
    }

    #[test]
    fn sampling_edge_cases() {
        let m = filled(8);
        let mut r = rng::stream(0, "t", 0);
        let mut all = sample_batch(&m, 8, &mut r).unwrap();
        all.sort();
        assert_eq!(all, m.ids().collect::<Vec<_>>());
        assert!(sample_batch(&m, 9, &mut r).is_none());
        let a = sample_batch(&m, 4, &mut rng::stream(5, "t", 0)).unwrap();
        let b = sample_batch(&m, 4, &mut rng::stream(5, "t", 0)).unwrap();
        assert_eq!(a, b);
    }

    #[test]
    fn sampling_is_uniform_chi_square() {
        let n = 20u32;
        let m = filled(n);
        let mut r = rng::stream(1, "t", 0);
        let mut counts = vec![0u64; n as usize];
        let draws = 100_000;
        for _ in 0..draws {
            let b = sample_batch(&m, 5, &mut r).unwrap();
            let mut seen = std::collections::HashSet::new();
            for id in b {
                assert!(seen.insert(id), "duplicate within batch");
                counts[id.step as usize] += 1;
            }
        }
        let e = draws as f64 * 5.0 / n as f64;
        let chi2: f64 = counts.iter().map(|&c| (c as f64 - e).powi(2) / e).sum();
        // 19 dof, p = 0.001 critical value 43.8
        assert!(chi2 < 43.8, "chi2 {chi2}");
    }

    #[test]
    fn global_memory_fifo_and_duplicates() {
        let mut m = GlobalMemory::new(2).unwrap();
        m.insert(MemoryId::new(0, 0), false).unwrap();
        m.insert(MemoryId::new(0, 1), true).unwrap();
        assert!(m.insert(MemoryId::new(0, 1), true).is_err());
        assert_eq!(m.insert(MemoryId::new(0, 2), false).unwrap(), Some(MemoryId::new(0, 0)));
        assert!(m.is_terminal(MemoryId::new(0, 1)));
        assert!(!m.contains(MemoryId::new(0, 0)));
    }

    #[test]
    fn global_q_examples() {
        let mut net = Mlp::from_layers(vec![crate::nn::Layer::zeros(2, 1, Activation::Linear)]).unwrap();
        net.layers_mut()[0].bias[0] = 0.4;
        let c = GlobalCritic::new(net, OptimConfig::Sgd { lr: 0.1 }).unwrap();
        assert_eq!(c.global_q(&[&[1.0], &[2.0]], false).unwrap().0, 0.4);
        assert!(matches!(c.global_q(&[&[1.0]], false), Err(Error::Usage(_))));
    }

    #[test]
    fn global_q_permutation_invariance() {
        let mut r = rng::stream(2, "t", 0);
        let net = Mlp::new(&[3, 8, 1], Activation::Tanh, Activation::Linear, &mut r).unwrap();
        let mut swapped = net.clone();
        {
            let l = &mut swapped.layers_mut()[0];
            for o in 0..8 {
                l.weights.swap(o * 3, o * 3 + 2);
            }
        }
        let a = GlobalCritic::new(net, OptimConfig::Sgd { lr: 0.1 }).unwrap();
        let b = GlobalCritic::new(swapped, OptimConfig::Sgd { lr: 0.1 }).unwrap();
        let qa = a.global_q(&[&[0.1], &[0.7], &[-0.4]], false).unwrap().0;
        let qb = b.global_q(&[&[-0.4], &[0.7], &[0.1]], false).unwrap().0;
        assert!((qa - qb).abs() < 1e-14);
    }

    #[test]
    fn config_validation() {
        let mut c = TrainingConfig::default();
        c.validate(3).unwrap();
        c.gamma = 1.0;
        assert!(c.validate(3).is_err());
        c.gamma = 0.9;
        c.reward_groups = Some(vec![vec![0, 1], vec![1, 2]]);
        assert!(c.validate(3).is_err());
        c.reward_groups = Some(vec![vec![0, 2], vec![1]]);
        assert_eq!(c.groups(3).unwrap().len(), 2);
        c.reward_groups = Some(vec![vec![0]]);
        assert!(c.validate(3).is_err());
    }

    #[test]
    fn noise_schedule_is_linear() {
        let c = TrainingConfig {
            noise_start: 0.5,
            noise_end: 0.1,
            noise_decay_steps: 100,
            ..Default::default()
        };
        assert_eq!(c.noise_at(0), 0.5);
        assert!((c.noise_at(50) - 0.3).abs() < 1e-12);
        assert_eq!(c.noise_at(1000), 0.1);
    }
}
