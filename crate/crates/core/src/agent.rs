//! The private half of the hierarchical architecture.
//!
//! An [`Agent`] owns its actor, its local critic, target copies of both and a
//! [`LocalMemory`] of experiences. Nothing in here ever hands an
//! [`Experience`] to another party: the coordinator only learns memory ids,
//! local critic outputs, losses and interface gradients.

use std::collections::{HashMap, VecDeque};

use rand::Rng;
use rand_distr::StandardNormal;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Activation, Grads, Mlp, OptimConfig, OptimState, Tape};
use crate::rng::{self, Stream};

/// Globally shared index of one joint timestep.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct MemoryId {
    pub episode: u32,
    pub step: u32,
}

impl MemoryId {
    pub const fn new(episode: u32, step: u32) -> Self {
        MemoryId { episode, step }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Experience {
    pub observation: Vec<f64>,
    pub action: Vec<f64>,
    pub reward: f64,
    pub next_observation: Vec<f64>,
    pub done: bool,
}

/// Local critic output for one experience.
pub type QValue = Vec<f64>;

/// FIFO store of experiences keyed by [`MemoryId`].
#[derive(Debug, Clone)]
pub struct LocalMemory {
    capacity: usize,
    entries: HashMap<MemoryId, Experience>,
    order: VecDeque<MemoryId>,
}

impl LocalMemory {
    pub fn new(capacity: usize) -> Result<Self> {
        if capacity == 0 {
            return Err(Error::Config("memory capacity must be positive".into()));
        }
        Ok(LocalMemory {
            capacity,
            entries: HashMap::new(),
            order: VecDeque::new(),
        })
    }

    /// Inserts and returns the id evicted to make room, if any.
    pub fn insert(&mut self, id: MemoryId, exp: Experience) -> Result<Option<MemoryId>> {
        if self.entries.contains_key(&id) {
            return Err(Error::Usage(format!("memory id {id:?} already stored")));
        }
        let evicted = if self.order.len() == self.capacity {
            let old = self.order.pop_front().expect("non-empty at capacity");
            self.entries.remove(&old);
            Some(old)
        } else {
            None
        };
        self.entries.insert(id, exp);
        self.order.push_back(id);
        Ok(evicted)
    }

    pub fn get(&self, id: MemoryId) -> Option<&Experience> {
        self.entries.get(&id)
    }

    pub fn len(&self) -> usize {
        self.order.len()
    }

    pub fn is_empty(&self) -> bool {
        self.order.is_empty()
    }

    pub fn capacity(&self) -> usize {
        self.capacity
    }

    /// Id at position `i` in insertion order.
    pub fn id_at(&self, i: usize) -> Option<MemoryId> {
        self.order.get(i).copied()
    }

    /// Ids in insertion order.
    pub fn ids(&self) -> impl Iterator<Item = MemoryId> + '_ {
        self.order.iter().copied()
    }

    /// Evaluation-only: every stored experience in insertion order.
    pub fn dump(&self) -> Vec<(MemoryId, &Experience)> {
        self.order.iter().map(|id| (*id, &self.entries[id])).collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AgentConfig {
    pub hidden: Vec<usize>,
    pub hidden_activation: Activation,
    pub q_dim: usize,
    pub actor_lr: f64,
    pub critic_lr: f64,
    pub memory_capacity: usize,
}

impl Default for AgentConfig {
    fn default() -> Self {
        AgentConfig {
            hidden: vec![64, 64],
            hidden_activation: Activation::Relu,
            q_dim: 1,
            actor_lr: 1e-3,
            critic_lr: 1e-3,
            memory_capacity: 100_000,
        }
    }
}

/// Actor and local critic with their target copies.
#[derive(Debug, Clone, PartialEq)]
pub struct AgentNets {
    pub actor: Mlp,
    pub actor_target: Mlp,
    pub critic: Mlp,
    pub critic_target: Mlp,
}

impl AgentNets {
    /// Fresh networks: actor `obs → action` (tanh), critic `obs ⊕ action → q` (linear).
    pub fn init<R: Rng + ?Sized>(
        obs_dim: usize,
        action_dim: usize,
        config: &AgentConfig,
        rng: &mut R,
    ) -> Result<Self> {
        let mut actor_sizes = vec![obs_dim];
        actor_sizes.extend(&config.hidden);
        actor_sizes.push(action_dim);
        let mut critic_sizes = vec![obs_dim + action_dim];
        critic_sizes.extend(&config.hidden);
        critic_sizes.push(config.q_dim);
        let actor = Mlp::new(&actor_sizes, config.hidden_activation, Activation::Tanh, rng)?;
        let critic = Mlp::new(&critic_sizes, config.hidden_activation, Activation::Linear, rng)?;
        Self::from_live(actor, critic)
    }

    /// Targets start as exact copies.
    pub fn from_live(actor: Mlp, critic: Mlp) -> Result<Self> {
        if critic.input_dim() <= actor.input_dim() {
            return Err(Error::Config("critic input must be observation plus action".into()));
        }
        if critic.input_dim() != actor.input_dim() + actor.output_dim() {
            return Err(Error::Config(format!(
                "critic input {} != observation {} + action {}",
                critic.input_dim(),
                actor.input_dim(),
                actor.output_dim()
            )));
        }
        Ok(AgentNets {
            actor_target: actor.clone(),
            critic_target: critic.clone(),
            actor,
            critic,
        })
    }

    pub fn obs_dim(&self) -> usize {
        self.actor.input_dim()
    }

    pub fn action_dim(&self) -> usize {
        self.actor.output_dim()
    }

    pub fn q_dim(&self) -> usize {
        self.critic.output_dim()
    }
}

/// Forward caches held between a q request and the matching gradient.
#[derive(Debug)]
struct PolicyTape {
    actor: Tape,
    critic: Tape,
}

#[derive(Debug)]
pub struct Agent {
    pub index: usize,
    nets: AgentNets,
    actor_opt: OptimState,
    critic_opt: OptimState,
    memory: LocalMemory,
    critic_tapes: HashMap<MemoryId, Tape>,
    policy_tapes: HashMap<MemoryId, PolicyTape>,
    noise: Stream,
    macs: u64,
}

fn concat(a: &[f64], b: &[f64]) -> Vec<f64> {
    let mut v = Vec::with_capacity(a.len() + b.len());
    v.extend_from_slice(a);
    v.extend_from_slice(b);
    v
}

pub(crate) fn forward_macs(net: &Mlp) -> u64 {
    net.layers().iter().map(|l| (l.inputs * l.outputs) as u64).sum()
}

impl Agent {
    pub fn new(index: usize, nets: AgentNets, config: &AgentConfig, seed: u64) -> Result<Self> {
        Self::with_optimizers(
            index,
            nets,
            OptimConfig::adam(config.actor_lr),
            OptimConfig::adam(config.critic_lr),
            config.memory_capacity,
            seed,
        )
    }

    pub fn with_optimizers(
        index: usize,
        nets: AgentNets,
        actor_opt: OptimConfig,
        critic_opt: OptimConfig,
        memory_capacity: usize,
        seed: u64,
    ) -> Result<Self> {
        Ok(Agent {
            index,
            nets,
            actor_opt: OptimState::new(actor_opt)?,
            critic_opt: OptimState::new(critic_opt)?,
            memory: LocalMemory::new(memory_capacity)?,
            critic_tapes: HashMap::new(),
            policy_tapes: HashMap::new(),
            noise: rng::stream(seed, "exploration", index as u64),
            macs: 0,
        })
    }

    pub fn nets(&self) -> &AgentNets {
        &self.nets
    }

    /// Replaces the actor, e.g. with weights trained elsewhere.
    pub fn set_actor(&mut self, actor: Mlp) -> Result<()> {
        self.nets.actor.check_congruent(&actor)?;
        self.nets.actor = actor;
        self.policy_tapes.clear();
        Ok(())
    }

    pub fn memory(&self) -> &LocalMemory {
        &self.memory
    }

    pub fn q_dim(&self) -> usize {
        self.nets.q_dim()
    }

    /// Multiply-accumulate operations spent in this agent's networks.
    pub fn macs(&self) -> u64 {
        self.macs
    }

    /// Deterministic policy output plus clipped Gaussian exploration noise.
    pub fn act(&mut self, observation: &[f64], noise_scale: f64) -> Result<Vec<f64>> {
        let mean = self.nets.actor.predict(observation)?;
        self.macs += forward_macs(&self.nets.actor);
        Ok(mean
            .into_iter()
            .map(|m| {
                let eps: f64 = if noise_scale > 0.0 {
                    self.noise.sample(StandardNormal)
                } else {
                    0.0
                };
                (m + noise_scale * eps).clamp(-1.0, 1.0)
            })
            .collect())
    }

    pub fn store(&mut self, id: MemoryId, exp: Experience) -> Result<Option<MemoryId>> {
        if exp.observation.len() != self.nets.obs_dim()
            || exp.next_observation.len() != self.nets.obs_dim()
            || exp.action.len() != self.nets.action_dim()
        {
            return Err(Error::Usage("experience dimensions do not match networks".into()));
        }
        let evicted = self.memory.insert(id, exp)?;
        if let Some(old) = evicted {
            self.critic_tapes.remove(&old);
            self.policy_tapes.remove(&old);
        }
        Ok(evicted)
    }

    pub fn fetch(&self, id: MemoryId) -> Option<&Experience> {
        self.memory.get(id)
    }

    /// Local critic value of a stored experience; `None` when the id is not
    /// (or no longer) in memory.
    ///
    /// With `use_target` the target critic is evaluated on the next
    /// observation and the target actor's action for it. A live evaluation
    /// without override keeps its tape for [`Agent::apply_critic_grad`].
    pub fn local_q(
        &mut self,
        id: MemoryId,
        use_target: bool,
        action_override: Option<&[f64]>,
    ) -> Result<Option<QValue>> {
        let Some(exp) = self.memory.get(id) else {
            return Ok(None);
        };
        if use_target {
            let next_obs = exp.next_observation.clone();
            let a = match action_override {
                Some(a) => a.to_vec(),
                None => {
                    self.macs += forward_macs(&self.nets.actor_target);
                    self.nets.actor_target.predict(&next_obs)?
                }
            };
            self.macs += forward_macs(&self.nets.critic_target);
            return Ok(Some(self.nets.critic_target.predict(&concat(&next_obs, &a))?));
        }
        let input = concat(&exp.observation, action_override.unwrap_or(&exp.action));
        let (q, tape) = self.nets.critic.forward(&input)?;
        self.macs += forward_macs(&self.nets.critic);
        if action_override.is_none() {
            self.critic_tapes.insert(id, tape);
        }
        Ok(Some(q))
    }

    /// Live critic value with the stored action, without keeping a tape.
    pub fn stored_q(&mut self, id: MemoryId) -> Result<Option<QValue>> {
        let Some(exp) = self.memory.get(id) else {
            return Ok(None);
        };
        self.macs += forward_macs(&self.nets.critic);
        Ok(Some(self.nets.critic.predict(&concat(&exp.observation, &exp.action))?))
    }

    /// Live critic value with the action replaced by the current actor's
    /// output; keeps both tapes for [`Agent::apply_actor_grad`].
    pub fn policy_q(&mut self, id: MemoryId) -> Result<Option<QValue>> {
        let Some(exp) = self.memory.get(id) else {
            return Ok(None);
        };
        let obs = exp.observation.clone();
        let (action, actor_tape) = self.nets.actor.forward(&obs)?;
        let (q, critic_tape) = self.nets.critic.forward(&concat(&obs, &action))?;
        self.macs += forward_macs(&self.nets.actor) + forward_macs(&self.nets.critic);
        self.policy_tapes.insert(
            id,
            PolicyTape {
                actor: actor_tape,
                critic: critic_tape,
            },
        );
        Ok(Some(q))
    }

    /// Mean squared error between estimated and stored rewards, and its
    /// gradient with respect to each estimate. Rewards stay here.
    pub fn local_critic_loss(&self, ids: &[MemoryId], estimated: &[f64]) -> Result<(f64, Vec<f64>)> {
        if ids.len() != estimated.len() {
            return Err(Error::Usage(format!(
                "{} ids but {} reward estimates",
                ids.len(),
                estimated.len()
            )));
        }
        if ids.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let n = ids.len() as f64;
        let mut loss = 0.0;
        let mut grads = Vec::with_capacity(ids.len());
        for (id, &r_hat) in ids.iter().zip(estimated) {
            let exp = self
                .memory
                .get(*id)
                .ok_or_else(|| Error::Usage(format!("memory id {id:?} not held")))?;
            let diff = r_hat - exp.reward;
            loss += diff * diff;
            grads.push(2.0 * diff / n);
        }
        Ok((loss / n, grads))
    }

    /// Backpropagates coordinator-supplied gradients at the q interface
    /// through the local critic and takes one optimizer step.
    pub fn apply_critic_grad(&mut self, ids: &[MemoryId], dloss_dq: &[QValue]) -> Result<()> {
        if ids.len() != dloss_dq.len() {
            return Err(Error::Usage("one gradient per id required".into()));
        }
        let mut grads = Grads::zeros_like(&self.nets.critic);
        for (id, g) in ids.iter().zip(dloss_dq) {
            let tape = self
                .critic_tapes
                .get(id)
                .ok_or_else(|| Error::Usage(format!("no critic tape for {id:?}")))?;
            self.nets.critic.backward_into(tape, g, &mut grads)?;
            self.macs += 2 * forward_macs(&self.nets.critic);
        }
        for id in ids {
            self.critic_tapes.remove(id);
        }
        self.critic_opt.step(&mut self.nets.critic, &grads)
    }

    /// Chain rule from `dQ/dq_i` through the local critic's action input into
    /// the actor, then one ascent step on Q.
    pub fn apply_actor_grad(&mut self, ids: &[MemoryId], dq_dqi: &[QValue]) -> Result<()> {
        if ids.len() != dq_dqi.len() {
            return Err(Error::Usage("one gradient per id required".into()));
        }
        let obs_dim = self.nets.obs_dim();
        let mut grads = Grads::zeros_like(&self.nets.actor);
        for (id, g) in ids.iter().zip(dq_dqi) {
            let tapes = self
                .policy_tapes
                .get(id)
                .ok_or_else(|| Error::Usage(format!("no policy tape for {id:?}")))?;
            let d_input = self.nets.critic.input_gradient(&tapes.critic, g)?;
            // descend on −Q
            let d_action: Vec<f64> = d_input[obs_dim..].iter().map(|v| -v).collect();
            self.nets.actor.backward_into(&tapes.actor, &d_action, &mut grads)?;
            self.macs += 2 * (forward_macs(&self.nets.critic) + forward_macs(&self.nets.actor));
        }
        for id in ids {
            self.policy_tapes.remove(id);
        }
        self.actor_opt.step(&mut self.nets.actor, &grads)
    }

    pub fn soft_update_targets(&mut self, tau: f64) -> Result<()> {
        self.nets.actor_target.soft_update_from(&self.nets.actor, tau)?;
        self.nets.critic_target.soft_update_from(&self.nets.critic, tau)?;
        Ok(())
    }

    /// Independent-learner update (no coordinator): TD on the local critic
    /// with the stored team reward, then a deterministic policy gradient step.
    pub fn independent_update(&mut self, ids: &[MemoryId], gamma: f64, tau: f64) -> Result<f64> {
        if ids.is_empty() {
            return Err(Error::Usage("empty batch".into()));
        }
        let n = ids.len() as f64;
        let mut targets = Vec::with_capacity(ids.len());
        for id in ids {
            let exp = self
                .memory
                .get(*id)
                .ok_or_else(|| Error::Usage(format!("memory id {id:?} not held")))?;
            let (r, done) = (exp.reward, exp.done);
            let q_next = self.local_q(*id, true, None)?.expect("present")[0];
            targets.push(r + if done { 0.0 } else { gamma * q_next });
        }
        let mut loss = 0.0;
        let mut dq = Vec::with_capacity(ids.len());
        for (id, y) in ids.iter().zip(&targets) {
            let q = self.local_q(*id, false, None)?.expect("present")[0];
            let diff = q - y;
            loss += diff * diff;
            dq.push(vec![2.0 * diff / n]);
        }
        self.apply_critic_grad(ids, &dq)?;
        for id in ids {
            self.policy_q(*id)?;
        }
        let dj: Vec<QValue> = ids.iter().map(|_| vec![1.0 / n]).collect();
        self.apply_actor_grad(ids, &dj)?;
        self.soft_update_targets(tau)?;
        Ok(loss / n)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::nn::Layer;

    fn exp(obs: Vec<f64>, action: Vec<f64>, reward: f64) -> Experience {
        Experience {
            next_observation: obs.iter().map(|v| v + 0.5).collect(),
            observation: obs,
            action,
            reward,
            done: false,
        }
    }

    fn linear(inputs: usize, outputs: usize, w: f64, b: f64, act: Activation) -> Mlp {
        Mlp::from_layers(vec![Layer {
            inputs,
            outputs,
            weights: vec![w; inputs * outputs],
            bias: vec![b; outputs],
            activation: act,
        }])
        .unwrap()
    }

    fn sgd_agent(actor: Mlp, critic: Mlp, lr: f64) -> Agent {
        Agent::with_optimizers(
            0,
            AgentNets::from_live(actor, critic).unwrap(),
            OptimConfig::Sgd { lr },
            OptimConfig::Sgd { lr },
            8,
            0,
        )
        .unwrap()
    }

    #[test]
    fn zero_actor_and_no_noise_gives_zero_action() {
        let mut a = sgd_agent(linear(3, 2, 0.0, 0.0, Activation::Tanh), linear(5, 1, 0.1, 0.0, Activation::Linear), 0.1);
        assert_eq!(a.act(&[1.0, 2.0, 3.0], 0.0).unwrap(), vec![0.0, 0.0]);
        assert!(a.act(&[1.0], 0.0).is_err());
    }

    #[test]
    fn deterministic_policy_is_repeatable() {
        let mut rng = rng::stream(1, "t", 0);
        let nets = AgentNets::init(4, 2, &AgentConfig::default(), &mut rng).unwrap();
        let mut a = Agent::new(0, nets, &AgentConfig::default(), 5).unwrap();
        let x = [0.1, -0.2, 0.3, 0.9];
        assert_eq!(a.act(&x, 0.0).unwrap(), a.act(&x, 0.0).unwrap());
    }

    #[test]
    fn exploration_noise_std() {
        // zero actor so the pre-clamp perturbation is the noise itself; 0.1 keeps clamping negligible
        let mut a = sgd_agent(linear(2, 2, 0.0, 0.0, Activation::Tanh), linear(4, 1, 0.0, 0.0, Activation::Linear), 0.1);
        let draws: Vec<f64> = (0..5000).flat_map(|_| a.act(&[0.3, 0.4], 0.1).unwrap()).collect();
        let n = draws.len() as f64;
        let mean = draws.iter().sum::<f64>() / n;
        let std = (draws.iter().map(|d| (d - mean).powi(2)).sum::<f64>() / (n - 1.0)).sqrt();
        assert!((std - 0.1).abs() < 0.005, "std {std}");
    }

    #[test]
    fn store_fetch_and_duplicates() {
        let mut a = sgd_agent(linear(2, 2, 0.0, 0.0, Activation::Tanh), linear(4, 1, 0.0, 0.7, Activation::Linear), 0.1);
        let id = MemoryId::new(0, 0);
        a.store(id, exp(vec![1.0, 2.0], vec![0.1, 0.2], 3.0)).unwrap();
        assert_eq!(a.fetch(id).unwrap().reward, 3.0);
        assert!(matches!(a.store(id, exp(vec![1.0, 2.0], vec![0.1, 0.2], 3.0)), Err(Error::Usage(_))));
        assert_eq!(a.local_q(MemoryId::new(9, 9), false, None).unwrap(), None);
        // zero-weight critic with bias b
        assert_eq!(a.local_q(id, false, None).unwrap(), Some(vec![0.7]));
        assert_eq!(a.local_q(id, true, None).unwrap(), Some(vec![0.7]));
    }

    #[test]
    fn fifo_eviction_drops_oldest() {
        let mut mem = LocalMemory::new(5).unwrap();
        let k = 3;
        for s in 0..(5 + k) as u32 {
            mem.insert(MemoryId::new(0, s), exp(vec![0.0], vec![0.0], 0.0)).unwrap();
        }
        for s in 0..(5 + k) as u32 {
            assert_eq!(mem.get(MemoryId::new(0, s)).is_none(), (s as usize) < k);
        }
    }

    #[test]
    fn override_with_stored_action_matches() {
        let mut rng = rng::stream(2, "t", 0);
        let nets = AgentNets::init(3, 2, &AgentConfig::default(), &mut rng).unwrap();
        let mut a = Agent::new(0, nets, &AgentConfig::default(), 0).unwrap();
        let id = MemoryId::new(1, 2);
        a.store(id, exp(vec![0.1, 0.2, 0.3], vec![0.5, -0.5], 1.0)).unwrap();
        let q1 = a.local_q(id, false, None).unwrap();
        let q2 = a.local_q(id, false, Some(&[0.5, -0.5])).unwrap();
        assert_eq!(q1, q2);
        assert_eq!(q1, a.local_q(id, false, None).unwrap());
    }

    #[test]
    fn critic_loss_definition() {
        let mut a = sgd_agent(linear(1, 1, 0.0, 0.0, Activation::Tanh), linear(2, 1, 0.0, 0.0, Activation::Linear), 0.1);
        let id = MemoryId::new(0, 0);
        a.store(id, exp(vec![1.0], vec![0.0], 2.0)).unwrap();
        assert_eq!(a.local_critic_loss(&[id], &[2.0]).unwrap(), (0.0, vec![0.0]));
        assert_eq!(a.local_critic_loss(&[id], &[3.0]).unwrap(), (1.0, vec![2.0]));
        assert!(matches!(a.local_critic_loss(&[id], &[1.0, 2.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn linear_critic_grad_is_input_outer_lr() {
        let mut a = sgd_agent(linear(2, 1, 0.0, 0.0, Activation::Tanh), linear(3, 1, 0.2, 0.1, Activation::Linear), 0.5);
        let id = MemoryId::new(0, 0);
        a.store(id, exp(vec![1.0, -2.0], vec![0.5], 0.0)).unwrap();
        a.local_q(id, false, None).unwrap();
        a.apply_critic_grad(&[id], &[vec![1.0]]).unwrap();
        let p = a.nets().critic.flat_params();
        let expect = [0.2 - 0.5 * 1.0, 0.2 - 0.5 * -2.0, 0.2 - 0.5 * 0.5, 0.1 - 0.5];
        for (x, e) in p.iter().zip(expect) {
            assert!((x - e).abs() < 1e-15);
        }
        // tape consumed
        assert!(matches!(a.apply_critic_grad(&[id], &[vec![1.0]]), Err(Error::Usage(_))));
    }

    #[test]
    fn zero_interface_grads_change_nothing() {
        let mut rng = rng::stream(3, "t", 0);
        let nets = AgentNets::init(3, 2, &AgentConfig::default(), &mut rng).unwrap();
        let mut a = Agent::new(0, nets.clone(), &AgentConfig::default(), 0).unwrap();
        let id = MemoryId::new(0, 1);
        a.store(id, exp(vec![0.3, 0.1, -0.4], vec![0.2, 0.9], 1.0)).unwrap();
        a.local_q(id, false, None).unwrap();
        a.apply_critic_grad(&[id], &[vec![0.0]]).unwrap();
        a.policy_q(id).unwrap();
        a.apply_actor_grad(&[id], &[vec![0.0]]).unwrap();
        assert_eq!(a.nets().critic, nets.critic);
        assert_eq!(a.nets().actor, nets.actor);
    }

    #[test]
    fn linear_actor_chain_rule() {
        // actor a = w_a·o (linear), critic q = w_o·o + w_c·a + b
        let actor = linear(1, 1, 0.5, 0.0, Activation::Linear);
        let critic = Mlp::from_layers(vec![Layer {
            inputs: 2,
            outputs: 1,
            weights: vec![0.3, -0.7],
            bias: vec![0.0],
            activation: Activation::Linear,
        }])
        .unwrap();
        let mut a = sgd_agent(actor, critic, 0.1);
        let id = MemoryId::new(0, 0);
        a.store(id, exp(vec![2.0], vec![0.0], 0.0)).unwrap();
        a.policy_q(id).unwrap();
        a.apply_actor_grad(&[id], &[vec![1.5]]).unwrap();
        // dQ/dw_a = g·w_c·o = 1.5·(−0.7)·2 ; ascent with lr 0.1
        let w = a.nets().actor.flat_params();
        assert!((w[0] - (0.5 + 0.1 * 1.5 * -0.7 * 2.0)).abs() < 1e-15);
        assert!((w[1] - (0.1 * 1.5 * -0.7)).abs() < 1e-15);
    }

    #[test]
    fn actor_grad_needs_policy_tape() {
        let mut a = sgd_agent(linear(1, 1, 0.5, 0.0, Activation::Linear), linear(2, 1, 0.1, 0.0, Activation::Linear), 0.1);
        let id = MemoryId::new(0, 0);
        a.store(id, exp(vec![2.0], vec![0.0], 0.0)).unwrap();
        assert!(matches!(a.apply_actor_grad(&[id], &[vec![1.0]]), Err(Error::Usage(_))));
    }
}
