//! Reference trainers: centralized critics over uploaded experiences
//! (MADDPG-style) and fully independent learners (DDPG-style).

use std::collections::{HashMap, VecDeque};

use crate::agent::{forward_macs, Agent, Experience, MemoryId};
use crate::bus::{Bus, Endpoint, MessageKind, Payload};
use crate::error::{Error, Result};
use crate::nn::{Activation, Grads, Mlp, OptimConfig, OptimState};
use crate::rng::{self, Stream};

use super::{agent_networks, init_agent_nets, OpCounts, Trainer, TrainerKind, TrainerSpec, TrainingConfig, UpdateStats};

/// Independent learners: each agent trains its actor and local critic on its
/// own memory. No message ever leaves an agent.
pub struct Ddpg {
    agents: Vec<Agent>,
    rngs: Vec<Stream>,
    cfg: TrainingConfig,
    bus: Bus,
}

impl Ddpg {
    pub fn new(spec: &TrainerSpec, bus: Bus) -> Result<Self> {
        let agent_cfg = spec.training.agent_config();
        let agents = init_agent_nets(spec)?
            .into_iter()
            .enumerate()
            .map(|(i, nets)| Agent::new(i, nets, &agent_cfg, spec.seed))
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(agents, spec.training.clone(), spec.seed, bus)
    }

    pub fn from_parts(agents: Vec<Agent>, cfg: TrainingConfig, seed: u64, bus: Bus) -> Result<Self> {
        cfg.validate(agents.len())?;
        Ok(Ddpg {
            rngs: (0..agents.len()).map(|i| rng::stream(seed, "batch", i as u64)).collect(),
            agents,
            cfg,
            bus,
        })
    }
}

impl Trainer for Ddpg {
    fn kind(&self) -> TrainerKind {
        TrainerKind::Ddpg
    }

    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn act(&mut self, observations: &[Vec<f64>], noise: f64) -> Result<Vec<Vec<f64>>> {
        if observations.len() != self.agents.len() {
            return Err(Error::Usage("one observation per agent required".into()));
        }
        self.agents.iter_mut().zip(observations).map(|(a, o)| a.act(o, noise)).collect()
    }

    fn observe(&mut self, id: MemoryId, experiences: Vec<Experience>, _terminal: bool) -> Result<()> {
        if experiences.len() != self.agents.len() {
            return Err(Error::Usage("one experience per agent required".into()));
        }
        for (a, e) in self.agents.iter_mut().zip(experiences) {
            a.store(id, e)?;
        }
        Ok(())
    }

    fn update(&mut self) -> Result<Option<UpdateStats>> {
        let b = self.cfg.batch_size;
        if self.agents.iter().any(|a| a.memory().len() < b) {
            return Ok(None);
        }
        let mut loss = 0.0;
        for (a, r) in self.agents.iter_mut().zip(&mut self.rngs) {
            let idx = rand::seq::index::sample(r, a.memory().len(), b);
            let ids: Vec<MemoryId> = idx.into_iter().map(|i| a.memory().id_at(i).expect("in range")).collect();
            loss += a.independent_update(&ids, self.cfg.gamma, self.cfg.tau)?;
        }
        let loss = loss / self.agents.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite critic loss {loss}")));
        }
        Ok(Some(UpdateStats {
            critic_loss: loss,
            mean_q: None,
        }))
    }

    fn agents(&self) -> &[Agent] {
        &self.agents
    }

    fn bus(&self) -> &Bus {
        &self.bus
    }

    fn bus_mut(&mut self) -> &mut Bus {
        &mut self.bus
    }

    fn ops(&self) -> OpCounts {
        OpCounts {
            agent_macs: self.agents.iter().map(|a| a.macs()).sum(),
            ..Default::default()
        }
    }

    fn networks(&self) -> Vec<(String, Mlp)> {
        agent_networks(&self.agents)
    }
}

/// Centralized training: agents upload every experience, the coordinator
/// trains one critic per agent over joint observations and actions plus a
/// copy of every actor, and pushes fresh actor weights back after each
/// iteration.
pub struct Maddpg {
    agents: Vec<Agent>,
    replay: HashMap<MemoryId, Vec<Experience>>,
    order: VecDeque<MemoryId>,
    critics: Vec<Mlp>,
    critic_targets: Vec<Mlp>,
    critic_opts: Vec<OptimState>,
    actors: Vec<Mlp>,
    actor_targets: Vec<Mlp>,
    actor_opts: Vec<OptimState>,
    cfg: TrainingConfig,
    bus: Bus,
    batch_rng: Stream,
    coordinator_macs: u64,
}

impl Maddpg {
    pub fn new(spec: &TrainerSpec, bus: Bus) -> Result<Self> {
        let cfg = &spec.training;
        let agent_cfg = cfg.agent_config();
        let agents = init_agent_nets(spec)?
            .into_iter()
            .enumerate()
            .map(|(i, nets)| Agent::new(i, nets, &agent_cfg, spec.seed))
            .collect::<Result<Vec<_>>>()?;
        let joint = spec.n_agents * (spec.obs_dim + spec.action_dim);
        let mut sizes = vec![joint];
        sizes.extend(&cfg.hidden);
        sizes.push(1);
        let critics = (0..spec.n_agents)
            .map(|i| {
                let mut r = rng::stream(spec.seed, "central-critic-init", i as u64);
                Mlp::new(&sizes, cfg.hidden_activation, Activation::Linear, &mut r)
            })
            .collect::<Result<Vec<_>>>()?;
        let opts = (OptimConfig::adam(cfg.actor_lr), OptimConfig::adam(cfg.critic_lr));
        Self::from_parts(agents, critics, opts, cfg.clone(), spec.seed, bus)
    }

    /// Central actor copies start from the agents' actors. `optimizers` is
    /// `(actor, critic)` for the coordinator-side networks.
    pub fn from_parts(
        agents: Vec<Agent>,
        critics: Vec<Mlp>,
        optimizers: (OptimConfig, OptimConfig),
        cfg: TrainingConfig,
        seed: u64,
        bus: Bus,
    ) -> Result<Self> {
        let n = agents.len();
        cfg.validate(n)?;
        if critics.len() != n {
            return Err(Error::Config("one central critic per agent required".into()));
        }
        let joint: usize = agents.iter().map(|a| a.nets().obs_dim() + a.nets().action_dim()).sum();
        if critics.iter().any(|c| c.input_dim() != joint || c.output_dim() != 1) {
            return Err(Error::Config(format!("central critics must map {joint} joint inputs to 1")));
        }
        let actors: Vec<Mlp> = agents.iter().map(|a| a.nets().actor.clone()).collect();
        Ok(Maddpg {
            replay: HashMap::new(),
            order: VecDeque::new(),
            critic_targets: critics.clone(),
            critic_opts: (0..n).map(|_| OptimState::new(optimizers.1.clone())).collect::<Result<_>>()?,
            actor_targets: agents.iter().map(|a| a.nets().actor_target.clone()).collect(),
            actor_opts: (0..n).map(|_| OptimState::new(optimizers.0.clone())).collect::<Result<_>>()?,
            critics,
            actors,
            agents,
            batch_rng: rng::stream(seed, "batch", 0),
            cfg,
            bus,
            coordinator_macs: 0,
        })
    }

    pub fn central_actors(&self) -> &[Mlp] {
        &self.actors
    }

    pub fn central_critics(&self) -> &[Mlp] {
        &self.critics
    }

    fn joint_input(obs: &[&[f64]], actions: &[&[f64]]) -> Vec<f64> {
        let mut x: Vec<f64> = obs.iter().flat_map(|o| o.iter().copied()).collect();
        x.extend(actions.iter().flat_map(|a| a.iter().copied()));
        x
    }

    fn update_agent(&mut self, i: usize, batch: &[&Vec<Experience>]) -> Result<f64> {
        let n = self.agents.len();
        let bsz = batch.len() as f64;
        let gamma = self.cfg.gamma;
        let act_off: usize = self.agents.iter().map(|a| a.nets().obs_dim()).sum::<usize>()
            + self.agents[..i].iter().map(|a| a.nets().action_dim()).sum::<usize>();
        let act_dim = self.agents[i].nets().action_dim();

        // critic
        let mut targets = Vec::with_capacity(batch.len());
        for joint in batch {
            let e = &joint[i];
            let next_obs: Vec<&[f64]> = joint.iter().map(|x| x.next_observation.as_slice()).collect();
            let next_act = (0..n)
                .map(|j| self.actor_targets[j].predict(next_obs[j]))
                .collect::<Result<Vec<_>>>()?;
            let acts: Vec<&[f64]> = next_act.iter().map(|a| a.as_slice()).collect();
            let qn = self.critic_targets[i].predict(&Self::joint_input(&next_obs, &acts))?[0];
            targets.push(e.reward + if e.done { 0.0 } else { gamma * qn });
        }
        let mut grads = Grads::zeros_like(&self.critics[i]);
        let mut loss = 0.0;
        for (joint, y) in batch.iter().zip(&targets) {
            let obs: Vec<&[f64]> = joint.iter().map(|x| x.observation.as_slice()).collect();
            let acts: Vec<&[f64]> = joint.iter().map(|x| x.action.as_slice()).collect();
            let (q, tape) = self.critics[i].forward(&Self::joint_input(&obs, &acts))?;
            let diff = q[0] - y;
            loss += diff * diff;
            self.critics[i].backward_into(&tape, &[2.0 * diff / bsz], &mut grads)?;
        }
        self.critic_opts[i].step(&mut self.critics[i], &grads)?;

        // actor
        let mut agrads = Grads::zeros_like(&self.actors[i]);
        for joint in batch {
            let obs: Vec<&[f64]> = joint.iter().map(|x| x.observation.as_slice()).collect();
            let (a_i, atape) = self.actors[i].forward(obs[i])?;
            let mut acts: Vec<&[f64]> = joint.iter().map(|x| x.action.as_slice()).collect();
            acts[i] = &a_i;
            let (_, ctape) = self.critics[i].forward(&Self::joint_input(&obs, &acts))?;
            let dx = self.critics[i].input_gradient(&ctape, &[1.0 / bsz])?;
            let da: Vec<f64> = dx[act_off..act_off + act_dim].iter().map(|v| -v).collect();
            self.actors[i].backward_into(&atape, &da, &mut agrads)?;
        }
        self.actor_opts[i].step(&mut self.actors[i], &agrads)?;

        let c = forward_macs(&self.critics[i]);
        let a: u64 = self.actors.iter().map(forward_macs).sum();
        self.coordinator_macs += batch.len() as u64 * (a + 3 * c + 2 * c + 3 * forward_macs(&self.actors[i]));
        Ok(loss / bsz)
    }
}

impl Trainer for Maddpg {
    fn kind(&self) -> TrainerKind {
        TrainerKind::Maddpg
    }

    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn act(&mut self, observations: &[Vec<f64>], noise: f64) -> Result<Vec<Vec<f64>>> {
        if observations.len() != self.agents.len() {
            return Err(Error::Usage("one observation per agent required".into()));
        }
        self.agents.iter_mut().zip(observations).map(|(a, o)| a.act(o, noise)).collect()
    }

    fn observe(&mut self, id: MemoryId, experiences: Vec<Experience>, _terminal: bool) -> Result<()> {
        if experiences.len() != self.agents.len() {
            return Err(Error::Usage("one experience per agent required".into()));
        }
        self.bus.next_round();
        let mut joint = Vec::with_capacity(experiences.len());
        for (i, e) in experiences.into_iter().enumerate() {
            self.agents[i].store(id, e.clone())?;
            let p = self.bus.send(
                MessageKind::Experience,
                Endpoint::agent(i),
                Endpoint::Coordinator,
                Payload::Experiences(vec![(id, e)]),
            )?;
            match p {
                Payload::Experiences(mut v) if v.len() == 1 => joint.push(v.remove(0).1),
                _ => return Err(Error::Data("experience upload corrupted".into())),
            }
        }
        if self.replay.contains_key(&id) {
            return Err(Error::Usage(format!("memory id {id:?} already uploaded")));
        }
        if self.order.len() == self.cfg.memory_capacity {
            let old = self.order.pop_front().expect("full");
            self.replay.remove(&old);
        }
        self.order.push_back(id);
        self.replay.insert(id, joint);
        Ok(())
    }

    fn update(&mut self) -> Result<Option<UpdateStats>> {
        let b = self.cfg.batch_size;
        if self.order.len() < b {
            return Ok(None);
        }
        let idx = rand::seq::index::sample(&mut self.batch_rng, self.order.len(), b);
        let ids: Vec<MemoryId> = idx.into_iter().map(|i| self.order[i]).collect();
        // borrow the batch out of the replay while updating the networks
        let replay = std::mem::take(&mut self.replay);
        let batch: Vec<&Vec<Experience>> = ids.iter().map(|id| &replay[id]).collect();
        let mut loss = 0.0;
        let mut result = Ok(());
        for i in 0..self.agents.len() {
            match self.update_agent(i, &batch) {
                Ok(l) => loss += l,
                Err(e) => {
                    result = Err(e);
                    break;
                }
            }
        }
        drop(batch);
        self.replay = replay;
        result?;
        for i in 0..self.agents.len() {
            self.actor_targets[i].soft_update_from(&self.actors[i], self.cfg.tau)?;
            self.critic_targets[i].soft_update_from(&self.critics[i], self.cfg.tau)?;
        }
        self.bus.next_round();
        for i in 0..self.agents.len() {
            let p = self.bus.send(
                MessageKind::Weights,
                Endpoint::Coordinator,
                Endpoint::agent(i),
                Payload::Reals(self.actors[i].flat_params()),
            )?;
            let mut actor = self.agents[i].nets().actor.clone();
            actor.set_flat_params(&p.into_reals()?)?;
            self.agents[i].set_actor(actor)?;
        }
        let loss = loss / self.agents.len() as f64;
        if !loss.is_finite() {
            return Err(Error::Training(format!("non-finite critic loss {loss}")));
        }
        Ok(Some(UpdateStats {
            critic_loss: loss,
            mean_q: None,
        }))
    }

    fn agents(&self) -> &[Agent] {
        &self.agents
    }

    fn bus(&self) -> &Bus {
        &self.bus
    }

    fn bus_mut(&mut self) -> &mut Bus {
        &mut self.bus
    }

    fn ops(&self) -> OpCounts {
        OpCounts {
            agent_macs: self.agents.iter().map(|a| a.macs()).sum(),
            coordinator_macs: self.coordinator_macs,
            ..Default::default()
        }
    }

    fn networks(&self) -> Vec<(String, Mlp)> {
        let mut out = agent_networks(&self.agents);
        for i in 0..self.agents.len() {
            out.push((format!("central{i}_actor"), self.actors[i].clone()));
            out.push((format!("central{i}_actor_target"), self.actor_targets[i].clone()));
            out.push((format!("central{i}_critic"), self.critics[i].clone()));
            out.push((format!("central{i}_critic_target"), self.critic_targets[i].clone()));
        }
        out
    }
}
