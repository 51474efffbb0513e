//! Hierarchical-critic training over the bus.
//!
//! One training iteration is a critic round followed by one actor round per
//! agent, then soft updates of every target network:
//!
//! 1. coordinator sends the sampled ids; each agent answers with its live q
//!    and target q for every id
//! 2. coordinator evaluates Q and target Q, sends `r̂ = Q − γQ′(1 − done)`
//! 3. each agent answers with its local loss and `d loss / d r̂`
//! 4. coordinator backpropagates the averaged upstream gradient through the
//!    global critic and sends each agent `d loss / d q_i`
//! 5. every agent sends q for its stored actions under the updated critic;
//!    for each agent i in turn it sends q with its current policy action and
//!    receives `dQ/dq_i`, which it chains into its actor
//!
//! All q traffic goes through the configured privacy channel.

use num_bigint::BigUint;

use crate::agent::{forward_macs, Agent, Experience, MemoryId, QValue};
use crate::bus::{Bus, Endpoint, MessageKind, Payload};
use crate::error::{Error, Result};
use crate::nn::{Grads, Mlp};
use crate::privacy::paillier::{encryption_rng, Ciphertext, HeOps};
use crate::privacy::{dp_protect, DpConfig, HeEvaluator, HeMode, KeyPair, Keyholder, KeyholderRole, PrivacyConfig};
use crate::rng::{self, Stream};

use super::{
    agent_networks, estimate_rewards, init_agent_nets, sample_batch, GlobalCritic, GlobalMemory, OpCounts, Trainer, TrainerKind,
    TrainerSpec, TrainingConfig, UpdateStats,
};

struct HeState {
    eval: HeEvaluator,
    keyholder: Keyholder,
    agent_keys: KeyPair,
    agent_rngs: Vec<Stream>,
    agent_ops: HeOps,
}

enum Channel {
    Plain,
    Dp { cfg: DpConfig, rngs: Vec<Stream> },
    He(Box<HeState>),
}

/// What the coordinator holds after an upload.
enum Received {
    Plain(Vec<QValue>),
    Enc(Vec<Vec<Ciphertext>>),
}

impl Received {
    fn plain(&self) -> &[QValue] {
        match self {
            Received::Plain(v) => v,
            Received::Enc(_) => unreachable!("plaintext requested on encrypted channel"),
        }
    }

    fn enc(&self) -> &[Vec<Ciphertext>] {
        match self {
            Received::Enc(v) => v,
            Received::Plain(_) => unreachable!("ciphertext requested on plaintext channel"),
        }
    }
}

pub struct PpMarl {
    agents: Vec<Agent>,
    memory: GlobalMemory,
    critics: Vec<GlobalCritic>,
    groups: Vec<Vec<usize>>,
    group_of: Vec<usize>,
    cfg: TrainingConfig,
    bus: Bus,
    batch_rng: Stream,
    channel: Channel,
    coordinator_macs: u64,
}

impl std::fmt::Debug for PpMarl {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("PpMarl")
            .field("agents", &self.agents.len())
            .field("groups", &self.groups)
            .finish_non_exhaustive()
    }
}

fn flatten(rows: &[QValue]) -> Vec<f64> {
    rows.iter().flatten().copied().collect()
}

fn rows_of(v: Vec<f64>, width: usize) -> Result<Vec<QValue>> {
    if width == 0 || v.len() % width != 0 {
        return Err(Error::Data("payload does not match row width".into()));
    }
    Ok(v.chunks(width).map(|c| c.to_vec()).collect())
}

impl PpMarl {
    pub fn new(spec: &TrainerSpec, bus: Bus) -> Result<Self> {
        let cfg = &spec.training;
        let agent_cfg = cfg.agent_config();
        let agents = init_agent_nets(spec)?
            .into_iter()
            .enumerate()
            .map(|(i, nets)| Agent::new(i, nets, &agent_cfg, spec.seed))
            .collect::<Result<Vec<_>>>()?;
        let groups = cfg.groups(spec.n_agents)?;
        let critics = (0..groups.len())
            .map(|g| {
                let mut r = rng::stream(spec.seed, "global-init", g as u64);
                GlobalCritic::init(
                    spec.n_agents * cfg.q_dim,
                    &cfg.global_hidden,
                    cfg.global_activation,
                    cfg.global_critic_lr,
                    &mut r,
                )
            })
            .collect::<Result<Vec<_>>>()?;
        Self::from_parts(agents, critics, cfg.clone(), &spec.privacy, spec.seed, bus)
    }

    /// Assembles a trainer from existing agents and global critics, one
    /// critic per reward group.
    pub fn from_parts(
        agents: Vec<Agent>,
        critics: Vec<GlobalCritic>,
        cfg: TrainingConfig,
        privacy: &PrivacyConfig,
        seed: u64,
        bus: Bus,
    ) -> Result<Self> {
        let n = agents.len();
        if n == 0 {
            return Err(Error::Config("need at least one agent".into()));
        }
        cfg.validate(n)?;
        privacy.validate()?;
        let groups = cfg.groups(n)?;
        if critics.len() != groups.len() {
            return Err(Error::Config(format!(
                "{} global critics for {} reward groups",
                critics.len(),
                groups.len()
            )));
        }
        for (i, a) in agents.iter().enumerate() {
            if a.q_dim() != cfg.q_dim || a.index != i {
                return Err(Error::Config(format!("agent {i} does not match q_dim / index")));
            }
        }
        for c in &critics {
            if c.net.input_dim() != n * cfg.q_dim {
                return Err(Error::Config("global critic input must be n_agents × q_dim".into()));
            }
        }
        let mut group_of = vec![0; n];
        for (g, members) in groups.iter().enumerate() {
            for &i in members {
                group_of[i] = g;
            }
        }
        let channel = match privacy {
            PrivacyConfig::None => Channel::Plain,
            PrivacyConfig::Dp(c) => Channel::Dp {
                cfg: *c,
                rngs: (0..n).map(|i| rng::stream(seed, "dp", i as u64)).collect(),
            },
            PrivacyConfig::HeInteractive(hc) | PrivacyConfig::HeLinear(hc) => {
                let mode = if matches!(privacy, PrivacyConfig::HeInteractive(_)) {
                    HeMode::Interactive
                } else {
                    HeMode::Linear
                };
                for c in &critics {
                    crate::privacy::he::check_compatible(&c.net, mode)?;
                }
                let keys = KeyPair::generate(hc.key_bits, rng::derive(seed, "he-key", 0))?;
                let endpoint = match hc.keyholder {
                    KeyholderRole::Agent => Endpoint::agent(0),
                    KeyholderRole::TrustedDevice => Endpoint::TrustedDevice,
                };
                Channel::He(Box::new(HeState {
                    eval: HeEvaluator::new(keys.public.clone(), mode, hc.frac_bits),
                    keyholder: Keyholder::new(endpoint, keys.clone(), hc.frac_bits, seed),
                    agent_rngs: (0..n).map(|i| encryption_rng(seed, i as u64)).collect(),
                    agent_keys: keys,
                    agent_ops: HeOps::default(),
                }))
            }
        };
        Ok(PpMarl {
            memory: GlobalMemory::new(cfg.memory_capacity)?,
            batch_rng: rng::stream(seed, "batch", 0),
            agents,
            critics,
            groups,
            group_of,
            cfg,
            bus,
            channel,
            coordinator_macs: 0,
        })
    }

    pub fn critics(&self) -> &[GlobalCritic] {
        &self.critics
    }

    pub fn memory(&self) -> &GlobalMemory {
        &self.memory
    }

    pub fn config(&self) -> &TrainingConfig {
        &self.cfg
    }

    /// Agent `i` sends q rows; the channel decides what crosses the wire.
    fn upload(&mut self, i: usize, kind: MessageKind, rows: Vec<QValue>) -> Result<Received> {
        let qd = self.cfg.q_dim;
        let from = Endpoint::agent(i);
        match &mut self.channel {
            Channel::Plain => {
                let p = self.bus.send(kind, from, Endpoint::Coordinator, Payload::Reals(flatten(&rows)))?;
                Ok(Received::Plain(rows_of(p.into_reals()?, qd)?))
            }
            Channel::Dp { cfg, rngs } => {
                let noisy: Vec<QValue> = rows.iter().map(|q| dp_protect(q, cfg, &mut rngs[i])).collect();
                let p = self.bus.send(kind, from, Endpoint::Coordinator, Payload::Reals(flatten(&noisy)))?;
                Ok(Received::Plain(rows_of(p.into_reals()?, qd)?))
            }
            Channel::He(he) => {
                let f = he.eval.frac_bits;
                let mut items: Vec<BigUint> = Vec::with_capacity(rows.len() * qd);
                for q in &rows {
                    for &v in q {
                        items.push(he.agent_keys.encrypt(v, f, &mut he.agent_rngs[i], &mut he.agent_ops)?.c);
                    }
                }
                let width = he.eval.pk.cipher_bytes() as u16;
                let p = self
                    .bus
                    .send(MessageKind::CipherBlob, from, Endpoint::Coordinator, Payload::Cipher { width, items })?;
                Ok(Received::Enc(he.eval.receive_inputs(p.into_cipher()?, qd)?))
            }
        }
    }

    fn concat_plain(uploads: &[Received], b: usize, replace: Option<(usize, &QValue)>) -> Vec<f64> {
        let mut x = Vec::new();
        for (j, u) in uploads.iter().enumerate() {
            match replace {
                Some((i, q)) if i == j => x.extend_from_slice(q),
                _ => x.extend_from_slice(&u.plain()[b]),
            }
        }
        x
    }

    fn concat_enc(uploads: &[Received], b: usize, replace: Option<(usize, &[Ciphertext])>) -> Vec<Ciphertext> {
        let mut x = Vec::new();
        for (j, u) in uploads.iter().enumerate() {
            match replace {
                Some((i, q)) if i == j => x.extend_from_slice(q),
                _ => x.extend_from_slice(&u.enc()[b]),
            }
        }
        x
    }

    fn critic_round(&mut self, ids: &[MemoryId]) -> Result<UpdateStats> {
        let n = self.agents.len();
        let qd = self.cfg.q_dim;
        let bsz = ids.len();
        let gamma = self.cfg.gamma;
        let dones: Vec<bool> = ids.iter().map(|id| self.memory.is_terminal(*id)).collect();

        self.bus.next_round();
        let mut q_up = Vec::with_capacity(n);
        let mut t_up = Vec::with_capacity(n);
        for i in 0..n {
            let p = self
                .bus
                .send(MessageKind::Ids, Endpoint::Coordinator, Endpoint::agent(i), Payload::Ids(ids.to_vec()))?;
            let recv_ids = p.ids()?.to_vec();
            let mut q_rows = Vec::with_capacity(bsz);
            let mut t_rows = Vec::with_capacity(bsz);
            for id in &recv_ids {
                let miss = || Error::Training(format!("agent {i} missing id {id:?}"));
                q_rows.push(self.agents[i].local_q(*id, false, None)?.ok_or_else(miss)?);
                t_rows.push(self.agents[i].local_q(*id, true, None)?.ok_or_else(miss)?);
            }
            q_up.push(self.upload(i, MessageKind::Q, q_rows)?);
            t_up.push(self.upload(i, MessageKind::TargetQ, t_rows)?);
        }

        // Q, target Q and r̂ per group
        let mut r_hat_for_agent: Vec<Vec<f64>> = vec![Vec::new(); n];
        let mut plain_tapes = Vec::new();
        let mut enc_fwds = Vec::new();
        let mut q_sum = 0.0;
        self.bus.next_round();
        for g in 0..self.groups.len() {
            let critic = &self.critics[g];
            match &mut self.channel {
                Channel::Plain | Channel::Dp { .. } => {
                    let mut tapes = Vec::with_capacity(bsz);
                    let mut r_hat = Vec::with_capacity(bsz);
                    for b in 0..bsz {
                        let (q, tape) = critic.net.forward(&Self::concat_plain(&q_up, b, None))?;
                        let qn = critic.target.predict(&Self::concat_plain(&t_up, b, None))?[0];
                        q_sum += q[0];
                        r_hat.push(estimate_rewards(q[0], qn, gamma, dones[b]));
                        tapes.push(tape);
                    }
                    self.coordinator_macs += 2 * bsz as u64 * forward_macs(&critic.net);
                    plain_tapes.push(tapes);
                    for &i in &self.groups[g] {
                        let p = self.bus.send(
                            MessageKind::RHat,
                            Endpoint::Coordinator,
                            Endpoint::agent(i),
                            Payload::Reals(r_hat.clone()),
                        )?;
                        r_hat_for_agent[i] = p.into_reals()?;
                    }
                }
                Channel::He(he) => {
                    let rows: Vec<Vec<Ciphertext>> = (0..bsz).map(|b| Self::concat_enc(&q_up, b, None)).collect();
                    let trows: Vec<Vec<Ciphertext>> = (0..bsz).map(|b| Self::concat_enc(&t_up, b, None)).collect();
                    let fwd = he.eval.forward(&critic.net, rows, &mut he.keyholder, &mut self.bus)?;
                    let fwd_t = he.eval.forward(&critic.target, trows, &mut he.keyholder, &mut self.bus)?;
                    let f = he.eval.frac_bits;
                    let pk = &he.eval.pk;
                    let mut enc_r = Vec::with_capacity(bsz);
                    for b in 0..bsz {
                        let now = pk.rescale_up(&fwd.outputs[b][0], f, &mut he.eval.ops)?;
                        let k = if dones[b] { 0.0 } else { -gamma };
                        let next = pk.scale(k, f, &fwd_t.outputs[b][0], &mut he.eval.ops)?;
                        enc_r.push(pk.add(&now, &next, &mut he.eval.ops)?);
                    }
                    let r_scale = enc_r.first().map(|c| c.scale).unwrap_or(0);
                    he.eval.release(fwd_t, &mut he.keyholder);
                    for &i in &self.groups[g] {
                        let p = self.bus.send(
                            MessageKind::RHat,
                            Endpoint::Coordinator,
                            Endpoint::agent(i),
                            Payload::Cipher {
                                width: pk.cipher_bytes() as u16,
                                items: enc_r.iter().map(|c| c.c.clone()).collect(),
                            },
                        )?;
                        r_hat_for_agent[i] = p
                            .into_cipher()?
                            .into_iter()
                            .map(|c| {
                                let ct = Ciphertext::from_wire(c, r_scale, 0.0);
                                he.agent_keys.decrypt(&ct, &mut he.agent_ops)
                            })
                            .collect();
                    }
                    enc_fwds.push(fwd);
                }
            }
        }

        // local losses
        let mut losses = vec![0.0; n];
        let mut upstream: Vec<Vec<f64>> = vec![Vec::new(); n];
        for i in 0..n {
            let (loss, up) = self.agents[i].local_critic_loss(ids, &r_hat_for_agent[i])?;
            let mut payload = Vec::with_capacity(bsz + 1);
            payload.push(loss);
            payload.extend(up);
            let p = self
                .bus
                .send(MessageKind::Loss, Endpoint::agent(i), Endpoint::Coordinator, Payload::Reals(payload))?;
            let v = p.into_reals()?;
            if v.len() != bsz + 1 {
                return Err(Error::Data("loss message has wrong length".into()));
            }
            losses[i] = v[0];
            upstream[i] = v[1..].to_vec();
        }
        let mean_loss = losses.iter().sum::<f64>() / n as f64;
        if !mean_loss.is_finite() {
            return Err(Error::Training(format!("non-finite critic loss {mean_loss}")));
        }

        // backward through each global critic
        let mut grad_q: Vec<Vec<QValue>> = vec![vec![vec![0.0; qd]; bsz]; n];
        let mut enc_iter = enc_fwds.into_iter();
        let mut tape_iter = plain_tapes.into_iter();
        for g in 0..self.groups.len() {
            let members = &self.groups[g];
            let up: Vec<f64> = (0..bsz)
                .map(|b| members.iter().map(|&i| upstream[i][b]).sum::<f64>() / members.len() as f64)
                .collect();
            let dx_rows: Vec<Vec<f64>>;
            let grads: Grads;
            match &mut self.channel {
                Channel::Plain | Channel::Dp { .. } => {
                    let tapes = tape_iter.next().expect("one tape set per group");
                    let net = &self.critics[g].net;
                    let mut acc = Grads::zeros_like(net);
                    let mut rows = Vec::with_capacity(bsz);
                    for (b, tape) in tapes.iter().enumerate() {
                        rows.push(net.backward_into(tape, &[up[b]], &mut acc)?);
                    }
                    self.coordinator_macs += 2 * bsz as u64 * forward_macs(net);
                    dx_rows = rows;
                    grads = acc;
                }
                Channel::He(he) => {
                    let fwd = enc_iter.next().expect("one forward per group");
                    let out_grads: Vec<Vec<f64>> = up.iter().map(|u| vec![*u]).collect();
                    let (rows, g_opt) = he.eval.backward(
                        &self.critics[g].net,
                        &fwd,
                        &out_grads,
                        true,
                        &mut he.keyholder,
                        &mut self.bus,
                    )?;
                    he.eval.release(fwd, &mut he.keyholder);
                    dx_rows = rows;
                    grads = g_opt.expect("parameter gradients requested");
                }
            }
            for (b, dx) in dx_rows.iter().enumerate() {
                for j in 0..n {
                    for k in 0..qd {
                        grad_q[j][b][k] += dx[j * qd + k];
                    }
                }
            }
            self.critics[g].step(&grads)?;
        }

        self.bus.next_round();
        for (i, rows) in grad_q.into_iter().enumerate() {
            let p = self.bus.send(
                MessageKind::GradQ,
                Endpoint::Coordinator,
                Endpoint::agent(i),
                Payload::Reals(flatten(&rows)),
            )?;
            let rows = rows_of(p.into_reals()?, qd)?;
            self.agents[i].apply_critic_grad(ids, &rows)?;
        }
        Ok(UpdateStats {
            critic_loss: mean_loss,
            mean_q: match self.channel {
                Channel::He(_) => None,
                _ => Some(q_sum / (bsz * self.groups.len()) as f64),
            },
        })
    }

    fn actor_rounds(&mut self, ids: &[MemoryId]) -> Result<()> {
        let n = self.agents.len();
        let qd = self.cfg.q_dim;
        let bsz = ids.len();
        self.bus.next_round();
        let mut stored = Vec::with_capacity(n);
        for i in 0..n {
            let rows = ids
                .iter()
                .map(|id| {
                    self.agents[i]
                        .stored_q(*id)?
                        .ok_or_else(|| Error::Training(format!("agent {i} missing id {id:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            stored.push(self.upload(i, MessageKind::Q, rows)?);
        }
        for i in 0..n {
            self.bus.next_round();
            let rows = ids
                .iter()
                .map(|id| {
                    self.agents[i]
                        .policy_q(*id)?
                        .ok_or_else(|| Error::Training(format!("agent {i} missing id {id:?}")))
                })
                .collect::<Result<Vec<_>>>()?;
            let policy = self.upload(i, MessageKind::Q, rows)?;
            let g = self.group_of[i];
            let scale = 1.0 / bsz as f64;
            let mut dq: Vec<QValue> = Vec::with_capacity(bsz);
            match &mut self.channel {
                Channel::Plain | Channel::Dp { .. } => {
                    let net = &self.critics[g].net;
                    for b in 0..bsz {
                        let x = Self::concat_plain(&stored, b, Some((i, &policy.plain()[b])));
                        let (_, tape) = net.forward(&x)?;
                        let dx = net.input_gradient(&tape, &[scale])?;
                        dq.push(dx[i * qd..(i + 1) * qd].to_vec());
                    }
                    self.coordinator_macs += 2 * bsz as u64 * forward_macs(net);
                }
                Channel::He(he) => {
                    let rows: Vec<Vec<Ciphertext>> = (0..bsz)
                        .map(|b| Self::concat_enc(&stored, b, Some((i, &policy.enc()[b]))))
                        .collect();
                    let net = &self.critics[g].net;
                    let fwd = he.eval.forward(net, rows, &mut he.keyholder, &mut self.bus)?;
                    let out_grads = vec![vec![scale]; bsz];
                    let (dx, _) = he.eval.backward(net, &fwd, &out_grads, false, &mut he.keyholder, &mut self.bus)?;
                    he.eval.release(fwd, &mut he.keyholder);
                    dq = dx.into_iter().map(|d| d[i * qd..(i + 1) * qd].to_vec()).collect();
                }
            }
            let p = self.bus.send(
                MessageKind::GradInterface,
                Endpoint::Coordinator,
                Endpoint::agent(i),
                Payload::Reals(flatten(&dq)),
            )?;
            let rows = rows_of(p.into_reals()?, qd)?;
            self.agents[i].apply_actor_grad(ids, &rows)?;
        }
        Ok(())
    }
}

impl Trainer for PpMarl {
    fn kind(&self) -> TrainerKind {
        TrainerKind::PpMarl
    }

    fn n_agents(&self) -> usize {
        self.agents.len()
    }

    fn act(&mut self, observations: &[Vec<f64>], noise: f64) -> Result<Vec<Vec<f64>>> {
        if observations.len() != self.agents.len() {
            return Err(Error::Usage("one observation per agent required".into()));
        }
        self.agents
            .iter_mut()
            .zip(observations)
            .map(|(a, o)| a.act(o, noise))
            .collect()
    }

    fn observe(&mut self, id: MemoryId, experiences: Vec<Experience>, terminal: bool) -> Result<()> {
        if experiences.len() != self.agents.len() {
            return Err(Error::Usage("one experience per agent required".into()));
        }
        self.bus.next_round();
        for (i, e) in experiences.into_iter().enumerate() {
            self.agents[i].store(id, e)?;
            let p = self
                .bus
                .send(MessageKind::Ids, Endpoint::agent(i), Endpoint::Coordinator, Payload::Ids(vec![id]))?;
            if p.ids()? != [id] {
                return Err(Error::Data("ack id corrupted".into()));
            }
        }
        self.memory.insert(id, terminal)?;
        Ok(())
    }

    fn update(&mut self) -> Result<Option<UpdateStats>> {
        let Some(ids) = sample_batch(&self.memory, self.cfg.batch_size, &mut self.batch_rng) else {
            return Ok(None);
        };
        let missing: Vec<MemoryId> = ids
            .iter()
            .copied()
            .filter(|id| self.agents.iter().any(|a| a.fetch(*id).is_none()))
            .collect();
        if !missing.is_empty() {
            for id in missing {
                self.memory.remove(id);
            }
            return Ok(None);
        }
        let stats = self.critic_round(&ids)?;
        self.actor_rounds(&ids)?;
        for a in &mut self.agents {
            a.soft_update_targets(self.cfg.tau)?;
        }
        for c in &mut self.critics {
            c.soft_update(self.cfg.tau)?;
        }
        self.bus.next_round();
        Ok(Some(stats))
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

    fn networks(&self) -> Vec<(String, Mlp)> {
        let mut out = agent_networks(&self.agents);
        for (g, c) in self.critics.iter().enumerate() {
            out.push((format!("global{g}_critic"), c.net.clone()));
            out.push((format!("global{g}_critic_target"), c.target.clone()));
        }
        out
    }

    fn ops(&self) -> OpCounts {
        let mut he = HeOps::default();
        if let Channel::He(h) = &self.channel {
            he.add(&h.eval.ops);
            he.add(&h.keyholder.ops);
            he.add(&h.agent_ops);
        }
        OpCounts {
            agent_macs: self.agents.iter().map(|a| a.macs()).sum(),
            coordinator_macs: self.coordinator_macs,
            he,
        }
    }
}
