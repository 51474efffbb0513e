//! Shared fixtures: seeded drone datasets and an end-to-end trainer for the
//! composed tree network used as a reference.

#![allow(dead_code)]

pub mod fd;

use ppmarl::agent::{AgentNets, Experience, MemoryId};
use ppmarl::coordinator::{sample_batch, GlobalMemory, PpMarl, Trainer, TrainerKind, TrainerSpec, TrainingConfig};
use ppmarl::env::{DroneConfig, DroneEnv, MultiAgentEnv};
use ppmarl::nn::{Grads, Mlp, OptimConfig, OptimState};
use ppmarl::rng;
use rand::Rng;

pub type Step = (MemoryId, Vec<Experience>, bool);

/// Random-action rollouts on the default drone world.
pub fn drone_dataset(seed: u64, steps: usize) -> Vec<Step> {
    let cfg = DroneConfig::default();
    let mut env = DroneEnv::new(cfg).unwrap();
    let mut r = rng::stream(seed, "dataset", 0);
    let mut out = Vec::with_capacity(steps);
    let mut episode = 0u32;
    let mut obs = env.reset(rng::derive(seed, "episode", episode as u64));
    let mut step = 0u32;
    while out.len() < steps {
        let actions: Vec<Vec<f64>> =
            (0..env.n_agents()).map(|_| (0..2).map(|_| r.random_range(-1.0..1.0)).collect()).collect();
        let s = env.step(&actions).unwrap();
        let exps = (0..env.n_agents())
            .map(|i| Experience {
                observation: obs[i].clone(),
                action: actions[i].clone(),
                reward: s.reward,
                next_observation: s.observations[i].clone(),
                done: s.done,
            })
            .collect();
        out.push((MemoryId::new(episode, step), exps, s.done));
        step += 1;
        obs = s.observations;
        if s.done {
            episode += 1;
            step = 0;
            obs = env.reset(rng::derive(seed, "episode", episode as u64));
        }
    }
    out
}

pub fn spec(seed: u64, n_agents: usize, batch: usize, training: TrainingConfig) -> TrainerSpec {
    let obs_dim = DroneConfig {
        n_drones: n_agents,
        ..DroneConfig::default()
    }
    .obs_dim();
    TrainerSpec {
        n_agents,
        obs_dim,
        action_dim: 2,
        training: TrainingConfig { batch_size: batch, ..training },
        privacy: Default::default(),
        seed,
    }
}

pub fn feed(trainer: &mut dyn Trainer, data: &[Step]) {
    for (id, exps, term) in data {
        trainer.observe(*id, exps.clone(), *term).unwrap();
    }
}

pub fn max_abs_diff(a: &[f64], b: &[f64]) -> f64 {
    assert_eq!(a.len(), b.len());
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

struct Net {
    live: Mlp,
    target: Mlp,
    opt: OptimState,
}

impl Net {
    fn new(live: Mlp, target: Mlp, lr: f64) -> Self {
        Net {
            live,
            target,
            opt: OptimState::new(OptimConfig::adam(lr)).unwrap(),
        }
    }
}

/// One network: every local critic stacked under the global critic, trained
/// end to end on pooled experiences with loss `mean (Q − γQ′ − r)²`, plus
/// each actor trained by ascending the composed Q.
pub struct Monolithic {
    actors: Vec<Net>,
    locals: Vec<Net>,
    global: Net,
    memory: GlobalMemory,
    data: std::collections::HashMap<MemoryId, Vec<Experience>>,
    batch_rng: rng::Stream,
    cfg: TrainingConfig,
}

impl Monolithic {
    /// Copies the initial parameters of a freshly built trainer.
    pub fn mirror(t: &PpMarl, seed: u64) -> Self {
        let cfg = TrainingConfig {
            trainer: TrainerKind::PpMarl,
            ..t_cfg(t)
        };
        let nets: Vec<AgentNets> = t.agents().iter().map(|a| a.nets().clone()).collect();
        let g = &t.critics()[0];
        Monolithic {
            actors: nets.iter().map(|n| Net::new(n.actor.clone(), n.actor_target.clone(), cfg.actor_lr)).collect(),
            locals: nets.iter().map(|n| Net::new(n.critic.clone(), n.critic_target.clone(), cfg.critic_lr)).collect(),
            global: Net::new(g.net.clone(), g.target.clone(), cfg.global_critic_lr),
            memory: GlobalMemory::new(cfg.memory_capacity).unwrap(),
            data: Default::default(),
            batch_rng: rng::stream(seed, "batch", 0),
            cfg,
        }
    }

    pub fn observe(&mut self, data: &[Step]) {
        for (id, exps, term) in data {
            self.memory.insert(*id, *term).unwrap();
            self.data.insert(*id, exps.clone());
        }
    }

    fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
        a.iter().chain(b).copied().collect()
    }

    pub fn update(&mut self) {
        let ids = sample_batch(&self.memory, self.cfg.batch_size, &mut self.batch_rng).unwrap();
        let n = self.locals.len();
        let bsz = ids.len() as f64;
        let gamma = self.cfg.gamma;

        // critic: gradient of the whole tree in one backward pass per sample
        let mut g_local: Vec<Grads> = self.locals.iter().map(|l| Grads::zeros_like(&l.live)).collect();
        let mut g_global = Grads::zeros_like(&self.global.live);
        for id in &ids {
            let exps = &self.data[id];
            let mut q = Vec::new();
            let mut tapes = Vec::new();
            let mut qn = Vec::new();
            for i in 0..n {
                let e = &exps[i];
                let (qi, tape) = self.locals[i].live.forward(&Self::cat(&e.observation, &e.action)).unwrap();
                q.extend(qi);
                tapes.push(tape);
                let a_next = self.actors[i].target.predict(&e.next_observation).unwrap();
                qn.extend(self.locals[i].target.predict(&Self::cat(&e.next_observation, &a_next)).unwrap());
            }
            let (big_q, gtape) = self.global.live.forward(&q).unwrap();
            let big_qn = self.global.target.predict(&qn).unwrap()[0];
            let done = self.memory.is_terminal(*id);
            let y = exps[0].reward + if done { 0.0 } else { gamma * big_qn };
            let dl = 2.0 * (big_q[0] - y) / bsz;
            let dq = self.global.live.backward_into(&gtape, &[dl], &mut g_global).unwrap();
            let qd = dq.len() / n;
            for i in 0..n {
                self.locals[i].live.backward_into(&tapes[i], &dq[i * qd..(i + 1) * qd], &mut g_local[i]).unwrap();
            }
        }
        self.global.opt.step(&mut self.global.live, &g_global).unwrap();
        for (l, g) in self.locals.iter_mut().zip(&g_local) {
            l.opt.step(&mut l.live, g).unwrap();
        }

        // actors: ascend Q with only agent i's action replaced by its policy
        for i in 0..n {
            let mut g_actor = Grads::zeros_like(&self.actors[i].live);
            for id in &ids {
                let exps = &self.data[id];
                let (a_i, atape) = self.actors[i].live.forward(&exps[i].observation).unwrap();
                let mut q = Vec::new();
                let mut itape = None;
                for j in 0..n {
                    let e = &exps[j];
                    if j == i {
                        let (qj, t) = self.locals[j].live.forward(&Self::cat(&e.observation, &a_i)).unwrap();
                        q.extend(qj);
                        itape = Some(t);
                    } else {
                        q.extend(self.locals[j].live.predict(&Self::cat(&e.observation, &e.action)).unwrap());
                    }
                }
                let qd = q.len() / n;
                let (_, gtape) = self.global.live.forward(&q).unwrap();
                let dq = self.global.live.input_gradient(&gtape, &[-1.0 / bsz]).unwrap();
                let dx = self.locals[i]
                    .live
                    .input_gradient(itape.as_ref().unwrap(), &dq[i * qd..(i + 1) * qd])
                    .unwrap();
                let obs_dim = exps[i].observation.len();
                self.actors[i].live.backward_into(&atape, &dx[obs_dim..], &mut g_actor).unwrap();
            }
            let a = &mut self.actors[i];
            a.opt.step(&mut a.live, &g_actor).unwrap();
        }

        let tau = self.cfg.tau;
        for net in self.actors.iter_mut().chain(self.locals.iter_mut()).chain(std::iter::once(&mut self.global)) {
            net.target.soft_update_from(&net.live, tau).unwrap();
        }
    }

    /// Largest elementwise gap over every live and target tensor.
    pub fn max_gap(&self, t: &PpMarl) -> f64 {
        let mut gap: f64 = 0.0;
        for (i, a) in t.agents().iter().enumerate() {
            let n = a.nets();
            gap = gap.max(max_abs_diff(&n.actor.flat_params(), &self.actors[i].live.flat_params()));
            gap = gap.max(max_abs_diff(&n.actor_target.flat_params(), &self.actors[i].target.flat_params()));
            gap = gap.max(max_abs_diff(&n.critic.flat_params(), &self.locals[i].live.flat_params()));
            gap = gap.max(max_abs_diff(&n.critic_target.flat_params(), &self.locals[i].target.flat_params()));
        }
        let g = &t.critics()[0];
        gap = gap.max(max_abs_diff(&g.net.flat_params(), &self.global.live.flat_params()));
        gap.max(max_abs_diff(&g.target.flat_params(), &self.global.target.flat_params()))
    }
}

fn t_cfg(t: &PpMarl) -> TrainingConfig {
    t.config().clone()
}

/// Runs the monolithic-equivalence check for one seed; returns the largest
/// parameter gap seen after any update.
pub fn monolithic_gap(seed: u64, updates: usize, batch: usize) -> f64 {
    let spec = spec(seed, 3, batch, TrainingConfig::default());
    let data = drone_dataset(seed, 200);
    let mut t = PpMarl::new(&spec, ppmarl::bus::Bus::counting()).unwrap();
    let mut m = Monolithic::mirror(&t, seed);
    feed(&mut t, &data);
    m.observe(&data);
    let mut worst: f64 = 0.0;
    for _ in 0..updates {
        assert!(t.update().unwrap().is_some());
        m.update();
        worst = worst.max(m.max_gap(&t));
    }
    worst
}
