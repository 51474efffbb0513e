//! Finite-difference checks of the gradients the distributed trainer applies.
//!
//! Every optimizer is plain SGD, so one update moves each parameter by
//! exactly `−lr · grad`; the applied gradient is read back from the change and
//! compared with central differences of the objective computed directly from
//! the networks.

use ppmarl::agent::{Agent, AgentNets, Experience};
use ppmarl::bus::Bus;
use ppmarl::coordinator::{GlobalCritic, PpMarl, Trainer, TrainingConfig};
use ppmarl::nn::{Activation, Mlp, OptimConfig};
use ppmarl::privacy::PrivacyConfig;
use ppmarl::rng;
use rand::Rng;

const N: usize = 3;
const B: usize = 8;
const LR: f64 = 1e-3;
const GAMMA: f64 = 0.9;
const H: f64 = 1e-5;
const PROBES: usize = 100;

struct Setup {
    trainer: PpMarl,
    data: Vec<Vec<Experience>>,
}

fn mlp(sizes: &[usize], out: Activation, r: &mut rng::Stream) -> Mlp {
    Mlp::new(sizes, Activation::Tanh, out, r).unwrap()
}

fn setup(seed: u64) -> Setup {
    let steps = super::drone_dataset(seed, B);
    let obs_dim = steps[0].1[0].observation.len();
    let mut r = rng::stream(seed, "fd-init", 0);
    let agents = (0..N)
        .map(|i| {
            let mut nets = AgentNets::from_live(
                mlp(&[obs_dim, 12, 2], Activation::Tanh, &mut r),
                mlp(&[obs_dim + 2, 12, 1], Activation::Linear, &mut r),
            )
            .unwrap();
            // distinct targets so the bootstrap term is exercised
            nets.actor_target = mlp(&[obs_dim, 12, 2], Activation::Tanh, &mut r);
            nets.critic_target = mlp(&[obs_dim + 2, 12, 1], Activation::Linear, &mut r);
            Agent::with_optimizers(i, nets, OptimConfig::Sgd { lr: LR }, OptimConfig::Sgd { lr: LR }, 100, seed).unwrap()
        })
        .collect();
    let mut critic = GlobalCritic::new(mlp(&[N, 6, 1], Activation::Linear, &mut r), OptimConfig::Sgd { lr: LR }).unwrap();
    critic.target = mlp(&[N, 6, 1], Activation::Linear, &mut r);
    let cfg = TrainingConfig {
        gamma: GAMMA,
        batch_size: B,
        tau: 0.01,
        q_dim: 1,
        ..TrainingConfig::default()
    };
    let mut trainer = PpMarl::from_parts(agents, vec![critic], cfg, &PrivacyConfig::None, seed, Bus::counting()).unwrap();
    super::feed(&mut trainer, &steps);
    Setup {
        trainer,
        data: steps.into_iter().map(|(_, e, _)| e).collect(),
    }
}

fn cat(a: &[f64], b: &[f64]) -> Vec<f64> {
    a.iter().chain(b).copied().collect()
}

/// Network snapshot the objectives are evaluated on.
#[derive(Clone)]
struct Nets {
    actors: Vec<Mlp>,
    critics: Vec<Mlp>,
    actor_targets: Vec<Mlp>,
    critic_targets: Vec<Mlp>,
    global: Mlp,
    global_target: Mlp,
}

fn snapshot(t: &PpMarl) -> Nets {
    let a = t.agents();
    Nets {
        actors: a.iter().map(|x| x.nets().actor.clone()).collect(),
        critics: a.iter().map(|x| x.nets().critic.clone()).collect(),
        actor_targets: a.iter().map(|x| x.nets().actor_target.clone()).collect(),
        critic_targets: a.iter().map(|x| x.nets().critic_target.clone()).collect(),
        global: t.critics()[0].net.clone(),
        global_target: t.critics()[0].target.clone(),
    }
}

/// Mean squared error between `r̂ = Q − γQ′(1 − done)` and the team reward.
fn critic_loss(n: &Nets, data: &[Vec<Experience>]) -> f64 {
    let mut total = 0.0;
    for exps in data {
        let q: Vec<f64> = (0..N)
            .map(|i| n.critics[i].predict(&cat(&exps[i].observation, &exps[i].action)).unwrap()[0])
            .collect();
        let qt: Vec<f64> = (0..N)
            .map(|i| {
                let a = n.actor_targets[i].predict(&exps[i].next_observation).unwrap();
                n.critic_targets[i].predict(&cat(&exps[i].next_observation, &a)).unwrap()[0]
            })
            .collect();
        let done = exps[0].done;
        let r_hat = n.global.predict(&q).unwrap()[0]
            - if done { 0.0 } else { GAMMA * n.global_target.predict(&qt).unwrap()[0] };
        total += (r_hat - exps[0].reward).powi(2);
    }
    total / data.len() as f64
}

/// Mean global Q with agent `i` acting on its current policy and everyone
/// else on their stored actions.
fn actor_objective(n: &Nets, i: usize, data: &[Vec<Experience>]) -> f64 {
    let mut total = 0.0;
    for exps in data {
        let q: Vec<f64> = (0..N)
            .map(|j| {
                let e = &exps[j];
                let a = if j == i { n.actors[j].predict(&e.observation).unwrap() } else { e.action.clone() };
                n.critics[j].predict(&cat(&e.observation, &a)).unwrap()[0]
            })
            .collect();
        total += n.global.predict(&q).unwrap()[0];
    }
    total / data.len() as f64
}

fn central_diff(nets: &Nets, pick: impl Fn(&mut Nets) -> &mut Mlp, k: usize, f: impl Fn(&Nets) -> f64) -> f64 {
    let mut plus = nets.clone();
    let mut minus = nets.clone();
    for (n, h) in [(&mut plus, H), (&mut minus, -H)] {
        let m = pick(n);
        let mut p = m.flat_params();
        p[k] += h;
        m.set_flat_params(&p).unwrap();
    }
    (f(&plus) - f(&minus)) / (2.0 * H)
}

fn rel_err(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(1e-6)
}

fn applied(before: &Mlp, after: &Mlp) -> Vec<f64> {
    before
        .flat_params()
        .iter()
        .zip(after.flat_params())
        .map(|(b, a)| (b - a) / LR)
        .collect()
}

#[derive(Clone, Copy, Debug)]
pub enum Which {
    Actor,
    LocalCritic,
    Global,
}

pub fn check(seed: u64) -> Vec<(Which, f64)> {
    let Setup { mut trainer, data } = setup(seed);
    let before = snapshot(&trainer);
    trainer.update().unwrap().expect("memory holds one full batch");
    let after = snapshot(&trainer);
    // the actor round runs against the critics as updated in the critic round
    let post_critic = Nets {
        actors: before.actors.clone(),
        ..after.clone()
    };
    let mut r = rng::stream(seed, "fd-probe", 0);
    let mut worst = Vec::new();
    for which in [Which::Actor, Which::LocalCritic, Which::Global] {
        let mut w: f64 = 0.0;
        for _ in 0..PROBES {
            let (grad, fd) = match which {
                Which::Actor => {
                    let i = r.random_range(0..N);
                    // descent on −J, so the stored step is −grad J
                    let g = applied(&before.actors[i], &after.actors[i]);
                    let k = r.random_range(0..g.len());
                    let fd = central_diff(&post_critic, |n| &mut n.actors[i], k, |n| actor_objective(n, i, &data));
                    (-g[k], fd)
                }
                Which::LocalCritic => {
                    let i = r.random_range(0..N);
                    let g = applied(&before.critics[i], &after.critics[i]);
                    let k = r.random_range(0..g.len());
                    (g[k], central_diff(&before, |n| &mut n.critics[i], k, |n| critic_loss(n, &data)))
                }
                Which::Global => {
                    let g = applied(&before.global, &after.global);
                    let k = r.random_range(0..g.len());
                    (g[k], central_diff(&before, |n| &mut n.global, k, |n| critic_loss(n, &data)))
                }
            };
            w = w.max(rel_err(grad, fd));
        }
        worst.push((which, w));
    }
    worst
}

