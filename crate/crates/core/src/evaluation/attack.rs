//! Inference attack on what a scheme puts on the wire.
//!
//! The attacker is the coordinator (or an eavesdropper on its links). For
//! every (agent, memory id) it keeps the first public vector that could be
//! tied to that timestep and learns a regression from it to the agent's
//! private `(observation, action, reward)`.

use std::collections::{BTreeMap, HashMap};

use rand::seq::SliceRandom;
use serde::{Deserialize, Serialize};

use crate::agent::{Experience, MemoryId};
use crate::bus::{Endpoint, Message, MessageKind, Payload};
use crate::error::{Error, Result};
use crate::nn::{Activation, Grads, Mlp, OptimConfig, OptimState};
use crate::rng;

/// Low-order bytes of each ciphertext used as attack features.
pub const CIPHER_FEATURE_BYTES: usize = 8;

pub type ExposureKey = (usize, MemoryId);

/// Public view the attacker can derive for one agent's timestep.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Exposure {
    pub agent: usize,
    pub id: MemoryId,
    pub public: Vec<f64>,
}

/// Evaluation-only private record.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivateRecord {
    pub agent: usize,
    pub id: MemoryId,
    pub experience: Experience,
}

impl PrivateRecord {
    pub fn label(&self) -> Vec<f64> {
        let e = &self.experience;
        let mut v = e.observation.clone();
        v.extend(&e.action);
        v.push(e.reward);
        v
    }
}

fn cipher_features(items: &[num_bigint::BigUint]) -> Vec<Vec<f64>> {
    items
        .iter()
        .map(|c| {
            let bytes = c.to_bytes_le();
            (0..CIPHER_FEATURE_BYTES)
                .map(|k| bytes.get(k).copied().unwrap_or(0) as f64 / 255.0)
                .collect()
        })
        .collect()
}

#[derive(Default)]
struct Pending {
    ids: Vec<MemoryId>,
    rows: Vec<Vec<f64>>,
    uploads: usize,
}

/// Streams bus messages and keeps the first exposure of every timestep.
#[derive(Default)]
pub struct Harvester {
    pending: HashMap<usize, Pending>,
    exposures: BTreeMap<ExposureKey, Vec<f64>>,
}

impl Harvester {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn ingest<'a>(&mut self, messages: impl IntoIterator<Item = &'a Message>) {
        for m in messages {
            self.ingest_one(m);
        }
    }

    fn ingest_one(&mut self, m: &Message) {
        match (m.sender, m.receiver, &m.payload) {
            // batch announcement opens a critic round for that agent
            (Endpoint::Coordinator, Endpoint::Agent(i), Payload::Ids(ids)) if m.kind == MessageKind::Ids => {
                self.pending.insert(
                    i as usize,
                    Pending {
                        ids: ids.clone(),
                        rows: vec![Vec::new(); ids.len()],
                        uploads: 0,
                    },
                );
            }
            (Endpoint::Agent(i), Endpoint::Coordinator, payload) => {
                let i = i as usize;
                if let Payload::Experiences(v) = payload {
                    for (id, e) in v {
                        let mut p = e.observation.clone();
                        p.extend(&e.action);
                        p.push(e.reward);
                        p.extend(&e.next_observation);
                        p.push(if e.done { 1.0 } else { 0.0 });
                        self.exposures.entry((i, *id)).or_insert(p);
                    }
                    return;
                }
                if !matches!(m.kind, MessageKind::Q | MessageKind::TargetQ | MessageKind::CipherBlob) {
                    return;
                }
                let Some(pend) = self.pending.get_mut(&i) else {
                    return;
                };
                let rows: Vec<Vec<f64>> = match payload {
                    Payload::Reals(v) if !pend.ids.is_empty() && v.len() % pend.ids.len() == 0 => {
                        v.chunks(v.len() / pend.ids.len()).map(|c| c.to_vec()).collect()
                    }
                    Payload::Cipher { items, .. } if !pend.ids.is_empty() && items.len() % pend.ids.len() == 0 => {
                        let per = items.len() / pend.ids.len();
                        cipher_features(items).chunks(per).map(|c| c.concat()).collect()
                    }
                    _ => return,
                };
                for (acc, r) in pend.rows.iter_mut().zip(rows) {
                    acc.extend(r);
                }
                pend.uploads += 1;
                // live q then target q
                if pend.uploads == 2 {
                    let pend = self.pending.remove(&i).expect("present");
                    for (id, row) in pend.ids.into_iter().zip(pend.rows) {
                        self.exposures.entry((i, id)).or_insert(row);
                    }
                }
            }
            _ => {}
        }
    }

    pub fn len(&self) -> usize {
        self.exposures.len()
    }

    pub fn is_empty(&self) -> bool {
        self.exposures.is_empty()
    }

    pub fn exposures(&self) -> Vec<Exposure> {
        self.exposures
            .iter()
            .map(|(&(agent, id), public)| Exposure {
                agent,
                id,
                public: public.clone(),
            })
            .collect()
    }
}

/// One aligned `(public, private)` pair.
#[derive(Debug, Clone, PartialEq)]
pub struct Pair {
    pub episode: u32,
    pub public: Vec<f64>,
    pub private: Vec<f64>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct AttackDataset {
    pub train: Vec<Pair>,
    pub test: Vec<Pair>,
    /// Private dimensions kept after dropping constant ones.
    pub kept_dims: Vec<usize>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct AttackConfig {
    /// Fraction of episodes held out for testing.
    pub test_fraction: f64,
    /// Fraction of training episodes used for early stopping.
    pub validation_fraction: f64,
    /// Upper bound on pairs; larger harvests are subsampled by episode order.
    pub max_pairs: usize,
    pub hidden: usize,
    pub lr: f64,
    pub batch_size: usize,
    pub max_epochs: usize,
    pub patience: usize,
}

impl Default for AttackConfig {
    fn default() -> Self {
        AttackConfig {
            test_fraction: 0.2,
            validation_fraction: 0.15,
            max_pairs: 6000,
            hidden: 64,
            lr: 1e-3,
            batch_size: 64,
            max_epochs: 300,
            patience: 15,
        }
    }
}

/// Aligns exposures with private records, min-max normalizes labels to
/// `[0, 1]` and splits by episode. `public = None` stands for a scheme that
/// publishes nothing: every private record gets a zero input.
pub fn harvest(public: Option<&[Exposure]>, private: &[PrivateRecord], cfg: &AttackConfig) -> Result<AttackDataset> {
    if private.is_empty() {
        return Err(Error::Data("no private records to attack".into()));
    }
    let by_key: HashMap<ExposureKey, &PrivateRecord> = private.iter().map(|r| ((r.agent, r.id), r)).collect();
    let mut raw: Vec<(MemoryId, usize, Vec<f64>, Vec<f64>)> = match public {
        None => private.iter().map(|r| (r.id, r.agent, vec![0.0], r.label())).collect(),
        Some(exps) => exps
            .iter()
            .filter_map(|e| by_key.get(&(e.agent, e.id)).map(|r| (e.id, e.agent, e.public.clone(), r.label())))
            .collect(),
    };
    if raw.is_empty() {
        return Err(Error::Data("no exposure matches a private record".into()));
    }
    raw.sort_by_key(|(id, agent, _, _)| (*id, *agent));
    if raw.len() > cfg.max_pairs {
        // keep an even spread over the run
        let stride = raw.len() as f64 / cfg.max_pairs as f64;
        raw = (0..cfg.max_pairs).map(|k| raw[(k as f64 * stride) as usize].clone()).collect();
    }
    let dims = raw[0].3.len();
    let pub_dims = raw[0].2.len();
    if raw.iter().any(|r| r.3.len() != dims || r.2.len() != pub_dims) {
        return Err(Error::Data("ragged public or private vectors".into()));
    }
    let mut lo = vec![f64::INFINITY; dims];
    let mut hi = vec![f64::NEG_INFINITY; dims];
    for r in &raw {
        for (d, v) in r.3.iter().enumerate() {
            lo[d] = lo[d].min(*v);
            hi[d] = hi[d].max(*v);
        }
    }
    let kept_dims: Vec<usize> = (0..dims).filter(|&d| hi[d] > lo[d]).collect();
    if kept_dims.is_empty() {
        return Err(Error::Data("every private dimension is constant".into()));
    }
    let mut episodes: Vec<u32> = raw.iter().map(|r| r.0.episode).collect();
    episodes.dedup();
    let n_test = ((episodes.len() as f64 * cfg.test_fraction).round() as usize).clamp(1, episodes.len().max(2) - 1);
    let first_test = episodes[episodes.len() - n_test];
    let mut train = Vec::new();
    let mut test = Vec::new();
    for (id, _, public, label) in raw {
        let private = kept_dims.iter().map(|&d| (label[d] - lo[d]) / (hi[d] - lo[d])).collect();
        let p = Pair {
            episode: id.episode,
            public,
            private,
        };
        if id.episode >= first_test && episodes.len() > 1 {
            test.push(p);
        } else {
            train.push(p);
        }
    }
    if train.is_empty() || test.is_empty() {
        return Err(Error::Data("need at least two episodes to split".into()));
    }
    Ok(AttackDataset { train, test, kept_dims })
}

/// Regressor from public vectors to normalized private vectors.
#[derive(Debug, Clone)]
pub struct Attacker {
    net: Option<Mlp>,
    in_mean: Vec<f64>,
    in_scale: Vec<f64>,
    constant: Vec<f64>,
    pub epochs_run: usize,
    pub degenerate: bool,
}

impl Attacker {
    pub fn predict(&self, public: &[f64]) -> Vec<f64> {
        match &self.net {
            None => self.constant.clone(),
            Some(net) => {
                let x: Vec<f64> = public
                    .iter()
                    .zip(self.in_mean.iter().zip(&self.in_scale))
                    .map(|(v, (m, s))| (v - m) * s)
                    .collect();
                net.predict(&x).expect("dimensions fixed at training")
            }
        }
    }

    pub fn describe(&self) -> String {
        match &self.net {
            None => "constant (train mean)".into(),
            Some(n) => {
                let hidden: Vec<String> = n.layers()[..n.layers().len() - 1].iter().map(|l| l.outputs.to_string()).collect();
                format!("mlp {} relu, adam, early stopping", hidden.join("x"))
            }
        }
    }
}

fn column_mean(rows: &[&[f64]]) -> Vec<f64> {
    let d = rows[0].len();
    let mut m = vec![0.0; d];
    for r in rows {
        for (a, v) in m.iter_mut().zip(r.iter()) {
            *a += v;
        }
    }
    m.iter_mut().for_each(|v| *v /= rows.len() as f64);
    m
}

fn mse(net: &Mlp, xs: &[Vec<f64>], ys: &[&[f64]]) -> f64 {
    let mut s = 0.0;
    let mut n = 0usize;
    for (x, y) in xs.iter().zip(ys) {
        let p = net.predict(x).expect("dims");
        s += p.iter().zip(y.iter()).map(|(a, b)| (a - b).powi(2)).sum::<f64>();
        n += y.len();
    }
    s / n as f64
}

/// Trains the attacker with minibatch Adam and validation early stopping.
/// Inputs with no variation yield the train-mean constant predictor.
pub fn train_attacker(ds: &AttackDataset, cfg: &AttackConfig, seed: u64) -> Result<Attacker> {
    if ds.train.is_empty() {
        return Err(Error::Data("empty training split".into()));
    }
    let labels: Vec<&[f64]> = ds.train.iter().map(|p| p.private.as_slice()).collect();
    let constant = column_mean(&labels);
    let inputs: Vec<&[f64]> = ds.train.iter().map(|p| p.public.as_slice()).collect();
    let in_mean = column_mean(&inputs);
    let in_sd: Vec<f64> = (0..in_mean.len())
        .map(|d| (inputs.iter().map(|r| (r[d] - in_mean[d]).powi(2)).sum::<f64>() / inputs.len() as f64).sqrt())
        .collect();
    if in_sd.iter().all(|s| *s == 0.0) {
        return Ok(Attacker {
            net: None,
            in_mean,
            in_scale: Vec::new(),
            constant,
            epochs_run: 0,
            degenerate: true,
        });
    }
    let in_scale: Vec<f64> = in_sd.iter().map(|s| if *s > 0.0 { 1.0 / s } else { 0.0 }).collect();
    let norm = |p: &Pair| -> Vec<f64> {
        p.public
            .iter()
            .zip(in_mean.iter().zip(&in_scale))
            .map(|(v, (m, s))| (v - m) * s)
            .collect()
    };

    // validation = last training episodes
    let mut episodes: Vec<u32> = ds.train.iter().map(|p| p.episode).collect();
    episodes.dedup();
    let n_val = ((episodes.len() as f64 * cfg.validation_fraction).round() as usize).min(episodes.len() - 1);
    let (fit, val): (Vec<&Pair>, Vec<&Pair>) = if n_val == 0 {
        (ds.train.iter().collect(), ds.train.iter().collect())
    } else {
        let cut = episodes[episodes.len() - n_val];
        ds.train.iter().partition(|p| p.episode < cut)
    };
    let fit_x: Vec<Vec<f64>> = fit.iter().map(|p| norm(p)).collect();
    let fit_y: Vec<&[f64]> = fit.iter().map(|p| p.private.as_slice()).collect();
    let val_x: Vec<Vec<f64>> = val.iter().map(|p| norm(p)).collect();
    let val_y: Vec<&[f64]> = val.iter().map(|p| p.private.as_slice()).collect();

    let mut r = rng::stream(seed, "attacker", 0);
    let out_dim = constant.len();
    let mut net = Mlp::new(
        &[in_mean.len(), cfg.hidden, cfg.hidden, out_dim],
        Activation::Relu,
        Activation::Linear,
        &mut r,
    )?;
    // start exactly at the mean predictor
    let last = net.layers().len() - 1;
    net.layers_mut()[last].weights.fill(0.0);
    net.layers_mut()[last].bias.copy_from_slice(&constant);
    let mut opt = OptimState::new(OptimConfig::adam(cfg.lr))?;
    let mut best = (mse(&net, &val_x, &val_y), net.clone());
    let mut since_best = 0;
    let mut order: Vec<usize> = (0..fit_x.len()).collect();
    let mut epochs_run = 0;
    for _ in 0..cfg.max_epochs {
        epochs_run += 1;
        order.shuffle(&mut r);
        for chunk in order.chunks(cfg.batch_size.max(1)) {
            let mut g = Grads::zeros_like(&net);
            let k = (chunk.len() * out_dim) as f64;
            for &j in chunk {
                let (p, tape) = net.forward(&fit_x[j])?;
                let d: Vec<f64> = p.iter().zip(fit_y[j]).map(|(a, b)| 2.0 * (a - b) / k).collect();
                net.backward_into(&tape, &d, &mut g)?;
            }
            opt.step(&mut net, &g)?;
        }
        let v = mse(&net, &val_x, &val_y);
        if v < best.0 {
            best = (v, net.clone());
            since_best = 0;
        } else {
            since_best += 1;
            if since_best >= cfg.patience {
                break;
            }
        }
    }
    Ok(Attacker {
        net: Some(best.1),
        in_mean,
        in_scale,
        constant,
        epochs_run,
        degenerate: false,
    })
}

/// Root of the mean squared componentwise error over a split.
pub fn privacy_rmse(attacker: &Attacker, test: &[Pair]) -> f64 {
    let errs = squared_errors(test, |p| attacker.predict(&p.public));
    (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()
}

/// RMSE of predicting the training mean for every test pair.
pub fn mean_predictor_rmse(ds: &AttackDataset) -> f64 {
    let labels: Vec<&[f64]> = ds.train.iter().map(|p| p.private.as_slice()).collect();
    let m = column_mean(&labels);
    let errs = squared_errors(&ds.test, |_| m.clone());
    (errs.iter().sum::<f64>() / errs.len() as f64).sqrt()
}

fn squared_errors(test: &[Pair], mut f: impl FnMut(&Pair) -> Vec<f64>) -> Vec<f64> {
    let mut out = Vec::new();
    for p in test {
        let pred = f(p);
        out.extend(pred.iter().zip(&p.private).map(|(a, b)| (a - b).powi(2)));
    }
    out
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PrivacyReport {
    pub scheme: String,
    pub rmse: f64,
    pub mean_predictor_rmse: f64,
    pub attacker: String,
    pub degenerate: bool,
    pub n_train: usize,
    pub n_test: usize,
    pub public_dim: usize,
    pub private_dim: usize,
}

/// Harvest, train and score in one call.
pub fn attack(
    scheme: &str,
    public: Option<&[Exposure]>,
    private: &[PrivateRecord],
    cfg: &AttackConfig,
    seed: u64,
) -> Result<PrivacyReport> {
    let ds = harvest(public, private, cfg)?;
    let attacker = train_attacker(&ds, cfg, seed)?;
    Ok(PrivacyReport {
        scheme: scheme.to_string(),
        rmse: privacy_rmse(&attacker, &ds.test),
        mean_predictor_rmse: mean_predictor_rmse(&ds),
        attacker: attacker.describe(),
        degenerate: attacker.degenerate,
        n_train: ds.train.len(),
        n_test: ds.test.len(),
        public_dim: ds.train[0].public.len(),
        private_dim: ds.kept_dims.len(),
    })
}
