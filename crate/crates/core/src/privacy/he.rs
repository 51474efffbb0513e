//! Global-critic evaluation over encrypted q values.
//!
//! The coordinator holds the plaintext critic weights and the public key;
//! linear layers run homomorphically on its side. In interactive mode each
//! hidden activation is a round trip to the keyholder, which decrypts,
//! applies the activation, remembers the pre-activations and re-encrypts.
//! In linear mode hidden layers must be linear and the forward pass needs no
//! interaction at all.
//!
//! Backward: the coordinator propagates plaintext deltas through its own
//! weights; the keyholder multiplies them by the activation derivative at
//! the pre-activations only it has seen. Weight gradients are accumulated
//! homomorphically as `Σ_b δ_b ⊗ Enc(a_b)` and decrypted by the keyholder.
//! The gradient at the q interface is `W_1ᵀ δ_1`, plaintext at the
//! coordinator, which never sees a q value.

use std::collections::HashMap;

use serde::{Deserialize, Serialize};

use crate::bus::{Bus, Endpoint, MessageKind, Payload};
use crate::error::{Error, Result};
use crate::nn::{Activation, Grads, Layer, Mlp};
use crate::rng::{self, Stream};

use super::paillier::{Ciphertext, HeOps, KeyPair, PublicKey};

/// Assumed bound on `log2 |x|` of any plaintext value in the protocol. Used
/// to track overflow for ciphertexts whose magnitude the receiver cannot see.
pub const VALUE_BITS: f64 = 24.0;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum HeMode {
    /// Activation round trips to the keyholder (HE¹).
    Interactive,
    /// Linear hidden layers only, no forward interaction (HE²).
    Linear,
}

pub fn check_compatible(net: &Mlp, mode: HeMode) -> Result<()> {
    let last = net.layers().last().expect("non-empty network");
    if last.activation != Activation::Linear {
        return Err(Error::Config(
            "encrypted global critic needs a linear output layer".into(),
        ));
    }
    if mode == HeMode::Linear {
        if let Some(a) = net.hidden_activations().find(|a| *a != Activation::Linear) {
            return Err(Error::Config(format!(
                "linear HE mode requires linear hidden activations, found {a:?}"
            )));
        }
    }
    Ok(())
}

fn wire_bound(scale: u32) -> f64 {
    scale as f64 + VALUE_BITS
}

/// `W·x + b` on encrypted inputs that share one scale. Outputs carry
/// `scale + frac_bits`.
pub fn he_linear_layer(
    pk: &PublicKey,
    layer: &Layer,
    inputs: &[Ciphertext],
    frac_bits: u32,
    ops: &mut HeOps,
) -> Result<Vec<Ciphertext>> {
    if inputs.len() != layer.inputs {
        return Err(Error::Config(format!(
            "layer expects {} encrypted inputs, got {}",
            layer.inputs,
            inputs.len()
        )));
    }
    let in_scale = inputs.first().map(|c| c.scale).unwrap_or(0);
    if inputs.iter().any(|c| c.scale != in_scale) {
        return Err(Error::Usage("encrypted inputs at mixed scales".into()));
    }
    let out_scale = in_scale + frac_bits;
    let mut out = Vec::with_capacity(layer.outputs);
    for o in 0..layer.outputs {
        let mut acc = pk.encrypt_public(layer.bias[o], out_scale)?;
        for (i, x) in inputs.iter().enumerate() {
            let w = layer.weight(o, i);
            if w == 0.0 {
                continue;
            }
            let t = pk.scale(w, frac_bits, x, ops)?;
            acc = pk.add(&acc, &t, ops)?;
        }
        out.push(acc);
    }
    Ok(out)
}

/// The party holding the secret key: a designated agent or a trusted device.
#[derive(Debug)]
pub struct Keyholder {
    pub endpoint: Endpoint,
    keys: KeyPair,
    frac_bits: u32,
    rng: Stream,
    pub ops: HeOps,
    // handle → hidden layer → batch row → pre-activations
    saved: HashMap<u64, Vec<(Activation, Vec<Vec<f64>>)>>,
}

impl Keyholder {
    pub fn new(endpoint: Endpoint, keys: KeyPair, frac_bits: u32, seed: u64) -> Self {
        Keyholder {
            endpoint,
            keys,
            frac_bits,
            rng: rng::stream(seed, "keyholder", 0),
            ops: HeOps::default(),
            saved: HashMap::new(),
        }
    }

    pub fn public(&self) -> &PublicKey {
        &self.keys.public
    }

    pub fn keys(&self) -> &KeyPair {
        &self.keys
    }

    /// Decrypt, activate, remember, re-encrypt.
    fn activate(
        &mut self,
        handle: u64,
        rows: Vec<Vec<Ciphertext>>,
        activation: Activation,
    ) -> Result<Vec<Vec<Ciphertext>>> {
        let mut pre = Vec::with_capacity(rows.len());
        let mut out = Vec::with_capacity(rows.len());
        for row in rows {
            let z: Vec<f64> = row.iter().map(|c| self.keys.decrypt(c, &mut self.ops)).collect();
            let a = z
                .iter()
                .map(|&v| self.keys.encrypt(activation.apply(v), self.frac_bits, &mut self.rng, &mut self.ops))
                .collect::<Result<Vec<_>>>()?;
            pre.push(z);
            out.push(a);
        }
        self.saved.entry(handle).or_default().push((activation, pre));
        Ok(out)
    }

    fn mask(&self, handle: u64, hidden: usize, e: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
        let (act, pre) = self
            .saved
            .get(&handle)
            .and_then(|v| v.get(hidden))
            .ok_or_else(|| Error::Usage("keyholder has no pre-activations for this pass".into()))?;
        Ok(e.iter()
            .zip(pre)
            .map(|(er, zr)| er.iter().zip(zr).map(|(d, z)| d * act.derivative(*z)).collect())
            .collect())
    }

    pub fn decrypt_all(&mut self, cts: &[Ciphertext]) -> Vec<f64> {
        cts.iter().map(|c| self.keys.decrypt(c, &mut self.ops)).collect()
    }

    pub fn release(&mut self, handle: u64) {
        self.saved.remove(&handle);
    }
}

/// Encrypted forward state kept by the coordinator.
#[derive(Debug)]
pub struct EncForward {
    handle: u64,
    /// Encrypted input of each layer, per batch row.
    pub layer_inputs: Vec<Vec<Vec<Ciphertext>>>,
    /// Encrypted network output per batch row.
    pub outputs: Vec<Vec<Ciphertext>>,
    /// Keyholder interactions spent in the forward pass.
    pub rounds: usize,
}

/// Coordinator side of the encrypted global critic.
#[derive(Debug)]
pub struct HeEvaluator {
    pub pk: PublicKey,
    pub mode: HeMode,
    pub frac_bits: u32,
    pub ops: HeOps,
    next_handle: u64,
}

fn cipher_payload(pk: &PublicKey, rows: &[Vec<Ciphertext>]) -> Payload {
    Payload::Cipher {
        width: pk.cipher_bytes() as u16,
        items: rows.iter().flatten().map(|c| c.c.clone()).collect(),
    }
}

fn unflatten_cipher(items: Vec<num_bigint::BigUint>, width: usize, scale: u32) -> Result<Vec<Vec<Ciphertext>>> {
    if width == 0 || items.len() % width != 0 {
        return Err(Error::Data("ciphertext payload does not match row width".into()));
    }
    let mut rows = Vec::with_capacity(items.len() / width);
    let mut it = items.into_iter();
    while let Some(first) = it.next() {
        let mut row = Vec::with_capacity(width);
        row.push(Ciphertext::from_wire(first, scale, wire_bound(scale)));
        for _ in 1..width {
            let c = it.next().expect("length checked");
            row.push(Ciphertext::from_wire(c, scale, wire_bound(scale)));
        }
        rows.push(row);
    }
    Ok(rows)
}

fn reals_payload(rows: &[Vec<f64>]) -> Payload {
    Payload::Reals(rows.iter().flatten().copied().collect())
}

fn unflatten_reals(v: Vec<f64>, width: usize) -> Result<Vec<Vec<f64>>> {
    if width == 0 || v.len() % width != 0 {
        return Err(Error::Data("real payload does not match row width".into()));
    }
    Ok(v.chunks(width).map(|c| c.to_vec()).collect())
}

impl HeEvaluator {
    pub fn new(pk: PublicKey, mode: HeMode, frac_bits: u32) -> Self {
        HeEvaluator {
            pk,
            mode,
            frac_bits,
            ops: HeOps::default(),
            next_handle: 0,
        }
    }

    /// Rebuilds encrypted q rows received from agents (scale `frac_bits`).
    pub fn receive_inputs(&self, items: Vec<num_bigint::BigUint>, width: usize) -> Result<Vec<Vec<Ciphertext>>> {
        unflatten_cipher(items, width, self.frac_bits)
    }

    pub fn forward(
        &mut self,
        net: &Mlp,
        inputs: Vec<Vec<Ciphertext>>,
        keyholder: &mut Keyholder,
        bus: &mut Bus,
    ) -> Result<EncForward> {
        check_compatible(net, self.mode)?;
        let handle = self.next_handle;
        self.next_handle += 1;
        let n_layers = net.layers().len();
        let mut layer_inputs = Vec::with_capacity(n_layers);
        let mut x = inputs;
        let mut rounds = 0;
        for (li, layer) in net.layers().iter().enumerate() {
            let z = x
                .iter()
                .map(|row| he_linear_layer(&self.pk, layer, row, self.frac_bits, &mut self.ops))
                .collect::<Result<Vec<_>>>()?;
            layer_inputs.push(x);
            if li + 1 == n_layers || self.mode == HeMode::Linear {
                x = z;
                continue;
            }
            // interactive activation
            let scale = z.first().and_then(|r| r.first()).map(|c| c.scale).unwrap_or(0);
            bus.next_round();
            let sent = bus.send(
                MessageKind::ActivationRoundtrip,
                Endpoint::Coordinator,
                keyholder.endpoint,
                cipher_payload(&self.pk, &z),
            )?;
            let rows = unflatten_cipher(sent.into_cipher()?, layer.outputs, scale)?;
            let activated = keyholder.activate(handle, rows, layer.activation)?;
            let back = bus.send(
                MessageKind::ActivationRoundtrip,
                keyholder.endpoint,
                Endpoint::Coordinator,
                cipher_payload(&self.pk, &activated),
            )?;
            bus.next_round();
            x = unflatten_cipher(back.into_cipher()?, layer.outputs, self.frac_bits)?;
            rounds += 1;
        }
        Ok(EncForward {
            handle,
            layer_inputs,
            outputs: x,
            rounds,
        })
    }

    /// Backward from plaintext output gradients (one row per batch element).
    /// Returns per-row gradients at the network input and, if requested, the
    /// parameter gradients summed over the batch.
    pub fn backward(
        &mut self,
        net: &Mlp,
        fwd: &EncForward,
        output_grads: &[Vec<f64>],
        want_params: bool,
        keyholder: &mut Keyholder,
        bus: &mut Bus,
    ) -> Result<(Vec<Vec<f64>>, Option<Grads>)> {
        if output_grads.len() != fwd.outputs.len() {
            return Err(Error::Usage("one output gradient per batch row required".into()));
        }
        let layers = net.layers();
        let mut delta: Vec<Vec<f64>> = output_grads.to_vec();
        let mut grads = Grads::zeros_like(net);
        // encrypted weight gradients waiting for decryption: (layer, scale, cts)
        let mut pending: Vec<(usize, u32, Vec<Ciphertext>)> = Vec::new();
        for li in (0..layers.len()).rev() {
            let layer = &layers[li];
            if want_params {
                for row in &delta {
                    for (o, d) in row.iter().enumerate() {
                        grads.layers[li].bias[o] += d;
                    }
                }
                let inputs = &fwd.layer_inputs[li];
                let mut cts = Vec::with_capacity(layer.outputs * layer.inputs);
                let scale = inputs[0][0].scale + self.frac_bits;
                for o in 0..layer.outputs {
                    for i in 0..layer.inputs {
                        let mut acc = self.pk.encrypt_public(0.0, scale)?;
                        for (row, d) in inputs.iter().zip(&delta) {
                            if d[o] == 0.0 {
                                continue;
                            }
                            let t = self.pk.scale(d[o], self.frac_bits, &row[i], &mut self.ops)?;
                            acc = self.pk.add(&acc, &t, &mut self.ops)?;
                        }
                        cts.push(acc);
                    }
                }
                pending.push((li, scale, cts));
            }
            let e: Vec<Vec<f64>> = delta.iter().map(|d| layer.transpose_mul(d)).collect();
            if li == 0 {
                delta = e;
                break;
            }
            let below = layers[li - 1].activation;
            delta = if below == Activation::Linear {
                e
            } else {
                bus.next_round();
                let sent = bus.send(
                    MessageKind::ActivationRoundtrip,
                    Endpoint::Coordinator,
                    keyholder.endpoint,
                    reals_payload(&e),
                )?;
                let e_recv = unflatten_reals(sent.into_reals()?, layer.inputs)?;
                let masked = keyholder.mask(fwd.handle, li - 1, &e_recv)?;
                let back = bus.send(
                    MessageKind::ActivationRoundtrip,
                    keyholder.endpoint,
                    Endpoint::Coordinator,
                    reals_payload(&masked),
                )?;
                bus.next_round();
                unflatten_reals(back.into_reals()?, layer.inputs)?
            };
        }
        let params = if want_params {
            bus.next_round();
            let all: Vec<Vec<Ciphertext>> = pending.iter().map(|(_, _, c)| c.clone()).collect();
            let sent = bus.send(
                MessageKind::CipherBlob,
                Endpoint::Coordinator,
                keyholder.endpoint,
                cipher_payload(&self.pk, &all),
            )?;
            let mut items = sent.into_cipher()?.into_iter();
            let mut plain = Vec::new();
            for (_, scale, cts) in &pending {
                let recv: Vec<Ciphertext> = (0..cts.len())
                    .map(|_| Ciphertext::from_wire(items.next().expect("sizes match"), *scale, wire_bound(*scale)))
                    .collect();
                plain.extend(keyholder.decrypt_all(&recv));
            }
            let back = bus.send(
                MessageKind::GradInterface,
                keyholder.endpoint,
                Endpoint::Coordinator,
                Payload::Reals(plain),
            )?;
            bus.next_round();
            let values = back.into_reals()?;
            let mut off = 0;
            for (li, _, cts) in &pending {
                grads.layers[*li].weights.copy_from_slice(&values[off..off + cts.len()]);
                off += cts.len();
            }
            Some(grads)
        } else {
            None
        };
        Ok((delta, params))
    }

    pub fn release(&self, fwd: EncForward, keyholder: &mut Keyholder) {
        keyholder.release(fwd.handle);
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::privacy::paillier::KeyPair;
    use std::sync::OnceLock;

    fn key() -> &'static KeyPair {
        static K: OnceLock<KeyPair> = OnceLock::new();
        K.get_or_init(|| KeyPair::generate(512, 21).unwrap())
    }

    fn encrypt_rows(k: &KeyPair, rows: &[Vec<f64>], seed: u64) -> Vec<Vec<Ciphertext>> {
        let mut r = rng::stream(seed, "t", 0);
        let mut ops = HeOps::default();
        rows.iter()
            .map(|row| row.iter().map(|&x| k.encrypt(x, 32, &mut r, &mut ops).unwrap()).collect())
            .collect()
    }

    fn critic(hidden: Activation, seed: u64) -> Mlp {
        let mut r = rng::stream(seed, "t", 1);
        Mlp::new(&[3, 5, 4, 1], hidden, Activation::Linear, &mut r).unwrap()
    }

    #[test]
    fn identity_and_zero_layers() {
        let k = key();
        let mut ops = HeOps::default();
        let x = encrypt_rows(k, &[vec![0.25, -1.5]], 1).remove(0);
        let mut id = Layer::zeros(2, 2, Activation::Linear);
        id.weights = vec![1.0, 0.0, 0.0, 1.0];
        let out = he_linear_layer(&k.public, &id, &x, 32, &mut ops).unwrap();
        let dec: Vec<f64> = out.iter().map(|c| k.decrypt(c, &mut ops)).collect();
        assert_eq!(dec, vec![0.25, -1.5]);
        let mut zero = Layer::zeros(2, 1, Activation::Linear);
        zero.bias = vec![0.75];
        let out = he_linear_layer(&k.public, &zero, &x, 32, &mut ops).unwrap();
        assert_eq!(k.decrypt(&out[0], &mut ops), 0.75);
    }

    #[test]
    fn interactive_activation_examples() {
        let k = key();
        let mut kh = Keyholder::new(Endpoint::agent(0), k.clone(), 32, 0);
        let rows = encrypt_rows(k, &[vec![-1.0, 2.0]], 2);
        let out = kh.activate(0, rows.clone(), Activation::Relu).unwrap();
        assert_eq!(kh.decrypt_all(&out[0]), vec![0.0, 2.0]);
        let out = kh.activate(1, rows, Activation::Linear).unwrap();
        assert_eq!(kh.decrypt_all(&out[0]), vec![-1.0, 2.0]);
    }

    #[test]
    fn interactive_forward_matches_plaintext() {
        let k = key();
        let net = critic(Activation::Relu, 3);
        let mut kh = Keyholder::new(Endpoint::agent(0), k.clone(), 32, 0);
        let mut ev = HeEvaluator::new(k.public.clone(), HeMode::Interactive, 32);
        let mut bus = Bus::new();
        let rows = vec![vec![0.3, -0.7, 1.1], vec![-0.2, 0.5, 0.9]];
        let fwd = ev.forward(&net, encrypt_rows(k, &rows, 4), &mut kh, &mut bus).unwrap();
        assert_eq!(fwd.rounds, 2);
        let roundtrips = bus.records().iter().filter(|r| r.kind == MessageKind::ActivationRoundtrip).count();
        assert_eq!(roundtrips, 4);
        for (row, enc) in rows.iter().zip(&fwd.outputs) {
            let q = kh.decrypt_all(enc)[0];
            assert!((q - net.predict(row).unwrap()[0]).abs() < 1e-6);
        }
    }

    #[test]
    fn linear_mode_needs_linear_hidden() {
        let k = key();
        let mut kh = Keyholder::new(Endpoint::agent(0), k.clone(), 32, 0);
        let mut ev = HeEvaluator::new(k.public.clone(), HeMode::Linear, 32);
        let mut bus = Bus::new();
        let rows = vec![vec![0.3, -0.7, 1.1]];
        let err = ev.forward(&critic(Activation::Relu, 5), encrypt_rows(k, &rows, 5), &mut kh, &mut bus);
        assert!(matches!(err, Err(Error::Config(_))));
        let net = critic(Activation::Linear, 5);
        let fwd = ev.forward(&net, encrypt_rows(k, &rows, 5), &mut kh, &mut bus).unwrap();
        assert_eq!(fwd.rounds, 0);
        assert!(bus.records().is_empty());
        assert_eq!(fwd.outputs[0][0].scale, 32 * 4);
        let q = kh.decrypt_all(&fwd.outputs[0])[0];
        assert!((q - net.predict(&rows[0]).unwrap()[0]).abs() < 1e-6);
    }

    #[test]
    fn nonlinear_output_rejected() {
        let mut r = rng::stream(0, "t", 0);
        let net = Mlp::new(&[2, 2], Activation::Relu, Activation::Tanh, &mut r).unwrap();
        assert!(check_compatible(&net, HeMode::Interactive).is_err());
    }

    #[test]
    fn backward_matches_plaintext() {
        let k = key();
        for (mode, act) in [(HeMode::Interactive, Activation::Tanh), (HeMode::Linear, Activation::Linear)] {
            let net = critic(act, 7);
            let mut kh = Keyholder::new(Endpoint::agent(0), k.clone(), 32, 0);
            let mut ev = HeEvaluator::new(k.public.clone(), mode, 32);
            let mut bus = Bus::new();
            let rows = vec![vec![0.3, -0.7, 1.1], vec![-0.2, 0.5, 0.9]];
            let up = vec![vec![0.4], vec![-1.3]];
            let fwd = ev.forward(&net, encrypt_rows(k, &rows, 8), &mut kh, &mut bus).unwrap();
            let (dx, g) = ev.backward(&net, &fwd, &up, true, &mut kh, &mut bus).unwrap();
            let mut expect = Grads::zeros_like(&net);
            for (i, row) in rows.iter().enumerate() {
                let (_, tape) = net.forward(row).unwrap();
                let d = net.backward_into(&tape, &up[i], &mut expect).unwrap();
                for (a, b) in d.iter().zip(&dx[i]) {
                    assert!((a - b).abs() < 1e-6, "{mode:?} input grad {a} vs {b}");
                }
            }
            for (a, b) in expect.flat().iter().zip(g.unwrap().flat()) {
                assert!((a - b).abs() < 1e-6, "{mode:?} param grad {a} vs {b}");
            }
        }
    }
}
