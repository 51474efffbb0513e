//! Dense feed-forward networks with explicit forward/backward passes.
//!
//! Everything in the crate that learns is built from [`Mlp`]: actors, local
//! critics, the global critic, baseline critics and the inference attacker.
//! Networks are plain values. A forward pass returns a [`Tape`] holding the
//! per-layer inputs and pre-activations, and [`Mlp::backward`] consumes it to
//! produce both the input gradient and the parameter gradients.
//!
//! All arithmetic is `f64`.

use std::sync::atomic::{AtomicU64, Ordering};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

static NEXT_UID: AtomicU64 = AtomicU64::new(1);

fn fresh_uid() -> u64 {
    NEXT_UID.fetch_add(1, Ordering::Relaxed)
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Tanh,
    Linear,
    /// `z²`; only meaningful for critics that must stay polynomial.
    Square,
}

impl Activation {
    #[inline]
    pub fn apply(self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Linear => z,
            Activation::Square => z * z,
        }
    }

    /// Derivative with respect to the pre-activation.
    #[inline]
    pub fn derivative(self, z: f64) -> f64 {
        match self {
            Activation::Relu => {
                if z > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Tanh => {
                let t = z.tanh();
                1.0 - t * t
            }
            Activation::Linear => 1.0,
            Activation::Square => 2.0 * z,
        }
    }

    pub fn is_polynomial(self) -> bool {
        matches!(self, Activation::Linear | Activation::Square)
    }
}

/// One affine map followed by an elementwise activation.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer {
    pub inputs: usize,
    pub outputs: usize,
    /// Row-major `outputs × inputs`.
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn zeros(inputs: usize, outputs: usize, activation: Activation) -> Self {
        Layer {
            inputs,
            outputs,
            weights: vec![0.0; inputs * outputs],
            bias: vec![0.0; outputs],
            activation,
        }
    }

    /// Glorot-uniform weights in `±sqrt(6 / (fan_in + fan_out))`, zero bias.
    pub fn glorot<R: Rng + ?Sized>(
        inputs: usize,
        outputs: usize,
        activation: Activation,
        rng: &mut R,
    ) -> Self {
        let limit = (6.0 / (inputs + outputs) as f64).sqrt();
        let weights = (0..inputs * outputs)
            .map(|_| rng.random_range(-limit..=limit))
            .collect();
        Layer {
            inputs,
            outputs,
            weights,
            bias: vec![0.0; outputs],
            activation,
        }
    }

    #[inline]
    pub fn weight(&self, row: usize, col: usize) -> f64 {
        self.weights[row * self.inputs + col]
    }

    /// Pre-activation `W·x + b`.
    pub fn affine(&self, input: &[f64]) -> Vec<f64> {
        let mut z = self.bias.clone();
        for (o, zo) in z.iter_mut().enumerate() {
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            *zo += dot(row, input);
        }
        z
    }

    pub fn param_count(&self) -> usize {
        self.weights.len() + self.bias.len()
    }
}

#[inline]
fn dot(a: &[f64], b: &[f64]) -> f64 {
    let mut acc = [0.0f64; 4];
    let chunks = a.len() / 4;
    for c in 0..chunks {
        let i = c * 4;
        acc[0] += a[i] * b[i];
        acc[1] += a[i + 1] * b[i + 1];
        acc[2] += a[i + 2] * b[i + 2];
        acc[3] += a[i + 3] * b[i + 3];
    }
    let mut s = (acc[0] + acc[1]) + (acc[2] + acc[3]);
    for i in chunks * 4..a.len() {
        s += a[i] * b[i];
    }
    s
}

/// Activation cache of one forward pass.
#[derive(Debug, Clone)]
pub struct Tape {
    uid: u64,
    generation: u64,
    /// Input to each layer.
    inputs: Vec<Vec<f64>>,
    /// Pre-activation of each layer.
    preacts: Vec<Vec<f64>>,
}

impl Tape {
    pub fn input(&self) -> &[f64] {
        &self.inputs[0]
    }

    pub fn preactivations(&self, layer: usize) -> &[f64] {
        &self.preacts[layer]
    }
}

/// Parameter gradients, shape-congruent with the network they came from.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    pub layers: Vec<LayerGrad>,
}

#[derive(Debug, Clone, PartialEq)]
pub struct LayerGrad {
    pub weights: Vec<f64>,
    pub bias: Vec<f64>,
}

impl Grads {
    pub fn zeros_like(net: &Mlp) -> Self {
        Grads {
            layers: net
                .layers
                .iter()
                .map(|l| LayerGrad {
                    weights: vec![0.0; l.weights.len()],
                    bias: vec![0.0; l.bias.len()],
                })
                .collect(),
        }
    }

    pub fn zero(&mut self) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w = 0.0);
            l.bias.iter_mut().for_each(|b| *b = 0.0);
        }
    }

    pub fn scale(&mut self, k: f64) {
        for l in &mut self.layers {
            l.weights.iter_mut().for_each(|w| *w *= k);
            l.bias.iter_mut().for_each(|b| *b *= k);
        }
    }

    pub fn add_assign(&mut self, other: &Grads) {
        for (a, b) in self.layers.iter_mut().zip(&other.layers) {
            a.weights.iter_mut().zip(&b.weights).for_each(|(x, y)| *x += y);
            a.bias.iter_mut().zip(&b.bias).for_each(|(x, y)| *x += y);
        }
    }

    pub fn is_finite(&self) -> bool {
        self.layers
            .iter()
            .all(|l| l.weights.iter().chain(&l.bias).all(|v| v.is_finite()))
    }

    pub fn flat(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }
}

/// A chain of dense layers.
#[derive(Debug, Serialize, Deserialize)]
pub struct Mlp {
    layers: Vec<Layer>,
    #[serde(skip, default = "fresh_uid")]
    uid: u64,
    #[serde(skip)]
    generation: u64,
}

impl Clone for Mlp {
    fn clone(&self) -> Self {
        Mlp {
            layers: self.layers.clone(),
            uid: fresh_uid(),
            generation: 0,
        }
    }
}

impl PartialEq for Mlp {
    fn eq(&self, other: &Self) -> bool {
        self.layers == other.layers
    }
}

impl Mlp {
    pub fn from_layers(layers: Vec<Layer>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Config("network needs at least one layer".into()));
        }
        for (i, l) in layers.iter().enumerate() {
            if l.inputs == 0 || l.outputs == 0 {
                return Err(Error::Config(format!("layer {i} has a zero dimension")));
            }
            if l.weights.len() != l.inputs * l.outputs || l.bias.len() != l.outputs {
                return Err(Error::Config(format!(
                    "layer {i}: parameter lengths do not match {}x{}",
                    l.outputs, l.inputs
                )));
            }
            if l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()) {
                return Err(Error::Config(format!("layer {i} has non-finite parameters")));
            }
        }
        for w in layers.windows(2) {
            if w[0].outputs != w[1].inputs {
                return Err(Error::Config(format!(
                    "layer dimensions do not chain: {} -> {}",
                    w[0].outputs, w[1].inputs
                )));
            }
        }
        Ok(Mlp {
            layers,
            uid: fresh_uid(),
            generation: 0,
        })
    }

    /// Glorot-initialised network with `sizes = [in, h1, ..., out]`.
    pub fn new<R: Rng + ?Sized>(
        sizes: &[usize],
        hidden: Activation,
        output: Activation,
        rng: &mut R,
    ) -> Result<Self> {
        if sizes.len() < 2 {
            return Err(Error::Config("need at least input and output sizes".into()));
        }
        let n = sizes.len() - 1;
        let layers = (0..n)
            .map(|i| {
                let act = if i + 1 == n { output } else { hidden };
                Layer::glorot(sizes[i], sizes[i + 1], act, rng)
            })
            .collect();
        Self::from_layers(layers)
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    /// Mutable access invalidates outstanding tapes.
    pub fn layers_mut(&mut self) -> &mut [Layer] {
        self.generation += 1;
        &mut self.layers
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].inputs
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].outputs
    }

    pub fn param_count(&self) -> usize {
        self.layers.iter().map(Layer::param_count).sum()
    }

    pub fn hidden_activations(&self) -> impl Iterator<Item = Activation> + '_ {
        self.layers[..self.layers.len() - 1]
            .iter()
            .map(|l| l.activation)
    }

    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.param_count());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.bias);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.param_count() {
            return Err(Error::Config(format!(
                "expected {} parameters, got {}",
                self.param_count(),
                flat.len()
            )));
        }
        let mut off = 0;
        for l in self.layers_mut() {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[off..off + nw]);
            off += nw;
            let nb = l.bias.len();
            l.bias.copy_from_slice(&flat[off..off + nb]);
            off += nb;
        }
        Ok(())
    }

    fn check_input(&self, input: &[f64]) -> Result<()> {
        if input.len() != self.input_dim() {
            return Err(Error::Config(format!(
                "input length {} does not match network input {}",
                input.len(),
                self.input_dim()
            )));
        }
        Ok(())
    }

    /// Output only, no tape.
    pub fn predict(&self, input: &[f64]) -> Result<Vec<f64>> {
        self.check_input(input)?;
        let mut x = input.to_vec();
        for l in &self.layers {
            let mut z = l.affine(&x);
            z.iter_mut().for_each(|v| *v = l.activation.apply(*v));
            x = z;
        }
        Ok(x)
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, Tape)> {
        self.check_input(input)?;
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut preacts = Vec::with_capacity(self.layers.len());
        let mut x = input.to_vec();
        for l in &self.layers {
            let z = l.affine(&x);
            let a: Vec<f64> = z.iter().map(|&v| l.activation.apply(v)).collect();
            inputs.push(x);
            preacts.push(z);
            x = a;
        }
        Ok((
            x,
            Tape {
                uid: self.uid,
                generation: self.generation,
                inputs,
                preacts,
            },
        ))
    }

    fn check_tape(&self, tape: &Tape, output_grad: &[f64]) -> Result<()> {
        if tape.uid != self.uid || tape.generation != self.generation {
            return Err(Error::Usage(
                "tape was not produced by this network at its current parameters".into(),
            ));
        }
        if output_grad.len() != self.output_dim() {
            return Err(Error::Usage(format!(
                "output gradient length {} does not match network output {}",
                output_grad.len(),
                self.output_dim()
            )));
        }
        Ok(())
    }

    /// Backward pass accumulating parameter gradients into `grads`.
    /// Returns the gradient with respect to the network input.
    pub fn backward_into(
        &self,
        tape: &Tape,
        output_grad: &[f64],
        grads: &mut Grads,
    ) -> Result<Vec<f64>> {
        self.check_tape(tape, output_grad)?;
        let mut delta = output_grad.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            let z = &tape.preacts[li];
            for (d, &zv) in delta.iter_mut().zip(z) {
                *d *= l.activation.derivative(zv);
            }
            let input = &tape.inputs[li];
            let g = &mut grads.layers[li];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                g.bias[o] += d;
                let row = &mut g.weights[o * l.inputs..(o + 1) * l.inputs];
                for (w, &x) in row.iter_mut().zip(input) {
                    *w += d * x;
                }
            }
            delta = l.transpose_mul(&delta);
        }
        Ok(delta)
    }

    pub fn backward(&self, tape: &Tape, output_grad: &[f64]) -> Result<(Vec<f64>, Grads)> {
        let mut grads = Grads::zeros_like(self);
        let input_grad = self.backward_into(tape, output_grad, &mut grads)?;
        Ok((input_grad, grads))
    }

    /// Input gradient only; skips parameter-gradient accumulation.
    pub fn input_gradient(&self, tape: &Tape, output_grad: &[f64]) -> Result<Vec<f64>> {
        self.check_tape(tape, output_grad)?;
        let mut delta = output_grad.to_vec();
        for (li, l) in self.layers.iter().enumerate().rev() {
            for (d, &zv) in delta.iter_mut().zip(&tape.preacts[li]) {
                *d *= l.activation.derivative(zv);
            }
            delta = l.transpose_mul(&delta);
        }
        Ok(delta)
    }

    /// `target ← (1 − tau)·target + tau·source`.
    pub fn soft_update_from(&mut self, source: &Mlp, tau: f64) -> Result<()> {
        if !(tau > 0.0 && tau <= 1.0) {
            return Err(Error::Config(format!("tau must lie in (0, 1], got {tau}")));
        }
        self.check_congruent(source)?;
        for (t, s) in self.layers_mut().iter_mut().zip(&source.layers) {
            for (a, &b) in t.weights.iter_mut().zip(&s.weights) {
                *a = (1.0 - tau) * *a + tau * b;
            }
            for (a, &b) in t.bias.iter_mut().zip(&s.bias) {
                *a = (1.0 - tau) * *a + tau * b;
            }
        }
        Ok(())
    }

    pub fn check_congruent(&self, other: &Mlp) -> Result<()> {
        let same = self.layers.len() == other.layers.len()
            && self
                .layers
                .iter()
                .zip(&other.layers)
                .all(|(a, b)| a.inputs == b.inputs && a.outputs == b.outputs);
        if same {
            Ok(())
        } else {
            Err(Error::Config("networks are not shape-congruent".into()))
        }
    }

    pub fn to_checkpoint(&self) -> Checkpoint {
        Checkpoint {
            format: CHECKPOINT_FORMAT.to_string(),
            version: CHECKPOINT_VERSION,
            layers: self.layers.clone(),
        }
    }

    pub fn from_checkpoint(ckpt: Checkpoint) -> Result<Self> {
        if ckpt.format != CHECKPOINT_FORMAT || ckpt.version != CHECKPOINT_VERSION {
            return Err(Error::Data(format!(
                "unsupported checkpoint {} v{}",
                ckpt.format, ckpt.version
            )));
        }
        Self::from_layers(ckpt.layers)
    }

    pub fn to_checkpoint_json(&self) -> String {
        serde_json::to_string(&self.to_checkpoint()).expect("checkpoint serializes")
    }

    pub fn from_checkpoint_json(text: &str) -> Result<Self> {
        Self::from_checkpoint(serde_json::from_str(text)?)
    }
}

impl Layer {
    /// `Wᵀ·delta`.
    /// `Wᵀ·delta`.
    pub fn transpose_mul(&self, delta: &[f64]) -> Vec<f64> {
        let mut out = vec![0.0; self.inputs];
        for (o, &d) in delta.iter().enumerate() {
            if d == 0.0 {
                continue;
            }
            let row = &self.weights[o * self.inputs..(o + 1) * self.inputs];
            for (x, &w) in out.iter_mut().zip(row) {
                *x += w * d;
            }
        }
        out
    }
}

pub const CHECKPOINT_FORMAT: &str = "ppmarl-mlp";
pub const CHECKPOINT_VERSION: u32 = 1;

/// On-disk network container. JSON with shortest round-trip float formatting,
/// so a save/load cycle is bit-exact.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Checkpoint {
    pub format: String,
    pub version: u32,
    pub layers: Vec<Layer>,
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "algorithm", rename_all = "snake_case")]
pub enum OptimConfig {
    Sgd { lr: f64 },
    Adam { lr: f64, beta1: f64, beta2: f64, eps: f64 },
}

impl OptimConfig {
    pub fn adam(lr: f64) -> Self {
        OptimConfig::Adam {
            lr,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
        }
    }

    pub fn lr(&self) -> f64 {
        match *self {
            OptimConfig::Sgd { lr } | OptimConfig::Adam { lr, .. } => lr,
        }
    }
}

/// Optimizer with its moment buffers.
#[derive(Debug, Clone)]
pub struct OptimState {
    pub config: OptimConfig,
    m: Vec<Vec<f64>>,
    v: Vec<Vec<f64>>,
    t: u64,
}

impl OptimState {
    pub fn new(config: OptimConfig) -> Result<Self> {
        if !(config.lr() >= 0.0 && config.lr().is_finite()) {
            return Err(Error::Config(format!("invalid learning rate {}", config.lr())));
        }
        Ok(OptimState {
            config,
            m: Vec::new(),
            v: Vec::new(),
            t: 0,
        })
    }

    pub fn steps(&self) -> u64 {
        self.t
    }

    /// Applies one update. Gradients are left untouched; the caller zeroes them.
    pub fn step(&mut self, params: &mut Mlp, grads: &Grads) -> Result<()> {
        if grads.layers.len() != params.layers.len()
            || grads.layers.iter().zip(&params.layers).any(|(g, l)| {
                g.weights.len() != l.weights.len() || g.bias.len() != l.bias.len()
            })
        {
            return Err(Error::Usage("gradient buffer is not shape-congruent".into()));
        }
        if !grads.is_finite() {
            let bad = grads
                .layers
                .iter()
                .enumerate()
                .find(|(_, l)| l.weights.iter().chain(&l.bias).any(|v| !v.is_finite()))
                .map(|(i, _)| i)
                .unwrap_or(0);
            return Err(Error::Training(format!(
                "non-finite gradient in layer {bad}"
            )));
        }
        match self.config {
            OptimConfig::Sgd { lr } => {
                for (l, g) in params.layers_mut().iter_mut().zip(&grads.layers) {
                    l.weights.iter_mut().zip(&g.weights).for_each(|(p, d)| *p -= lr * d);
                    l.bias.iter_mut().zip(&g.bias).for_each(|(p, d)| *p -= lr * d);
                }
            }
            OptimConfig::Adam {
                lr,
                beta1,
                beta2,
                eps,
            } => {
                if self.m.is_empty() {
                    self.m = params
                        .layers
                        .iter()
                        .map(|l| vec![0.0; l.param_count()])
                        .collect();
                    self.v = self.m.clone();
                }
                self.t += 1;
                let bc1 = 1.0 - beta1.powi(self.t as i32);
                let bc2 = 1.0 - beta2.powi(self.t as i32);
                for (li, (l, g)) in params.layers_mut().iter_mut().zip(&grads.layers).enumerate() {
                    let m = &mut self.m[li];
                    let v = &mut self.v[li];
                    let nw = l.weights.len();
                    let update = |p: &mut f64, d: f64, m: &mut f64, v: &mut f64| {
                        *m = beta1 * *m + (1.0 - beta1) * d;
                        *v = beta2 * *v + (1.0 - beta2) * d * d;
                        let mh = *m / bc1;
                        let vh = *v / bc2;
                        *p -= lr * mh / (vh.sqrt() + eps);
                    };
                    for (k, (p, &d)) in l.weights.iter_mut().zip(&g.weights).enumerate() {
                        update(p, d, &mut m[k], &mut v[k]);
                    }
                    for (k, (p, &d)) in l.bias.iter_mut().zip(&g.bias).enumerate() {
                        update(p, d, &mut m[nw + k], &mut v[nw + k]);
                    }
                }
            }
        }
        Ok(())
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn single(weights: Vec<f64>, bias: Vec<f64>, inputs: usize, act: Activation) -> Mlp {
        let outputs = bias.len();
        Mlp::from_layers(vec![Layer {
            inputs,
            outputs,
            weights,
            bias,
            activation: act,
        }])
        .unwrap()
    }

    #[test]
    fn zero_weights_output_bias() {
        let net = single(vec![0.0; 6], vec![0.5, -1.5], 3, Activation::Linear);
        assert_eq!(net.predict(&[3.0, -7.0, 1.0]).unwrap(), vec![0.5, -1.5]);
    }

    #[test]
    fn identity_layer_passes_input() {
        let net = single(
            vec![1.0, 0.0, 0.0, 0.0, 1.0, 0.0, 0.0, 0.0, 1.0],
            vec![0.0; 3],
            3,
            Activation::Linear,
        );
        let x = [0.25, -3.0, 8.5];
        assert_eq!(net.predict(&x).unwrap(), x.to_vec());
    }

    #[test]
    fn dimension_mismatch_is_config_error() {
        let net = single(vec![0.0; 6], vec![0.0; 2], 3, Activation::Linear);
        assert!(matches!(net.forward(&[1.0]), Err(Error::Config(_))));
        let bad = Mlp::from_layers(vec![
            Layer::zeros(3, 4, Activation::Relu),
            Layer::zeros(5, 1, Activation::Linear),
        ]);
        assert!(matches!(bad, Err(Error::Config(_))));
    }

    #[test]
    fn linear_layer_weight_grad_is_outer_product() {
        let net = single(vec![0.3, -0.2, 0.7, 0.1, 0.4, -0.9], vec![0.0; 2], 3, Activation::Linear);
        let x = [1.5, -2.0, 0.5];
        let g = [0.7, -1.3];
        let (_, tape) = net.forward(&x).unwrap();
        let (dx, grads) = net.backward(&tape, &g).unwrap();
        for o in 0..2 {
            for i in 0..3 {
                assert_eq!(grads.layers[0].weights[o * 3 + i], g[o] * x[i]);
            }
            assert_eq!(grads.layers[0].bias[o], g[o]);
        }
        for i in 0..3 {
            let expect = net.layers()[0].weight(0, i) * g[0] + net.layers()[0].weight(1, i) * g[1];
            assert!((dx[i] - expect).abs() < 1e-15);
        }
    }

    #[test]
    fn relu_dead_unit_blocks_gradient() {
        let net = single(vec![1.0, -1.0], vec![0.0, 0.0], 1, Activation::Relu);
        let (out, tape) = net.forward(&[2.0]).unwrap();
        assert_eq!(out, vec![2.0, 0.0]);
        let (dx, grads) = net.backward(&tape, &[1.0, 1.0]).unwrap();
        assert_eq!(grads.layers[0].weights[1], 0.0);
        assert_eq!(grads.layers[0].bias[1], 0.0);
        assert_eq!(dx, vec![1.0]);
    }

    #[test]
    fn square_activation_value_and_derivative() {
        let net = single(vec![2.0], vec![1.0], 1, Activation::Square);
        let (out, tape) = net.forward(&[1.5]).unwrap();
        assert_eq!(out, vec![16.0]);
        let (dx, grads) = net.backward(&tape, &[1.0]).unwrap();
        // d/dz z² = 2z = 8, dz/dx = 2
        assert_eq!(grads.layers[0].bias[0], 8.0);
        assert_eq!(dx, vec![16.0]);
    }

    #[test]
    fn stale_tape_is_usage_error() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let mut net = Mlp::new(&[2, 3, 1], Activation::Tanh, Activation::Linear, &mut rng).unwrap();
        let other = net.clone();
        let (_, tape) = net.forward(&[0.1, 0.2]).unwrap();
        assert!(matches!(other.backward(&tape, &[1.0]), Err(Error::Usage(_))));
        let mut opt = OptimState::new(OptimConfig::Sgd { lr: 0.1 }).unwrap();
        let g = Grads::zeros_like(&net);
        opt.step(&mut net, &g).unwrap();
        assert!(matches!(net.backward(&tape, &[1.0]), Err(Error::Usage(_))));
    }

    #[test]
    fn sgd_step_definition() {
        let mut net = single(vec![1.0, 2.0], vec![3.0], 2, Activation::Linear);
        let grads = Grads {
            layers: vec![LayerGrad {
                weights: vec![0.5, -1.0],
                bias: vec![2.0],
            }],
        };
        let mut opt = OptimState::new(OptimConfig::Sgd { lr: 0.1 }).unwrap();
        opt.step(&mut net, &grads).unwrap();
        let p = net.flat_params();
        assert!((p[0] - 0.95).abs() < 1e-15);
        assert!((p[1] - 2.1).abs() < 1e-15);
        assert!((p[2] - 2.8).abs() < 1e-15);
    }

    #[test]
    fn zero_gradient_leaves_params() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let mut net = Mlp::new(&[3, 4, 2], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let before = net.flat_params();
        let g = Grads::zeros_like(&net);
        for cfg in [OptimConfig::Sgd { lr: 0.5 }, OptimConfig::adam(0.01)] {
            let mut opt = OptimState::new(cfg).unwrap();
            opt.step(&mut net, &g).unwrap();
            assert_eq!(net.flat_params(), before);
        }
    }

    #[test]
    fn non_finite_gradient_rejected() {
        let mut net = single(vec![1.0], vec![0.0], 1, Activation::Linear);
        let g = Grads {
            layers: vec![LayerGrad {
                weights: vec![f64::NAN],
                bias: vec![0.0],
            }],
        };
        let mut opt = OptimState::new(OptimConfig::adam(0.1)).unwrap();
        assert!(matches!(opt.step(&mut net, &g), Err(Error::Training(_))));
        assert_eq!(net.flat_params(), vec![1.0, 0.0]);
    }

    #[test]
    fn soft_update_cases() {
        let mut target = single(vec![0.0], vec![0.0], 1, Activation::Linear);
        let source = single(vec![2.0], vec![2.0], 1, Activation::Linear);
        target.soft_update_from(&source, 0.5).unwrap();
        assert_eq!(target.flat_params(), vec![1.0, 1.0]);
        target.soft_update_from(&source, 1.0).unwrap();
        assert_eq!(target.flat_params(), source.flat_params());
        assert!(matches!(target.soft_update_from(&source, 0.0), Err(Error::Config(_))));
        assert!(matches!(target.soft_update_from(&source, 1.5), Err(Error::Config(_))));
    }

    #[test]
    fn soft_update_geometric_convergence() {
        let mut target = single(vec![-3.0], vec![5.0], 1, Activation::Linear);
        let source = single(vec![1.0], vec![1.0], 1, Activation::Linear);
        let tau = 0.2;
        let d0 = [4.0, 4.0];
        for k in 1..=30 {
            target.soft_update_from(&source, tau).unwrap();
            let p = target.flat_params();
            let expect = (1.0f64 - tau).powi(k);
            assert!(((p[0] - 1.0).abs() - expect * d0[0]).abs() < 1e-12);
            assert!(((p[1] - 1.0).abs() - expect * d0[1]).abs() < 1e-12);
        }
    }

    #[test]
    fn checkpoint_round_trip_is_bit_exact() {
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let net = Mlp::new(&[5, 7, 3], Activation::Relu, Activation::Tanh, &mut rng).unwrap();
        let back = Mlp::from_checkpoint_json(&net.to_checkpoint_json()).unwrap();
        let a: Vec<u64> = net.flat_params().iter().map(|v| v.to_bits()).collect();
        let b: Vec<u64> = back.flat_params().iter().map(|v| v.to_bits()).collect();
        assert_eq!(a, b);
        assert_eq!(back.layers()[1].activation, Activation::Tanh);
    }

    #[test]
    fn glorot_bounds() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let net = Mlp::new(&[10, 6], Activation::Linear, Activation::Linear, &mut rng).unwrap();
        let limit = (6.0f64 / 16.0).sqrt();
        assert!(net.layers()[0].weights.iter().all(|w| w.abs() <= limit));
    }
}
