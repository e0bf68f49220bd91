//! Fully connected network with hand-written forward and backward passes.
//!
//! Gradients are exposed for every parameter and for the input vector; the
//! input gradient is how a latent embedding concatenated onto the input gets
//! its update.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{usage, Error, Result};
use crate::numerics::{self, all_finite};
use crate::serial::FORMAT_VERSION;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Tanh,
    Relu,
    Identity,
}

impl Activation {
    fn apply(self, x: f64) -> f64 {
        match self {
            Activation::Tanh => x.tanh(),
            Activation::Relu => x.max(0.0),
            Activation::Identity => x,
        }
    }

    /// Derivative expressed through the pre-activation and the activation.
    fn derivative(self, pre: f64, post: f64) -> f64 {
        match self {
            Activation::Tanh => 1.0 - post * post,
            Activation::Relu => {
                if pre > 0.0 {
                    1.0
                } else {
                    0.0
                }
            }
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Head {
    Softmax,
    Identity,
}

/// How the final layer's weights start out.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum OutputInit {
    /// Same fan-scaled uniform draw as hidden layers.
    Uniform,
    /// All zero; the untrained network is indifferent between outputs.
    Zero,
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    pub in_dim: usize,
    pub out_dim: usize,
    /// Row-major, `out_dim × in_dim`.
    pub weights: Vec<f64>,
    pub biases: Vec<f64>,
    pub activation: Activation,
}

impl Layer {
    fn row(&self, o: usize) -> &[f64] {
        &self.weights[o * self.in_dim..(o + 1) * self.in_dim]
    }
}

/// Network parameters: a chain of dense layers followed by an output head.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(into = "NetworkDoc", try_from = "NetworkDoc")]
pub struct Mlp {
    layers: Vec<Layer>,
    head: Head,
}

/// Fan-scaled uniform bound √(6/(in+out)).
pub fn glorot_bound(in_dim: usize, out_dim: usize) -> f64 {
    (6.0 / (in_dim + out_dim) as f64).sqrt()
}

impl Mlp {
    /// `dims` lists every width from input to output. Hidden layers use
    /// `hidden`; the last layer is linear and feeds `head`.
    pub fn new<R: Rng>(
        dims: &[usize],
        hidden: Activation,
        head: Head,
        output_init: OutputInit,
        rng: &mut R,
    ) -> Result<Self> {
        if dims.len() < 2 || dims.iter().any(|&d| d == 0) {
            return usage(format!("invalid layer dims {dims:?}"));
        }
        let n = dims.len() - 1;
        let layers = (0..n)
            .map(|l| {
                let (i, o) = (dims[l], dims[l + 1]);
                let last = l + 1 == n;
                let bound = glorot_bound(i, o);
                let weights = if last && output_init == OutputInit::Zero {
                    vec![0.0; i * o]
                } else {
                    (0..i * o).map(|_| rng.gen_range(-bound..=bound)).collect()
                };
                Layer {
                    in_dim: i,
                    out_dim: o,
                    weights,
                    biases: vec![0.0; o],
                    activation: if last { Activation::Identity } else { hidden },
                }
            })
            .collect();
        Ok(Mlp { layers, head })
    }

    pub fn from_layers(layers: Vec<Layer>, head: Head) -> Result<Self> {
        if layers.is_empty() {
            return usage("network needs at least one layer");
        }
        for (l, layer) in layers.iter().enumerate() {
            if layer.weights.len() != layer.in_dim * layer.out_dim
                || layer.biases.len() != layer.out_dim
            {
                return usage(format!("layer {l} has inconsistent shapes"));
            }
            if l > 0 && layers[l - 1].out_dim != layer.in_dim {
                return usage(format!("layer {l} input does not chain from layer {}", l - 1));
            }
            if !all_finite(&layer.weights) || !all_finite(&layer.biases) {
                return Err(Error::Numeric(format!("layer {l} has non-finite parameters")));
            }
        }
        Ok(Mlp { layers, head })
    }

    pub fn layers(&self) -> &[Layer] {
        &self.layers
    }

    pub fn layers_mut(&mut self) -> &mut [Layer] {
        &mut self.layers
    }

    pub fn head(&self) -> Head {
        self.head
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn output_dim(&self) -> usize {
        self.layers[self.layers.len() - 1].out_dim
    }

    pub fn layer_dims(&self) -> Vec<usize> {
        let mut dims = vec![self.input_dim()];
        dims.extend(self.layers.iter().map(|l| l.out_dim));
        dims
    }

    pub fn num_params(&self) -> usize {
        self.layers.iter().map(|l| l.weights.len() + l.biases.len()).sum()
    }

    pub fn forward(&self, input: &[f64]) -> Result<(Vec<f64>, ForwardCache)> {
        if input.len() != self.input_dim() {
            return usage(format!(
                "input has length {}, network expects {}",
                input.len(),
                self.input_dim()
            ));
        }
        let mut activations = Vec::with_capacity(self.layers.len() + 1);
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        activations.push(input.to_vec());
        for layer in &self.layers {
            let x = activations.last().unwrap();
            let pre: Vec<f64> = (0..layer.out_dim)
                .map(|o| layer.biases[o] + numerics::dot(layer.row(o), x))
                .collect();
            let post: Vec<f64> = pre.iter().map(|&z| layer.activation.apply(z)).collect();
            pre_activations.push(pre);
            activations.push(post);
        }
        let last = activations.last().unwrap();
        let output = match self.head {
            Head::Identity => last.clone(),
            Head::Softmax => numerics::softmax(last)?.into_inner(),
        };
        Ok((
            output.clone(),
            ForwardCache {
                pre_activations,
                activations,
                output,
            },
        ))
    }

    /// Gradients of a scalar loss given `grad_output = ∂loss/∂output`, where
    /// the output is taken after the head.
    pub fn backward(&self, cache: &ForwardCache, grad_output: &[f64]) -> Result<(MlpGrads, Vec<f64>)> {
        let mut grads = MlpGrads::zeros_like(self);
        let input_grad = self.backward_into(cache, grad_output, &mut grads)?;
        Ok((grads, input_grad))
    }

    /// As [`Mlp::backward`], accumulating parameter gradients into `grads`.
    pub fn backward_into(
        &self,
        cache: &ForwardCache,
        grad_output: &[f64],
        grads: &mut MlpGrads,
    ) -> Result<Vec<f64>> {
        self.check_cache(cache)?;
        if grad_output.len() != self.output_dim() {
            return usage(format!(
                "output gradient has length {}, network emits {}",
                grad_output.len(),
                self.output_dim()
            ));
        }
        let mut delta: Vec<f64> = match self.head {
            Head::Identity => grad_output.to_vec(),
            Head::Softmax => {
                let p = &cache.output;
                let inner = numerics::dot(grad_output, p);
                p.iter().zip(grad_output).map(|(pi, gi)| pi * (gi - inner)).collect()
            }
        };
        for (l, layer) in self.layers.iter().enumerate().rev() {
            let pre = &cache.pre_activations[l];
            let post = &cache.activations[l + 1];
            for o in 0..layer.out_dim {
                delta[o] *= layer.activation.derivative(pre[o], post[o]);
            }
            let x = &cache.activations[l];
            let gw = &mut grads.weights[l];
            let gb = &mut grads.biases[l];
            let mut next = vec![0.0; layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == 0.0 {
                    continue;
                }
                gb[o] += d;
                let row = layer.row(o);
                let grow = &mut gw[o * layer.in_dim..(o + 1) * layer.in_dim];
                for i in 0..layer.in_dim {
                    grow[i] += d * x[i];
                    next[i] += row[i] * d;
                }
            }
            delta = next;
        }
        Ok(delta)
    }

    fn check_cache(&self, cache: &ForwardCache) -> Result<()> {
        let ok = cache.pre_activations.len() == self.layers.len()
            && cache.activations.len() == self.layers.len() + 1
            && self
                .layers
                .iter()
                .zip(&cache.pre_activations)
                .all(|(l, p)| p.len() == l.out_dim)
            && cache.activations[0].len() == self.input_dim();
        if ok {
            Ok(())
        } else {
            usage("forward cache does not match this network")
        }
    }

    /// `params ← params − lr·grads`, in place.
    pub fn sgd_step(&mut self, grads: &MlpGrads, learning_rate: f64) -> Result<()> {
        if !(learning_rate > 0.0) {
            return usage(format!("learning rate {learning_rate} must be positive"));
        }
        if !grads.matches(self) {
            return usage("gradient shapes do not match the network");
        }
        for (l, layer) in self.layers.iter_mut().enumerate() {
            for (w, g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                *w -= learning_rate * g;
            }
            for (b, g) in layer.biases.iter_mut().zip(&grads.biases[l]) {
                *b -= learning_rate * g;
            }
        }
        Ok(())
    }

    /// All parameters, layer by layer, weights before biases.
    pub fn flat_params(&self) -> Vec<f64> {
        let mut out = Vec::with_capacity(self.num_params());
        for l in &self.layers {
            out.extend_from_slice(&l.weights);
            out.extend_from_slice(&l.biases);
        }
        out
    }

    pub fn set_flat_params(&mut self, flat: &[f64]) -> Result<()> {
        if flat.len() != self.num_params() {
            return usage("flat parameter length mismatch");
        }
        let mut at = 0;
        for l in &mut self.layers {
            let nw = l.weights.len();
            l.weights.copy_from_slice(&flat[at..at + nw]);
            at += nw;
            let nb = l.biases.len();
            l.biases.copy_from_slice(&flat[at..at + nb]);
            at += nb;
        }
        Ok(())
    }
}

/// Intermediate values kept from a forward pass for the backward pass.
#[derive(Debug, Clone)]
pub struct ForwardCache {
    pub pre_activations: Vec<Vec<f64>>,
    /// Layer inputs; `activations[0]` is the network input.
    pub activations: Vec<Vec<f64>>,
    pub output: Vec<f64>,
}

/// Parameter gradients shaped like an [`Mlp`].
#[derive(Debug, Clone, PartialEq)]
pub struct MlpGrads {
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl MlpGrads {
    pub fn zeros_like(net: &Mlp) -> Self {
        MlpGrads {
            weights: net.layers.iter().map(|l| vec![0.0; l.weights.len()]).collect(),
            biases: net.layers.iter().map(|l| vec![0.0; l.biases.len()]).collect(),
        }
    }

    fn matches(&self, net: &Mlp) -> bool {
        self.weights.len() == net.layers.len()
            && net
                .layers
                .iter()
                .enumerate()
                .all(|(l, layer)| {
                    self.weights[l].len() == layer.weights.len()
                        && self.biases[l].len() == layer.biases.len()
                })
    }

    pub fn fill_zero(&mut self) {
        self.weights.iter_mut().chain(self.biases.iter_mut()).for_each(|v| v.fill(0.0));
    }

    pub fn scale(&mut self, factor: f64) {
        self.weights
            .iter_mut()
            .chain(self.biases.iter_mut())
            .flat_map(|v| v.iter_mut())
            .for_each(|x| *x *= factor);
    }

    pub fn norm(&self) -> f64 {
        self.weights
            .iter()
            .chain(self.biases.iter())
            .flat_map(|v| v.iter())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn is_zero(&self) -> bool {
        self.weights.iter().chain(self.biases.iter()).flatten().all(|&x| x == 0.0)
    }

    /// Same ordering as [`Mlp::flat_params`].
    pub fn flatten(&self) -> Vec<f64> {
        let mut out = Vec::new();
        for (w, b) in self.weights.iter().zip(&self.biases) {
            out.extend_from_slice(w);
            out.extend_from_slice(b);
        }
        out
    }
}

/// On-disk layout of a network.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub struct NetworkDoc {
    pub format_version: u32,
    pub layer_dims: Vec<usize>,
    pub activations: Vec<Activation>,
    pub head: Head,
    pub weights: Vec<Vec<f64>>,
    pub biases: Vec<Vec<f64>>,
}

impl From<Mlp> for NetworkDoc {
    fn from(net: Mlp) -> Self {
        NetworkDoc {
            format_version: FORMAT_VERSION,
            layer_dims: net.layer_dims(),
            activations: net.layers.iter().map(|l| l.activation).collect(),
            head: net.head,
            weights: net.layers.iter().map(|l| l.weights.clone()).collect(),
            biases: net.layers.iter().map(|l| l.biases.clone()).collect(),
        }
    }
}

impl TryFrom<NetworkDoc> for Mlp {
    type Error = Error;

    fn try_from(doc: NetworkDoc) -> Result<Self> {
        if doc.format_version != FORMAT_VERSION {
            return Err(Error::Data(format!(
                "unsupported network format_version {}",
                doc.format_version
            )));
        }
        let n = doc.layer_dims.len().saturating_sub(1);
        if n == 0 || doc.activations.len() != n || doc.weights.len() != n || doc.biases.len() != n {
            return Err(Error::Data("network document has inconsistent layer counts".into()));
        }
        let layers = (0..n)
            .map(|l| Layer {
                in_dim: doc.layer_dims[l],
                out_dim: doc.layer_dims[l + 1],
                weights: doc.weights[l].clone(),
                biases: doc.biases[l].clone(),
                activation: doc.activations[l],
            })
            .collect();
        Mlp::from_layers(layers, doc.head).map_err(|e| Error::Data(e.to_string()))
    }
}
