//! Dense feed-forward classifier with per-layer freezing.
//!
//! Weights are stored row-major with shape `(out_dim, in_dim)`. Hidden layers
//! use ReLU; the last layer is affine and produces the logits.

use std::path::Path;

use rand::distr::{Distribution, Uniform};
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::scalar::Real;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Activation {
    Relu,
    Identity,
}

impl Activation {
    fn apply<T: Real>(self, v: T) -> T {
        match self {
            Activation::Relu => v.max(T::zero()),
            Activation::Identity => v,
        }
    }

    /// Derivative given the pre-activation value.
    fn derivative<T: Real>(self, pre: T) -> T {
        match self {
            Activation::Relu if pre > T::zero() => T::one(),
            Activation::Relu => T::zero(),
            Activation::Identity => T::one(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Layer<T> {
    pub in_dim: usize,
    pub out_dim: usize,
    pub weights: Vec<T>,
    pub bias: Vec<T>,
    pub activation: Activation,
}

impl<T: Real> Layer<T> {
    pub fn new(
        in_dim: usize,
        out_dim: usize,
        weights: Vec<T>,
        bias: Vec<T>,
        activation: Activation,
    ) -> Result<Self> {
        if weights.len() != in_dim * out_dim || bias.len() != out_dim {
            return Err(Error::Dimension {
                expected: in_dim * out_dim,
                got: weights.len(),
            });
        }
        Ok(Layer {
            in_dim,
            out_dim,
            weights,
            bias,
            activation,
        })
    }

    fn pre_activation(&self, x: &[T]) -> Vec<T> {
        self.weights
            .chunks_exact(self.in_dim)
            .zip(&self.bias)
            .map(|(row, &b)| row.iter().zip(x).fold(b, |acc, (&w, &v)| acc + w * v))
            .collect()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MlpModel<T> {
    pub layers: Vec<Layer<T>>,
    /// `true` keeps the layer's parameters fixed during training.
    pub freeze_mask: Vec<bool>,
}

/// Activations recorded during a forward pass: `inputs[l]` feeds layer `l`,
/// `pre[l]` is its pre-activation.
#[derive(Debug, Clone)]
pub struct Trace<T> {
    pub inputs: Vec<Vec<T>>,
    pub pre: Vec<Vec<T>>,
}

impl<T: Real> Trace<T> {
    pub fn logits(&self) -> &[T] {
        self.pre.last().expect("at least one layer")
    }
}

/// Parameter gradients with the same layout as the model's layers.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub weights: Vec<Vec<T>>,
    pub bias: Vec<Vec<T>>,
}

impl<T: Real> Gradients<T> {
    pub fn zeros_like(m: &MlpModel<T>) -> Self {
        Gradients {
            weights: m
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.weights.len()])
                .collect(),
            bias: m
                .layers
                .iter()
                .map(|l| vec![T::zero(); l.bias.len()])
                .collect(),
        }
    }

    pub fn clear(&mut self) {
        self.weights
            .iter_mut()
            .flatten()
            .for_each(|g| *g = T::zero());
        self.bias.iter_mut().flatten().for_each(|g| *g = T::zero());
    }
}

impl<T: Real> MlpModel<T> {
    /// Builds a model from explicit layers; the last layer must be affine.
    pub fn from_layers(layers: Vec<Layer<T>>) -> Result<Self> {
        if layers.is_empty() {
            return Err(Error::Parameter("empty layer list".into()));
        }
        for pair in layers.windows(2) {
            if pair[0].out_dim != pair[1].in_dim {
                return Err(Error::Dimension {
                    expected: pair[0].out_dim,
                    got: pair[1].in_dim,
                });
            }
        }
        if layers.last().unwrap().activation != Activation::Identity {
            return Err(Error::Parameter("output layer must be affine".into()));
        }
        let n = layers.len();
        Ok(MlpModel {
            layers,
            freeze_mask: vec![false; n],
        })
    }

    pub fn input_dim(&self) -> usize {
        self.layers[0].in_dim
    }

    pub fn num_classes(&self) -> usize {
        self.layers.last().unwrap().out_dim
    }

    pub fn depth(&self) -> usize {
        self.layers.len()
    }

    /// Freezes every layer except the top `k`.
    pub fn train_top_layers(&mut self, k: usize) {
        let n = self.layers.len();
        for (i, f) in self.freeze_mask.iter_mut().enumerate() {
            *f = i + k < n;
        }
    }

    pub fn forward(&self, x: &[T]) -> Result<Vec<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut h = x.to_vec();
        for layer in &self.layers {
            h = layer
                .pre_activation(&h)
                .into_iter()
                .map(|v| layer.activation.apply(v))
                .collect();
        }
        Ok(h)
    }

    pub fn forward_trace(&self, x: &[T]) -> Result<Trace<T>> {
        if x.len() != self.input_dim() {
            return Err(Error::Dimension {
                expected: self.input_dim(),
                got: x.len(),
            });
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre = Vec::with_capacity(self.layers.len());
        let mut h = x.to_vec();
        for layer in &self.layers {
            let z = layer.pre_activation(&h);
            let next = z.iter().map(|&v| layer.activation.apply(v)).collect();
            inputs.push(h);
            pre.push(z);
            h = next;
        }
        Ok(Trace { inputs, pre })
    }

    /// Adds the parameter gradient for one sample to `acc`, given the
    /// gradient of the loss w.r.t. the logits. Gradients of frozen layers
    /// are still propagated through but not accumulated.
    pub fn backward(&self, trace: &Trace<T>, grad_logits: &[T], acc: &mut Gradients<T>) {
        let mut delta = grad_logits.to_vec();
        for l in (0..self.layers.len()).rev() {
            let layer = &self.layers[l];
            // delta is dL/d(post-activation); turn into dL/d(pre)
            for (d, &z) in delta.iter_mut().zip(&trace.pre[l]) {
                *d *= layer.activation.derivative(z);
            }
            let input = &trace.inputs[l];
            if !self.freeze_mask[l] {
                for (o, &d) in delta.iter().enumerate() {
                    if d == T::zero() {
                        continue;
                    }
                    let row = &mut acc.weights[l][o * layer.in_dim..(o + 1) * layer.in_dim];
                    for (g, &v) in row.iter_mut().zip(input) {
                        *g += d * v;
                    }
                    acc.bias[l][o] += d;
                }
            }
            if l == 0 || self.freeze_mask[..l].iter().all(|&f| f) {
                break;
            }
            let mut prev = vec![T::zero(); layer.in_dim];
            for (o, &d) in delta.iter().enumerate() {
                if d == T::zero() {
                    continue;
                }
                let row = &layer.weights[o * layer.in_dim..(o + 1) * layer.in_dim];
                for (p, &w) in prev.iter_mut().zip(row) {
                    *p += d * w;
                }
            }
            delta = prev;
        }
    }

    /// `w <- w - lr * g` on unfrozen layers.
    pub fn sgd_step(&mut self, grads: &Gradients<T>, lr: T) {
        for (l, layer) in self.layers.iter_mut().enumerate() {
            if self.freeze_mask[l] {
                continue;
            }
            for (w, &g) in layer.weights.iter_mut().zip(&grads.weights[l]) {
                *w -= lr * g;
            }
            for (b, &g) in layer.bias.iter_mut().zip(&grads.bias[l]) {
                *b -= lr * g;
            }
        }
    }

    pub fn save_json(&self, path: impl AsRef<Path>) -> Result<()> {
        let path = path.as_ref();
        let text = serde_json::to_string(self)?;
        std::fs::write(path, text).map_err(|e| Error::io(path, e))
    }

    pub fn load_json(path: impl AsRef<Path>) -> Result<Self> {
        let path = path.as_ref();
        let text = std::fs::read_to_string(path).map_err(|e| Error::io(path, e))?;
        let m: MlpModel<T> = serde_json::from_str(&text)?;
        let mask = m.freeze_mask.clone();
        let mut checked = MlpModel::from_layers(m.layers)?;
        if mask.len() == checked.layers.len() {
            checked.freeze_mask = mask;
        }
        Ok(checked)
    }
}

/// Seeded Glorot-uniform initialization, biases zero.
///
/// `sizes` lists every width from the input dimension to the class count,
/// so `[D, C]` is a linear classifier and `[D, H, C]` has one hidden layer.
pub fn init_model<T: Real>(sizes: &[usize], num_classes: usize, seed: u64) -> Result<MlpModel<T>> {
    if sizes.len() < 2 {
        return Err(Error::Parameter("empty layer list".into()));
    }
    if *sizes.last().unwrap() != num_classes {
        return Err(Error::Dimension {
            expected: num_classes,
            got: *sizes.last().unwrap(),
        });
    }
    if sizes.contains(&0) {
        return Err(Error::Parameter("layer width must be positive".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let n = sizes.len() - 1;
    let layers = sizes
        .windows(2)
        .enumerate()
        .map(|(i, w)| {
            let (fan_in, fan_out) = (w[0], w[1]);
            let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
            let dist = Uniform::new_inclusive(-limit, limit).expect("finite bounds");
            let weights = (0..fan_in * fan_out)
                .map(|_| T::lit(dist.sample(&mut rng)))
                .collect();
            let activation = if i + 1 == n {
                Activation::Identity
            } else {
                Activation::Relu
            };
            Layer::new(
                fan_in,
                fan_out,
                weights,
                vec![T::zero(); fan_out],
                activation,
            )
        })
        .collect::<Result<Vec<_>>>()?;
    MlpModel::from_layers(layers)
}
