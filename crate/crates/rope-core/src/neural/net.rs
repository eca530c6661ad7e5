//! Minimal dense feed-forward networks with reverse-mode gradients.
//!
//! Batches are row-major `Array2<f64>` with one sample per row. The backward
//! pass consumes the caches produced by [`DenseNet::forward_cached`] and
//! returns per-parameter gradient accumulators shaped like the network.

use ndarray::{Array1, Array2, Axis};
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

const LAYER_NORM_EPS: f64 = 1e-10;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Activation {
    Relu,
    Tanh,
    Identity,
}

impl Activation {
    fn apply(&self, z: f64) -> f64 {
        match self {
            Activation::Relu => z.max(0.0),
            Activation::Tanh => z.tanh(),
            Activation::Identity => z,
        }
    }

    /// Derivative expressed through the pre-activation `z`.
    fn derivative(&self, z: f64) -> f64 {
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
            Activation::Identity => 1.0,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct Layer {
    /// `(out_dim, in_dim)`.
    pub weight: Array2<f64>,
    pub bias: Array1<f64>,
    pub activation: Activation,
}

impl Layer {
    pub fn in_dim(&self) -> usize {
        self.weight.ncols()
    }

    pub fn out_dim(&self) -> usize {
        self.weight.nrows()
    }
}

/// A dense feed-forward network. With `layer_norm_head` set, the output of
/// the final affine layer is layer-normalized per sample before the final
/// activation is applied (the encoder head uses this with `Tanh`).
#[derive(Debug, Clone, PartialEq)]
pub struct DenseNet {
    pub layers: Vec<Layer>,
    pub layer_norm_head: bool,
}

/// Gradient accumulators matching a network's parameters.
#[derive(Debug, Clone)]
pub struct NetGrads {
    pub weights: Vec<Array2<f64>>,
    pub biases: Vec<Array1<f64>>,
}

impl NetGrads {
    pub fn zeros_like(net: &DenseNet) -> Self {
        NetGrads {
            weights: net
                .layers
                .iter()
                .map(|l| Array2::zeros(l.weight.dim()))
                .collect(),
            biases: net
                .layers
                .iter()
                .map(|l| Array1::zeros(l.bias.len()))
                .collect(),
        }
    }

    pub fn add_scaled(&mut self, other: &NetGrads, scale: f64) {
        for (a, b) in self.weights.iter_mut().zip(&other.weights) {
            a.scaled_add(scale, b);
        }
        for (a, b) in self.biases.iter_mut().zip(&other.biases) {
            a.scaled_add(scale, b);
        }
    }

    /// Global L2 norm over all parameters.
    pub fn norm(&self) -> f64 {
        let mut sq = 0.0;
        for w in &self.weights {
            sq += w.iter().map(|v| v * v).sum::<f64>();
        }
        for b in &self.biases {
            sq += b.iter().map(|v| v * v).sum::<f64>();
        }
        sq.sqrt()
    }

    pub fn scale(&mut self, factor: f64) {
        for w in &mut self.weights {
            w.mapv_inplace(|v| v * factor);
        }
        for b in &mut self.biases {
            b.mapv_inplace(|v| v * factor);
        }
    }
}

/// Intermediate values of one batch forward pass, consumed by `backward`.
pub struct ForwardCache {
    /// Input to each layer (first entry is the batch input).
    inputs: Vec<Array2<f64>>,
    /// Pre-activation of each layer.
    pre_activations: Vec<Array2<f64>>,
    /// Per-sample layer-norm state of the head, when enabled.
    norm: Option<NormCache>,
    pub output: Array2<f64>,
}

struct NormCache {
    /// Normalized pre-activations (input to the final activation).
    normalized: Array2<f64>,
    /// Per-sample `1 / sqrt(var + eps)`.
    inv_std: Vec<f64>,
}

impl DenseNet {
    /// Construct a new network with the given layer sizes, ReLU hidden
    /// activations, and `output_activation` on the head. Weights use scaled
    /// uniform initialization; biases start at zero.
    pub fn new(
        dims: &[usize],
        output_activation: Activation,
        layer_norm_head: bool,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        if dims.len() < 2 {
            return Err(Error::validation(
                "a network needs at least input and output dims".to_string(),
            ));
        }
        let mut layers = Vec::with_capacity(dims.len() - 1);
        for w in dims.windows(2) {
            let (in_dim, out_dim) = (w[0], w[1]);
            if in_dim == 0 || out_dim == 0 {
                return Err(Error::validation("layer dims must be positive".to_string()));
            }
            let bound = (6.0 / (in_dim + out_dim) as f64).sqrt();
            let weight = Array2::from_shape_fn((out_dim, in_dim), |_| rng.gen_range(-bound..bound));
            let is_last = layers.len() == dims.len() - 2;
            layers.push(Layer {
                weight,
                bias: Array1::zeros(out_dim),
                activation: if is_last {
                    output_activation
                } else {
                    Activation::Relu
                },
            });
        }
        Ok(DenseNet {
            layers,
            layer_norm_head,
        })
    }

    pub fn in_dim(&self) -> usize {
        self.layers.first().map(Layer::in_dim).unwrap_or(0)
    }

    pub fn out_dim(&self) -> usize {
        self.layers.last().map(Layer::out_dim).unwrap_or(0)
    }

    pub fn n_params(&self) -> usize {
        self.layers
            .iter()
            .map(|l| l.weight.len() + l.bias.len())
            .sum()
    }

    /// Layer dimensions `[in, hidden..., out]`.
    pub fn dims(&self) -> Vec<usize> {
        let mut dims = vec![self.in_dim()];
        dims.extend(self.layers.iter().map(Layer::out_dim));
        dims
    }

    pub fn check_finite(&self) -> Result<()> {
        for (i, l) in self.layers.iter().enumerate() {
            if l.weight.iter().chain(l.bias.iter()).any(|v| !v.is_finite()) {
                return Err(Error::validation(format!(
                    "layer {i} holds non-finite parameters"
                )));
            }
        }
        Ok(())
    }

    /// Forward pass over a batch (rows are samples).
    pub fn forward(&self, x: &Array2<f64>) -> Result<Array2<f64>> {
        Ok(self.forward_cached(x)?.output)
    }

    /// Forward pass for a single sample.
    pub fn forward_one(&self, x: &[f64]) -> Result<Vec<f64>> {
        let batch = Array2::from_shape_vec((1, x.len()), x.to_vec())
            .map_err(|e| Error::dimension(e.to_string()))?;
        Ok(self.forward(&batch)?.row(0).to_vec())
    }

    /// Forward pass that records what the backward pass needs.
    pub fn forward_cached(&self, x: &Array2<f64>) -> Result<ForwardCache> {
        if x.ncols() != self.in_dim() {
            return Err(Error::dimension(format!(
                "input has {} features, network expects {}",
                x.ncols(),
                self.in_dim()
            )));
        }
        let mut inputs = Vec::with_capacity(self.layers.len());
        let mut pre_activations = Vec::with_capacity(self.layers.len());
        let mut current = x.clone();
        let mut norm = None;

        for (i, layer) in self.layers.iter().enumerate() {
            let z = current.dot(&layer.weight.t()) + &layer.bias;
            inputs.push(current);
            let is_head = i == self.layers.len() - 1;
            let act_input = if is_head && self.layer_norm_head {
                let (normalized, inv_std) = layer_norm(&z);
                norm = Some(NormCache {
                    normalized: normalized.clone(),
                    inv_std,
                });
                normalized
            } else {
                z.clone()
            };
            pre_activations.push(z);
            current = act_input.mapv(|v| layer.activation.apply(v));
        }
        if current.iter().any(|v| !v.is_finite()) {
            return Err(Error::validation(
                "forward pass produced non-finite outputs".to_string(),
            ));
        }
        Ok(ForwardCache {
            inputs,
            pre_activations,
            norm,
            output: current,
        })
    }

    /// Reverse-mode pass: given `d(loss)/d(output)` for the batch, return
    /// parameter gradients and `d(loss)/d(input)`.
    pub fn backward(
        &self,
        cache: &ForwardCache,
        grad_output: &Array2<f64>,
    ) -> (NetGrads, Array2<f64>) {
        let mut grads = NetGrads::zeros_like(self);
        let mut upstream = grad_output.clone();

        for (i, layer) in self.layers.iter().enumerate().rev() {
            let is_head = i == self.layers.len() - 1;
            let z = &cache.pre_activations[i];

            // Through the activation.
            let dz = if is_head && self.layer_norm_head {
                let norm = cache.norm.as_ref().expect("cache built with norm head");
                let d_act = norm.normalized.mapv(|v| layer.activation.derivative(v));
                let d_normalized = &upstream * &d_act;
                layer_norm_backward(&d_normalized, norm)
            } else {
                let d_act = z.mapv(|v| layer.activation.derivative(v));
                &upstream * &d_act
            };

            // Affine: z = input . W^T + b
            let input = &cache.inputs[i];
            grads.weights[i] = dz.t().dot(input);
            grads.biases[i] = dz.sum_axis(Axis(0));
            upstream = dz.dot(&layer.weight);
        }
        (grads, upstream)
    }

    /// In-place gradient step `p -= lr * g` with decoupled weight decay
    /// `p -= lr * decay * p` applied to weights only.
    pub fn apply_step(&mut self, grads: &NetGrads, lr: f64, weight_decay: f64) {
        for (layer, (gw, gb)) in self
            .layers
            .iter_mut()
            .zip(grads.weights.iter().zip(grads.biases.iter()))
        {
            if weight_decay > 0.0 {
                let decay = lr * weight_decay;
                layer.weight.mapv_inplace(|v| v - decay * v);
            }
            layer.weight.scaled_add(-lr, gw);
            layer.bias.scaled_add(-lr, gb);
        }
    }

    /// Blend `target <- (1 - tau) * target + tau * online`, per parameter.
    pub fn ema_update_from(&mut self, online: &DenseNet, tau: f64) -> Result<()> {
        if self.dims() != online.dims() {
            return Err(Error::dimension(
                "EMA update requires identical shapes".to_string(),
            ));
        }
        for (t, o) in self.layers.iter_mut().zip(&online.layers) {
            t.weight.zip_mut_with(&o.weight, |tv, &ov| {
                *tv = (1.0 - tau) * *tv + tau * ov;
            });
            t.bias.zip_mut_with(&o.bias, |tv, &ov| {
                *tv = (1.0 - tau) * *tv + tau * ov;
            });
        }
        Ok(())
    }

    /// Order-stable checksum over all parameters (frozen-encoder contract).
    pub fn param_checksum(&self) -> u64 {
        let mut hash = 0xcbf2_9ce4_8422_2325_u64;
        for l in &self.layers {
            for v in l.weight.iter().chain(l.bias.iter()) {
                hash ^= v.to_bits();
                hash = hash.wrapping_mul(0x0000_0100_0000_01b3);
            }
        }
        hash
    }
}

/// Per-sample layer normalization without learnable scale/shift.
fn layer_norm(z: &Array2<f64>) -> (Array2<f64>, Vec<f64>) {
    let d = z.ncols() as f64;
    let mut out = z.clone();
    let mut inv_stds = Vec::with_capacity(z.nrows());
    for mut row in out.rows_mut() {
        let mean = row.sum() / d;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / d;
        let inv_std = 1.0 / (var + LAYER_NORM_EPS).sqrt();
        row.mapv_inplace(|v| (v - mean) * inv_std);
        inv_stds.push(inv_std);
    }
    (out, inv_stds)
}

/// Backward through per-sample layer normalization.
fn layer_norm_backward(d_normalized: &Array2<f64>, cache: &NormCache) -> Array2<f64> {
    let d = d_normalized.ncols() as f64;
    let mut out = Array2::zeros(d_normalized.dim());
    for (i, (dn_row, xhat_row)) in d_normalized
        .rows()
        .into_iter()
        .zip(cache.normalized.rows())
        .enumerate()
    {
        let mean_dn = dn_row.sum() / d;
        let mean_dn_xhat = dn_row
            .iter()
            .zip(xhat_row.iter())
            .map(|(a, b)| a * b)
            .sum::<f64>()
            / d;
        let inv_std = cache.inv_std[i];
        for (j, o) in out.row_mut(i).iter_mut().enumerate() {
            *o = inv_std * (dn_row[j] - mean_dn - xhat_row[j] * mean_dn_xhat);
        }
    }
    out
}
