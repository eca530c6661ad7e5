//! The state-action encoder pair (online + EMA target) and the parametric
//! distance between encoded pairs.

use ndarray::Array2;
use rand_chacha::ChaCha8Rng;

use super::net::{Activation, DenseNet};
use crate::error::Result;

/// Norm threshold below which the angular term is defined to be zero.
pub const ZERO_NORM_GUARD: f64 = 1e-8;

/// Default stability constant added under the square root of the angular
/// distance.
pub const DEFAULT_KAPPA: f64 = 1e-6;

/// Online encoder and its EMA target copy. The encoder head is
/// layer-normalized and squashed with tanh.
#[derive(Debug, Clone, PartialEq)]
pub struct EncoderNetwork {
    pub online: DenseNet,
    pub target: DenseNet,
    pub output_dim: usize,
    /// Weight of the angular term in the parametric distance.
    pub beta: f64,
    /// Stability constant inside the angular square root.
    pub kappa: f64,
}

impl EncoderNetwork {
    pub fn new(
        input_dim: usize,
        hidden_dims: &[usize],
        output_dim: usize,
        beta: f64,
        kappa: f64,
        rng: &mut ChaCha8Rng,
    ) -> Result<Self> {
        let mut dims = vec![input_dim];
        dims.extend_from_slice(hidden_dims);
        dims.push(output_dim);
        let online = DenseNet::new(&dims, Activation::Tanh, true, rng)?;
        let target = online.clone();
        Ok(EncoderNetwork {
            online,
            target,
            output_dim,
            beta,
            kappa,
        })
    }

    /// Blend the target toward the online net: `target <- (1-tau)*target + tau*online`.
    pub fn ema_update(&mut self, tau: f64) -> Result<()> {
        self.target.ema_update_from(&self.online, tau)
    }

    /// Distance between two encoded pairs, online parameters on the first
    /// argument and target parameters on the second (the asymmetric form
    /// used during training).
    pub fn distance(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let u = self.online.forward_one(x1)?;
        let v = self.target.forward_one(x2)?;
        Ok(parametric_distance_from_embeddings(&u, &v, self.beta, self.kappa).value)
    }

    /// Distance with target parameters on both arguments (used inside
    /// bootstrap targets).
    pub fn target_distance(&self, x1: &[f64], x2: &[f64]) -> Result<f64> {
        let u = self.target.forward_one(x1)?;
        let v = self.target.forward_one(x2)?;
        Ok(parametric_distance_from_embeddings(&u, &v, self.beta, self.kappa).value)
    }

    /// Online embeddings for a batch of inputs.
    pub fn encode(&self, inputs: &Array2<f64>) -> Result<Array2<f64>> {
        self.online.forward(inputs)
    }
}

/// A computed parametric distance along with the pieces its gradient needs.
pub struct ParametricDistance {
    pub value: f64,
    /// d(value)/d(u), the gradient with respect to the first embedding.
    pub grad_u: Vec<f64>,
}

/// `(||u||^2 + ||v||^2) / 2 + beta * theta(u, v)` with
/// `theta = atan2(sqrt(1 - cs^2 + kappa), cs)` and the gradient taken with
/// respect to `u` only (the second argument carries target parameters).
pub fn parametric_distance_from_embeddings(
    u: &[f64],
    v: &[f64],
    beta: f64,
    kappa: f64,
) -> ParametricDistance {
    let norm_u_sq: f64 = u.iter().map(|a| a * a).sum();
    let norm_v_sq: f64 = v.iter().map(|a| a * a).sum();
    let norm_u = norm_u_sq.sqrt();
    let norm_v = norm_v_sq.sqrt();

    let base = 0.5 * (norm_u_sq + norm_v_sq);
    // grad of the base term wrt u is u itself
    let mut grad_u: Vec<f64> = u.to_vec();

    if norm_u < ZERO_NORM_GUARD || norm_v < ZERO_NORM_GUARD {
        // Degenerate embedding: angular term defined as zero.
        return ParametricDistance {
            value: base,
            grad_u,
        };
    }

    let dot: f64 = u.iter().zip(v.iter()).map(|(a, b)| a * b).sum();
    let cs = dot / (norm_u * norm_v);
    let root = (1.0 - cs * cs + kappa).max(0.0).sqrt();
    let theta = root.atan2(cs);

    // d theta / d cs = -1 / sqrt(1 - cs^2 + kappa); see atan2 partials with
    // y = sqrt(1 - cs^2 + kappa): (x^2 + y^2) = 1 + kappa, dy/dcs = -cs/y.
    let dtheta_dcs = if root > 0.0 { -1.0 / root } else { 0.0 };
    for (i, g) in grad_u.iter_mut().enumerate() {
        let dcs_dui = v[i] / (norm_u * norm_v) - cs * u[i] / norm_u_sq;
        *g += beta * dtheta_dcs * dcs_dui;
    }

    ParametricDistance {
        value: base + beta * theta,
        grad_u,
    }
}
