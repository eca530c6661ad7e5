//! Gradient-step application: plain SGD by default, Adam-style moment
//! estimation as an option. Weight decay is decoupled from the loss gradient
//! in both modes, and gradients are clipped by global norm first.

use serde::{Deserialize, Serialize};

use super::net::{DenseNet, NetGrads};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum OptimizerKind {
    Sgd,
    Adam,
}

pub struct Optimizer {
    kind: OptimizerKind,
    lr: f64,
    weight_decay: f64,
    clip_norm: f64,
    // Adam state
    m: Option<NetGrads>,
    v: Option<NetGrads>,
    t: usize,
}

const ADAM_BETA1: f64 = 0.9;
const ADAM_BETA2: f64 = 0.999;
const ADAM_EPS: f64 = 1e-8;

impl Optimizer {
    pub fn new(kind: OptimizerKind, lr: f64, weight_decay: f64, clip_norm: f64) -> Self {
        Optimizer {
            kind,
            lr,
            weight_decay,
            clip_norm,
            m: None,
            v: None,
            t: 0,
        }
    }

    pub fn step(&mut self, net: &mut DenseNet, mut grads: NetGrads) {
        if self.clip_norm > 0.0 {
            let norm = grads.norm();
            if norm > self.clip_norm {
                grads.scale(self.clip_norm / norm);
            }
        }
        match self.kind {
            OptimizerKind::Sgd => {
                net.apply_step(&grads, self.lr, self.weight_decay);
            }
            OptimizerKind::Adam => {
                self.t += 1;
                let m = self.m.get_or_insert_with(|| NetGrads::zeros_like(net));
                let v = self.v.get_or_insert_with(|| NetGrads::zeros_like(net));
                let bias1 = 1.0 - ADAM_BETA1.powi(self.t as i32);
                let bias2 = 1.0 - ADAM_BETA2.powi(self.t as i32);
                let mut update = NetGrads::zeros_like(net);
                for li in 0..grads.weights.len() {
                    adam_blend(
                        &mut m.weights[li],
                        &mut v.weights[li],
                        &grads.weights[li],
                        &mut update.weights[li],
                        bias1,
                        bias2,
                    );
                    adam_blend_1d(
                        &mut m.biases[li],
                        &mut v.biases[li],
                        &grads.biases[li],
                        &mut update.biases[li],
                        bias1,
                        bias2,
                    );
                }
                net.apply_step(&update, self.lr, self.weight_decay);
            }
        }
    }
}

fn adam_blend(
    m: &mut ndarray::Array2<f64>,
    v: &mut ndarray::Array2<f64>,
    g: &ndarray::Array2<f64>,
    out: &mut ndarray::Array2<f64>,
    bias1: f64,
    bias2: f64,
) {
    ndarray::Zip::from(out)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|o, m, v, &g| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *o = m_hat / (v_hat.sqrt() + ADAM_EPS);
        });
}

fn adam_blend_1d(
    m: &mut ndarray::Array1<f64>,
    v: &mut ndarray::Array1<f64>,
    g: &ndarray::Array1<f64>,
    out: &mut ndarray::Array1<f64>,
    bias1: f64,
    bias2: f64,
) {
    ndarray::Zip::from(out)
        .and(m)
        .and(v)
        .and(g)
        .for_each(|o, m, v, &g| {
            *m = ADAM_BETA1 * *m + (1.0 - ADAM_BETA1) * g;
            *v = ADAM_BETA2 * *v + (1.0 - ADAM_BETA2) * g * g;
            let m_hat = *m / bias1;
            let v_hat = *v / bias2;
            *o = m_hat / (v_hat.sqrt() + ADAM_EPS);
        });
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::net::Activation;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn sgd_step_moves_against_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(0);
        let mut net = DenseNet::new(&[2, 1], Activation::Identity, false, &mut rng).unwrap();
        let w0 = net.layers[0].weight[[0, 0]];
        let mut grads = NetGrads::zeros_like(&net);
        grads.weights[0][[0, 0]] = 2.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 0.1, 0.0, 0.0);
        opt.step(&mut net, grads);
        assert!((net.layers[0].weight[[0, 0]] - (w0 - 0.2)).abs() < 1e-15);
    }

    #[test]
    fn clipping_caps_the_global_norm() {
        let mut rng = ChaCha8Rng::seed_from_u64(1);
        let mut net = DenseNet::new(&[2, 1], Activation::Identity, false, &mut rng).unwrap();
        let before = net.clone();
        let mut grads = NetGrads::zeros_like(&net);
        grads.weights[0][[0, 0]] = 100.0;
        let mut opt = Optimizer::new(OptimizerKind::Sgd, 1.0, 0.0, 10.0);
        opt.step(&mut net, grads);
        // Step magnitude equals lr * clipped norm = 10.
        let delta = (before.layers[0].weight[[0, 0]] - net.layers[0].weight[[0, 0]]).abs();
        assert!((delta - 10.0).abs() < 1e-12);
    }

    #[test]
    fn adam_first_step_is_lr_sized() {
        let mut rng = ChaCha8Rng::seed_from_u64(2);
        let mut net = DenseNet::new(&[2, 1], Activation::Identity, false, &mut rng).unwrap();
        let w0 = net.layers[0].weight[[0, 0]];
        let mut grads = NetGrads::zeros_like(&net);
        grads.weights[0][[0, 0]] = 3.7;
        let mut opt = Optimizer::new(OptimizerKind::Adam, 0.01, 0.0, 0.0);
        opt.step(&mut net, grads);
        // Bias-corrected first Adam update is g / (|g| + eps) ~ sign(g).
        let delta = w0 - net.layers[0].weight[[0, 0]];
        assert!((delta - 0.01).abs() < 1e-6, "delta {delta}");
    }
}
