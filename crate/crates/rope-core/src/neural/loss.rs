//! Training losses with analytic gradients, plus the central-difference
//! oracle used to verify them.

use ndarray::Array2;

use super::encoder::parametric_distance_from_embeddings;
use super::net::{DenseNet, NetGrads};
use crate::error::{Error, Result};

/// Huber loss of a residual: `r^2 / 2` inside `|r| <= delta`, linear with
/// slope `delta` outside.
pub fn huber(residual: f64, delta: f64) -> f64 {
    let a = residual.abs();
    if a <= delta {
        0.5 * residual * residual
    } else {
        delta * (a - 0.5 * delta)
    }
}

/// Derivative of [`huber`] with respect to the residual.
pub fn huber_grad(residual: f64, delta: f64) -> f64 {
    if residual.abs() <= delta {
        residual
    } else {
        delta * residual.signum()
    }
}

/// A fixed Q-regression batch: rows into a pair-input matrix and constant
/// regression targets (bootstrap already evaluated and, if enabled, clipped).
#[derive(Debug, Clone)]
pub struct FqeBatch {
    pub input_rows: Vec<usize>,
    pub targets: Vec<f64>,
}

fn gather_rows(pair_inputs: &Array2<f64>, rows: &[usize]) -> Array2<f64> {
    let mut out = Array2::zeros((rows.len(), pair_inputs.ncols()));
    for (i, &r) in rows.iter().enumerate() {
        out.row_mut(i).assign(&pair_inputs.row(r));
    }
    out
}

/// Mean Huber TD loss of `q_net` on a fixed batch.
pub fn fqe_loss(
    q_net: &DenseNet,
    pair_inputs: &Array2<f64>,
    batch: &FqeBatch,
    delta: f64,
) -> Result<f64> {
    if q_net.out_dim() != 1 {
        return Err(Error::dimension(
            "q network must have one output".to_string(),
        ));
    }
    let x = gather_rows(pair_inputs, &batch.input_rows);
    let preds = q_net.forward(&x)?;
    let n = batch.targets.len() as f64;
    Ok(batch
        .targets
        .iter()
        .zip(preds.column(0))
        .map(|(t, p)| huber(t - p, delta))
        .sum::<f64>()
        / n)
}

/// A loss value with its analytic gradient and the mean absolute model
/// output on the batch (mean `|q|` for Q-regression, mean distance for the
/// encoder), which the training loops log and watch for divergence.
pub struct LossGrad {
    pub loss: f64,
    pub grads: NetGrads,
    pub mean_abs_output: f64,
}

/// [`fqe_loss`] together with its analytic parameter gradient.
pub fn fqe_loss_grad(
    q_net: &DenseNet,
    pair_inputs: &Array2<f64>,
    batch: &FqeBatch,
    delta: f64,
) -> Result<LossGrad> {
    let x = gather_rows(pair_inputs, &batch.input_rows);
    let cache = q_net.forward_cached(&x)?;
    let n = batch.targets.len() as f64;
    let mut loss = 0.0;
    let mut mean_abs = 0.0;
    let mut grad_out = Array2::zeros((batch.targets.len(), 1));
    for (i, t) in batch.targets.iter().enumerate() {
        let pred = cache.output[[i, 0]];
        let residual = t - pred;
        loss += huber(residual, delta);
        mean_abs += pred.abs();
        // d/d pred of huber(t - pred) is -huber'(residual)
        grad_out[[i, 0]] = -huber_grad(residual, delta) / n;
    }
    let (grads, _) = q_net.backward(&cache, &grad_out);
    Ok(LossGrad {
        loss: loss / n,
        grads,
        mean_abs_output: mean_abs / n,
    })
}

/// A fixed encoder-regression batch. Per element: the online-side input row,
/// the (constant) target-side embedding, and the (constant) bootstrapped
/// distance target.
#[derive(Debug, Clone)]
pub struct RopeBatch {
    pub x1_rows: Vec<usize>,
    /// Target-net embedding of the second pair, one row per element.
    pub target_embeddings: Array2<f64>,
    /// `|r1 - r2| + gamma * target distance of the successor pair`.
    pub bootstrap: Vec<f64>,
}

/// Mean Huber loss of the online encoder distance against bootstrapped
/// distance targets.
pub fn rope_loss(
    online: &DenseNet,
    pair_inputs: &Array2<f64>,
    batch: &RopeBatch,
    beta: f64,
    kappa: f64,
    delta: f64,
) -> Result<f64> {
    let x1 = gather_rows(pair_inputs, &batch.x1_rows);
    let u = online.forward(&x1)?;
    let n = batch.bootstrap.len() as f64;
    let mut loss = 0.0;
    for i in 0..batch.bootstrap.len() {
        let u_i = u.row(i);
        let v_i = batch.target_embeddings.row(i);
        let d = parametric_distance_from_embeddings(
            u_i.as_slice().expect("contiguous"),
            v_i.as_slice().expect("contiguous"),
            beta,
            kappa,
        );
        loss += huber(batch.bootstrap[i] - d.value, delta);
    }
    Ok(loss / n)
}

/// [`rope_loss`] together with its analytic gradient for the online encoder.
pub fn rope_loss_grad(
    online: &DenseNet,
    pair_inputs: &Array2<f64>,
    batch: &RopeBatch,
    beta: f64,
    kappa: f64,
    delta: f64,
) -> Result<LossGrad> {
    let x1 = gather_rows(pair_inputs, &batch.x1_rows);
    let cache = online.forward_cached(&x1)?;
    let n = batch.bootstrap.len() as f64;
    let mut loss = 0.0;
    let mut mean_abs = 0.0;
    let mut grad_out = Array2::zeros(cache.output.dim());
    for i in 0..batch.bootstrap.len() {
        let u_i = cache.output.row(i);
        let v_i = batch.target_embeddings.row(i);
        let d = parametric_distance_from_embeddings(
            u_i.as_slice().expect("contiguous"),
            v_i.as_slice().expect("contiguous"),
            beta,
            kappa,
        );
        let residual = batch.bootstrap[i] - d.value;
        loss += huber(residual, delta);
        mean_abs += d.value.abs();
        // d/d u of huber(c - d(u)) = -huber'(residual) * d d/d u
        let scale = -huber_grad(residual, delta) / n;
        for (j, g) in d.grad_u.iter().enumerate() {
            grad_out[[i, j]] = scale * g;
        }
    }
    let (grads, _) = online.backward(&cache, &grad_out);
    Ok(LossGrad {
        loss: loss / n,
        grads,
        mean_abs_output: mean_abs / n,
    })
}

/// Quadratic weight-decay penalty `decay / 2 * sum(w^2)` over weights only.
pub fn weight_decay_loss(net: &DenseNet, decay: f64) -> f64 {
    0.5 * decay
        * net
            .layers
            .iter()
            .map(|l| l.weight.iter().map(|w| w * w).sum::<f64>())
            .sum::<f64>()
}

/// Gradient of [`weight_decay_loss`]: `decay * w` per weight, zero biases.
pub fn weight_decay_grad(net: &DenseNet, decay: f64) -> NetGrads {
    let mut grads = NetGrads::zeros_like(net);
    for (g, l) in grads.weights.iter_mut().zip(&net.layers) {
        g.assign(&l.weight);
        g.mapv_inplace(|w| decay * w);
    }
    grads
}

/// Central-difference gradient of an arbitrary scalar function of the
/// network parameters. This is the verification oracle for the analytic
/// gradients; it never touches the reverse-mode path.
pub fn finite_difference_grads(net: &DenseNet, h: f64, f: impl Fn(&DenseNet) -> f64) -> NetGrads {
    let mut grads = NetGrads::zeros_like(net);
    let mut probe = net.clone();
    for li in 0..net.layers.len() {
        let (rows, cols) = net.layers[li].weight.dim();
        for r in 0..rows {
            for c in 0..cols {
                let orig = probe.layers[li].weight[[r, c]];
                probe.layers[li].weight[[r, c]] = orig + h;
                let up = f(&probe);
                probe.layers[li].weight[[r, c]] = orig - h;
                let down = f(&probe);
                probe.layers[li].weight[[r, c]] = orig;
                grads.weights[li][[r, c]] = (up - down) / (2.0 * h);
            }
        }
        for b in 0..net.layers[li].bias.len() {
            let orig = probe.layers[li].bias[b];
            probe.layers[li].bias[b] = orig + h;
            let up = f(&probe);
            probe.layers[li].bias[b] = orig - h;
            let down = f(&probe);
            probe.layers[li].bias[b] = orig;
            grads.biases[li][b] = (up - down) / (2.0 * h);
        }
    }
    grads
}

/// Largest relative error between two gradient sets, with an absolute floor
/// to keep near-zero components from exploding the ratio.
pub fn max_relative_error(a: &NetGrads, b: &NetGrads, floor: f64) -> f64 {
    let mut worst = 0.0_f64;
    let mut compare = |x: f64, y: f64| {
        let rel = (x - y).abs() / x.abs().max(y.abs()).max(floor);
        worst = worst.max(rel);
    };
    for (wa, wb) in a.weights.iter().zip(&b.weights) {
        for (&x, &y) in wa.iter().zip(wb.iter()) {
            compare(x, y);
        }
    }
    for (ba, bb) in a.biases.iter().zip(&b.biases) {
        for (&x, &y) in ba.iter().zip(bb.iter()) {
            compare(x, y);
        }
    }
    worst
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::neural::net::Activation;
    use rand::Rng;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    #[test]
    fn huber_values() {
        assert_eq!(huber(0.0, 1.0), 0.0);
        assert_eq!(huber(0.5, 1.0), 0.125);
        assert_eq!(huber(3.0, 1.0), 2.5);
        assert_eq!(huber(-3.0, 1.0), 2.5);
    }

    #[test]
    fn huber_grad_is_clamped() {
        assert_eq!(huber_grad(0.5, 1.0), 0.5);
        assert_eq!(huber_grad(3.0, 1.0), 1.0);
        assert_eq!(huber_grad(-3.0, 1.0), -1.0);
    }

    fn random_inputs(rng: &mut ChaCha8Rng, n: usize, dim: usize) -> Array2<f64> {
        Array2::from_shape_fn((n, dim), |_| rng.gen_range(-1.0..1.0))
    }

    #[test]
    fn fqe_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        for trial in 0..5 {
            let net = DenseNet::new(&[4, 8, 1], Activation::Identity, false, &mut rng).unwrap();
            let pair_inputs = random_inputs(&mut rng, 6, 4);
            let batch = FqeBatch {
                input_rows: vec![0, 2, 3, 5],
                targets: (0..4).map(|_| rng.gen_range(-1.0..1.0)).collect(),
            };
            let analytic = fqe_loss_grad(&net, &pair_inputs, &batch, 1.0).unwrap();
            let fd = finite_difference_grads(&net, 1e-6, |n| {
                fqe_loss(n, &pair_inputs, &batch, 1.0).unwrap()
            });
            let err = max_relative_error(&analytic.grads, &fd, 1e-6);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn rope_gradient_matches_finite_differences() {
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        for trial in 0..5 {
            let online = DenseNet::new(&[5, 8, 3], Activation::Tanh, true, &mut rng).unwrap();
            let pair_inputs = random_inputs(&mut rng, 6, 5);
            let batch = RopeBatch {
                x1_rows: vec![1, 4, 0],
                target_embeddings: random_inputs(&mut rng, 3, 3),
                bootstrap: (0..3).map(|_| rng.gen_range(0.0..2.0)).collect(),
            };
            let analytic = rope_loss_grad(&online, &pair_inputs, &batch, 1.0, 1e-6, 1.0).unwrap();
            let fd = finite_difference_grads(&online, 1e-6, |n| {
                rope_loss(n, &pair_inputs, &batch, 1.0, 1e-6, 1.0).unwrap()
            });
            let err = max_relative_error(&analytic.grads, &fd, 1e-6);
            assert!(err < 1e-4, "trial {trial}: rel err {err}");
        }
    }

    #[test]
    fn weight_decay_gradient_is_linear_in_weights() {
        let mut rng = ChaCha8Rng::seed_from_u64(7);
        let net = DenseNet::new(&[3, 4, 2], Activation::Relu, false, &mut rng).unwrap();
        let grads = weight_decay_grad(&net, 0.01);
        for (g, l) in grads.weights.iter().zip(&net.layers) {
            for (gv, wv) in g.iter().zip(l.weight.iter()) {
                assert!((gv - 0.01 * wv).abs() < 1e-15);
            }
        }
        let fd = finite_difference_grads(&net, 1e-6, |n| weight_decay_loss(n, 0.01));
        assert!(max_relative_error(&grads, &fd, 1e-6) < 1e-4);
    }

    #[test]
    fn zero_residuals_give_zero_gradient() {
        let mut rng = ChaCha8Rng::seed_from_u64(8);
        let net = DenseNet::new(&[3, 1], Activation::Identity, false, &mut rng).unwrap();
        let pair_inputs = random_inputs(&mut rng, 2, 3);
        // Targets equal to the predictions: residuals vanish.
        let preds = net.forward(&pair_inputs).unwrap();
        let batch = FqeBatch {
            input_rows: vec![0, 1],
            targets: preds.column(0).to_vec(),
        };
        let out = fqe_loss_grad(&net, &pair_inputs, &batch, 1.0).unwrap();
        assert_eq!(out.loss, 0.0);
        assert!(out.grads.norm() == 0.0);
    }
}
