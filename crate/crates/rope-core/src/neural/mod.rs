//! Feed-forward networks with reverse-mode gradients, the state-action
//! encoder trained by bootstrapped distance regression, and the fitted-Q
//! regression family with EMA target networks.

pub mod checkpoint;
mod encoder;
mod features;
mod loss;
mod net;
mod optim;
mod train;

pub use encoder::{
    parametric_distance_from_embeddings, EncoderNetwork, ParametricDistance, DEFAULT_KAPPA,
    ZERO_NORM_GUARD,
};
pub use features::FeatureMap;
pub use loss::{
    finite_difference_grads, fqe_loss, fqe_loss_grad, huber, huber_grad, max_relative_error,
    rope_loss, rope_loss_grad, weight_decay_grad, weight_decay_loss, FqeBatch, LossGrad, RopeBatch,
};
pub use net::{Activation, DenseNet, ForwardCache, Layer, NetGrads};
pub use optim::{Optimizer, OptimizerKind};
pub use train::{
    fqe_estimate, fqe_estimate_from_states, fqe_train, initial_weights, rope_train, FqeOutcome,
    LogRow, QInput, RopeOutcome, TrainConfig, TrainLog,
};
