//! Prediction-based scheme: a shared embedding + MLP trained with federated
//! averaging.
//!
//! Each client fits the model to `(bin index → aggregate)` pairs from its own
//! feature vector; the coordinator averages parameters every round. With a
//! quadratic loss the averaged model approximates the per-client mean for each
//! bin, so the global value is `N` times the prediction.

mod config;
mod net;
mod params;
mod train;

pub use config::{AccuracyPreset, ModelConfig, RoundReport, TrainConfig, FC_LAYERS};
pub use net::{forward, forward_normalized, loss_and_grad, Gradients};
pub use params::{fed_average, init_global, ModelParams, Tensor};
pub use train::{
    client_round_seed, default_client_seeds, derive_seed, evaluate_loss, local_max, local_train,
    predict_all, run_federated_training, run_federated_training_seeded, shared_label_scale,
    Convergence, CONVERGENCE_PATIENCE,
};

#[derive(Debug, Clone, PartialEq, thiserror::Error)]
pub enum ModelError {
    #[error("invalid configuration: {0}")]
    InvalidConfig(String),
    #[error("index {index} out of range for {len} bins")]
    IndexOutOfRange { index: usize, len: usize },
    #[error("loss is not finite; lower the learning rate")]
    NonFiniteLoss,
    #[error("shape mismatch: {0}")]
    ShapeMismatch(String),
    #[error("no parameter uploads")]
    NoUploads,
    #[error("cannot decode model parameters: {0}")]
    Decode(String),
}
