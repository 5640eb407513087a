//! Minimal dense / locally connected network engine.
//!
//! Networks are a chain of [`LayerSpec`]s over flat per-sample vectors. Every
//! layer exposes exact reverse-mode gradients with respect to both its
//! parameters and its inputs, which is what the importance extraction relies on.

mod activation;
mod layer;
mod loss;
mod network;
mod optim;
mod tensor;
mod train;

pub use activation::{activation, Activation, ELU_ALPHA};
pub use layer::{Gradients, LayerParams, LayerSpec, ModelState, NetworkSpec};
pub use loss::{auc, bce, loss, mse, LossKind, BCE_CLAMP};
pub use network::{backprop, backprop_rows, forward, forward_rows, input_gradients, Backprop};
pub use optim::{adam_step, AdamConfig};
pub use tensor::Tensor;
pub use train::{evaluate, fit, EpochRecord, FitOptions, MetricKind, TrainHistory};
