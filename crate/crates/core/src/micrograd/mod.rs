//! Small dense-math kernel: rank-2 `f64` tensors, hand-written reverse
//! rules for the handful of ops the networks need, and AdamW.

mod adamw;
mod layers;
pub mod ops;
mod tensor;

pub use adamw::AdamW;
pub use layers::{copy_params, time_embedding, LayerNorm, Linear, Mlp, MlpCache, Module};
pub use tensor::Tensor;
