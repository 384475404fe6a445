//! Minimal reverse-mode autodiff in 64-bit floats.

mod checkpoint;
mod gradcheck;
mod layers;
mod param;
mod tape;
mod tensor;

pub use checkpoint::{
    load_checkpoint, read_checkpoint, write_checkpoint, CheckpointEntry, CHECKPOINT_MAGIC, CHECKPOINT_VERSION,
};
pub use gradcheck::{grad_check, relative_error, GradCheckOptions, GradCheckReport};
pub use layers::{causal_mask, LayerNorm, Linear, Mlp, MultiHeadAttention};
pub use param::{Adam, Init, ParamId, ParamStore, Parameter};
pub use tape::{Gradients, Tape, Var, LAYER_NORM_EPS};
pub use tensor::Tensor;
