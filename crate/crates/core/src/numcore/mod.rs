//! Minimal dense numeric kernel: rank-2 tensors, a reverse-mode tape,
//! Transformer encoder layers, AdamW, a finite-difference gradient checker
//! and the `CGW1` checkpoint format.
//!
//! Everything runs in `f64`; checkpoints store `f32`.

mod checkpoint;
mod encoder;
mod gradcheck;
mod graph;
mod optim;
mod params;
mod tensor;

pub use checkpoint::{
    load_checkpoint, read_checkpoint_from, write_checkpoint, write_checkpoint_to, CHECKPOINT_MAGIC,
};
pub use encoder::{
    attention_layer, encode, register_layer_norm, register_linear, EncoderConfig, EncoderParams,
    HiddenStates, LayerParams, INIT_STD,
};
pub use gradcheck::{compare_grads, grad_check, numeric_grads, relative_error, GradCheckReport, Objective};
pub use graph::{softmax_rows, Graph, NodeId, LAYER_NORM_EPS};
pub use optim::{optimizer_step, AdamWConfig, AdamWState};
pub use params::{Grads, ParamId, ParamStore};
pub use tensor::Tensor;
