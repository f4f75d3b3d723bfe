//! Dense `f64` tensors, a define-by-run autodiff tape, Adam, and a weight
//! checkpoint container. Sized for the small transformer models in `gapfill`.

mod adam;
mod checkpoint;
mod error;
pub mod gradcheck;
mod kernels;
mod param;
mod tape;
mod tensor;

pub use adam::{AdamConfig, AdamState};
pub use checkpoint::{
    config_hash, load_checkpoint, read_checkpoint, save_checkpoint, write_checkpoint,
    CheckpointHeader, ENGINE_VERSION,
};
pub use error::{EngineError, Result};
pub use param::{ParamId, ParamStore};
pub use tape::{
    gelu, softmax, Gradients, RunningStats, Tape, Var, BATCH_NORM_EPS, BATCH_NORM_MOMENTUM,
    LAYER_NORM_EPS,
};
pub use tensor::Tensor;
