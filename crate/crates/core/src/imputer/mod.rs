//! Masked-reconstruction transformer imputer.

mod config;
mod impute;
mod model;
mod train;

pub use config::{ImputerConfig, LossScope, MaskToken, TrainMaskPolicy};
pub use impute::plan_windows;
pub use model::{masked_mse, Forward, ImputerModel};
pub(crate) use model::idle_rng;
pub use train::{
    batch_loss, loss_curve_csv, prepare_batch, sample_train_mask, segments_from_frames, train,
    EpochLoss, PreparedBatch, Segment, TrainOptions,
};
