//! Patch-based transformer classifier for labelled windows.

mod config;
mod model;
mod train;

pub use config::{ClassifierConfig, Pooling};
pub use model::{instance_normalize, patchify, unpatchify, PatchClassifier, INSTANCE_NORM_EPS};
pub use train::{
    confusion_matrix, evaluate_with_imputation, mask_and_fill, train_classifier, train_loso, FoldResult,
    LosoOutcome, TrainedClassifier, WindowFill,
};
