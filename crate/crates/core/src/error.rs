use std::path::PathBuf;

use gapfill_tensor::EngineError;
use thiserror::Error;

#[derive(Debug, Error)]
pub enum Error {
    #[error(transparent)]
    Engine(#[from] EngineError),

    #[error("invalid frame: {0}")]
    Frame(String),

    #[error("filter: {0}")]
    Filter(String),

    #[error("resample: {0}")]
    Resample(String),

    #[error("channel `{0}` is constant or has fewer than 2 observed points; cannot standardize")]
    ConstantChannel(String),

    #[error("infeasible mask: {0}")]
    InfeasibleMask(String),

    #[error("mask plan does not match frame: {0}")]
    PlanMismatch(String),

    #[error("imputation: {0}")]
    Impute(String),

    #[error("metrics: {0}")]
    Metrics(String),

    #[error("config: {0}")]
    Config(String),

    #[error("schema: {0}")]
    Schema(String),

    #[error("dataset {}: {msg}", path.display())]
    Dataset { path: PathBuf, msg: String },

    #[error("training diverged at epoch {epoch} (diagnostic checkpoint: {checkpoint:?})")]
    Diverged {
        epoch: usize,
        checkpoint: Option<PathBuf>,
    },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Csv(#[from] csv::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
