//! Experiment orchestration behind the `gapfill` binary.

pub mod commands;
pub mod config;
pub mod data;
pub mod downstream;
pub mod impute_bench;
pub mod output;

#[derive(Debug, thiserror::Error)]
pub enum BenchError {
    #[error("configuration error: {0}")]
    Config(String),
    #[error(transparent)]
    Core(#[from] gapfill::Error),
    #[error("i/o error: {0}")]
    Io(#[from] std::io::Error),
}

pub const EXIT_OK: i32 = 0;
pub const EXIT_FAILURE: i32 = 1;
pub const EXIT_CONFIG: i32 = 2;
pub const EXIT_PARTIAL: i32 = 3;

impl BenchError {
    pub fn exit_code(&self) -> i32 {
        match self {
            BenchError::Config(_)
            | BenchError::Core(gapfill::Error::Config(_))
            | BenchError::Core(gapfill::Error::Schema(_))
            | BenchError::Core(gapfill::Error::Dataset { .. }) => EXIT_CONFIG,
            _ => EXIT_FAILURE,
        }
    }
}
