//! Dataset adapters and synthetic generators.

pub mod e4;
mod manifest;
mod novartis;
mod synthetic;
mod ucihar;
mod wesad;

pub use manifest::{scaled_train_count, split_subjects, ChannelSchema, DatasetManifest, SplitKind};
pub use novartis::{
    load_novartis, missingness_summary, split_days, ChannelMissingness, NovartisData, NOVARTIS_CHANNELS,
    NOVARTIS_RATE_HZ, SAMPLES_PER_DAY,
};
pub use synthetic::{
    generate_har, generate_har_frames, generate_synthetic, ChannelGenerator, DynamicLatent, HarSpec,
    SyntheticChannel, SyntheticSpec, HAR_CHANNELS, HAR_CLASSES,
};
pub use ucihar::{
    load_ucihar, preprocess_inertial, subject_name, UciHarData, UCIHAR_CANONICAL_TEST, UCIHAR_RATE_HZ,
    UCIHAR_STRIDE, UCIHAR_WINDOW,
};
pub use wesad::{
    load_wesad, load_wesad_subject, WesadData, WesadTask, WESAD_BINARY_CLASSES, WESAD_CHANNELS, WESAD_CLASSES,
    WESAD_RATE_HZ, WESAD_STRIDE, WESAD_WINDOW,
};
