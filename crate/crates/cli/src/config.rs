//! Experiment configuration (TOML).

use std::path::{Path, PathBuf};

use gapfill::baselines::Strategy;
use gapfill::classifier::ClassifierConfig;
use gapfill::datasets::{HarSpec, WesadTask};
use gapfill::imputer::ImputerConfig;
use gapfill::masking::GapClasses;
use rand::{RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use sha2::{Digest, Sha256};

use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct RunSection {
    pub name: String,
    pub master_seed: u64,
    pub runs: usize,
    /// Output directory; `--out` overrides it.
    pub out: Option<PathBuf>,
}

impl Default for RunSection {
    fn default() -> Self {
        Self {
            name: "experiment".into(),
            master_seed: 0,
            runs: 100,
            out: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SyntheticPreset {
    /// HR/RESP/ACC-like, ST/BAR-like and Step-like channels.
    Wearable,
    /// Every channel a gain-scaled view of a shared sinusoid mixture.
    Sinusoid,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "source", rename_all = "snake_case", deny_unknown_fields)]
pub enum DataSection {
    Synthetic {
        preset: SyntheticPreset,
        #[serde(default)]
        seed: u64,
        /// Channel count of the sinusoid preset.
        #[serde(default = "default_sinusoid_channels")]
        n_channels: usize,
        /// Subjects (taken from the end of the list) held out for scoring.
        #[serde(default = "one")]
        test_subjects: usize,
        /// Overrides the preset's subject count.
        n_subjects: Option<usize>,
        /// Overrides the preset's recording days per subject.
        days_per_subject: Option<usize>,
    },
    /// Frame-exchange CSV at one reading per minute.
    Novartis {
        path: PathBuf,
        #[serde(default)]
        split_seed: u64,
        #[serde(default = "default_test_fraction")]
        test_fraction: f64,
    },
    HarSynthetic {
        #[serde(default)]
        spec: HarSpec,
        #[serde(default = "two")]
        test_subjects: usize,
    },
    Wesad {
        path: PathBuf,
        #[serde(default = "default_wesad_task")]
        task: WesadTask,
        #[serde(default)]
        test_subjects: Vec<String>,
        split_seed: Option<u64>,
    },
    Ucihar {
        path: PathBuf,
        split_seed: Option<u64>,
    },
}

fn default_sinusoid_channels() -> usize {
    4
}
fn one() -> usize {
    1
}
fn two() -> usize {
    2
}
fn default_test_fraction() -> f64 {
    0.25
}
fn default_wesad_task() -> WesadTask {
    WesadTask::ThreeClass
}

impl DataSection {
    pub fn is_windowed(&self) -> bool {
        matches!(self, DataSection::HarSynthetic { .. } | DataSection::Wesad { .. } | DataSection::Ucihar { .. })
    }

    pub fn path(&self) -> Option<&Path> {
        match self {
            DataSection::Novartis { path, .. } | DataSection::Wesad { path, .. } | DataSection::Ucihar { path, .. } => {
                Some(path)
            }
            _ => None,
        }
    }

    pub fn task_name(&self) -> &'static str {
        match self {
            DataSection::Synthetic { .. } => "synthetic",
            DataSection::Novartis { .. } => "novartis",
            DataSection::HarSynthetic { .. } => "har_synthetic",
            DataSection::Wesad { .. } => "wesad",
            DataSection::Ucihar { .. } => "ucihar",
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct BenchSection {
    pub strategies: Vec<Strategy>,
    /// Per-source table: fraction of each channel hidden per run.
    pub ratio: f64,
    pub gap_min: usize,
    pub gap_max: usize,
    pub classes: GapClasses,
    /// Per-length table: gaps per channel and length class.
    pub gaps_per_class: usize,
}

impl Default for BenchSection {
    fn default() -> Self {
        let mut strategies = Strategy::BASELINES.to_vec();
        strategies.push(Strategy::Transformer);
        Self {
            strategies,
            ratio: 0.1,
            gap_min: 1,
            gap_max: 120,
            classes: GapClasses::default(),
            gaps_per_class: 2,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainingSection {
    /// Stride between training segments cut from the training frames.
    pub segment_stride: usize,
    /// Pre-trained imputer to load instead of training one.
    pub imputer_checkpoint: Option<PathBuf>,
    /// Pre-trained classifier to load instead of running LOSO.
    pub classifier_checkpoint: Option<PathBuf>,
    pub log_every: usize,
}

impl Default for TrainingSection {
    fn default() -> Self {
        Self {
            segment_stride: 20,
            imputer_checkpoint: None,
            classifier_checkpoint: None,
            log_every: 10,
        }
    }
}

/// `none` or an imputation strategy.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum DownstreamStrategy {
    None,
    Impute(Strategy),
}

impl std::fmt::Display for DownstreamStrategy {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            DownstreamStrategy::None => f.write_str("none"),
            DownstreamStrategy::Impute(s) => s.fmt(f),
        }
    }
}

impl std::str::FromStr for DownstreamStrategy {
    type Err = gapfill::Error;
    fn from_str(s: &str) -> gapfill::Result<Self> {
        if s.eq_ignore_ascii_case("none") {
            Ok(DownstreamStrategy::None)
        } else {
            s.parse().map(DownstreamStrategy::Impute)
        }
    }
}

impl Serialize for DownstreamStrategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for DownstreamStrategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DownstreamSection {
    pub strategies: Vec<DownstreamStrategy>,
    pub rates: Vec<f64>,
    pub gap_min: usize,
    pub gap_max: usize,
}

impl Default for DownstreamSection {
    fn default() -> Self {
        Self {
            strategies: vec![
                DownstreamStrategy::None,
                DownstreamStrategy::Impute(Strategy::Mean),
                DownstreamStrategy::Impute(Strategy::Linear),
                DownstreamStrategy::Impute(Strategy::Transformer),
            ],
            rates: vec![0.0, 0.1, 0.2, 0.3, 0.4],
            gap_min: 8,
            gap_max: 32,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ExperimentConfig {
    #[serde(default)]
    pub run: RunSection,
    pub data: DataSection,
    #[serde(default)]
    pub bench: BenchSection,
    /// `n_channels` (and for windowed data `window_len`) come from the data.
    #[serde(default)]
    pub imputer: ImputerConfig,
    #[serde(default)]
    pub training: TrainingSection,
    /// Channel, length and class counts come from the data.
    #[serde(default)]
    pub classifier: ClassifierConfig,
    #[serde(default)]
    pub downstream: DownstreamSection,
}

impl ExperimentConfig {
    pub fn from_toml(text: &str) -> Result<Self, BenchError> {
        let cfg: Self = toml::from_str(text).map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(cfg)
    }

    pub fn load(path: &Path) -> Result<(Self, String), BenchError> {
        let text = std::fs::read_to_string(path)
            .map_err(|e| BenchError::Config(format!("cannot read {}: {e}", path.display())))?;
        Ok((Self::from_toml(&text)?, text))
    }

    /// Checks everything that can be checked without loading data.
    pub fn validate(&self) -> Result<(), BenchError> {
        let fail = |m: String| Err(BenchError::Config(m));
        if self.run.runs == 0 {
            return fail("run.runs must be at least 1".into());
        }
        if let Some(p) = self.data.path() {
            if !p.exists() {
                return fail(format!("dataset path {} does not exist", p.display()));
            }
        }
        let b = &self.bench;
        if b.strategies.is_empty() {
            return fail("bench.strategies is empty".into());
        }
        if !(0.0..1.0).contains(&b.ratio) || b.ratio == 0.0 {
            return fail(format!("bench.ratio {} must lie in (0, 1)", b.ratio));
        }
        if b.gap_min == 0 || b.gap_min > b.gap_max {
            return fail(format!("bench gap range [{}, {}] is invalid", b.gap_min, b.gap_max));
        }
        if b.gaps_per_class == 0 {
            return fail("bench.gaps_per_class must be at least 1".into());
        }
        b.classes.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        let d = &self.downstream;
        if d.strategies.is_empty() || d.rates.is_empty() {
            return fail("downstream strategies and rates must be non-empty".into());
        }
        for &r in &d.rates {
            if !(0.0..1.0).contains(&r) {
                return fail(format!("downstream rate {r} must lie in [0, 1)"));
            }
        }
        if d.gap_min == 0 || d.gap_min > d.gap_max {
            return fail(format!("downstream gap range [{}, {}] is invalid", d.gap_min, d.gap_max));
        }
        if self.training.segment_stride == 0 {
            return fail("training.segment_stride must be positive".into());
        }
        for p in [&self.training.imputer_checkpoint, &self.training.classifier_checkpoint]
            .into_iter()
            .flatten()
        {
            if !p.is_file() {
                return fail(format!("checkpoint {} does not exist", p.display()));
            }
        }
        let mut imp = self.imputer.clone();
        imp.n_channels = imp.n_channels.max(1);
        imp.validate().map_err(|e| BenchError::Config(e.to_string()))?;
        Ok(())
    }

    /// SHA-256 over the canonical JSON of every semantic field; the output
    /// directory is excluded.
    pub fn hash(&self) -> String {
        let mut c = self.clone();
        c.run.out = None;
        let json = serde_json::to_vec(&serde_json::to_value(&c).expect("config serialises")).expect("json");
        hex::encode(Sha256::digest(&json))
    }

    pub fn seeds(&self) -> Vec<u64> {
        derive_seeds(self.run.master_seed, self.run.runs)
    }
}

/// Per-run seeds; a prefix of a longer list for the same master seed.
pub fn derive_seeds(master: u64, runs: usize) -> Vec<u64> {
    let mut rng = ChaCha8Rng::seed_from_u64(master);
    (0..runs).map(|_| rng.next_u64()).collect()
}

#[cfg(test)]
mod tests {
    use super::*;

    const MINIMAL: &str = "[data]\nsource = \"synthetic\"\npreset = \"wearable\"\n";

    #[test]
    fn minimal_config_parses_with_defaults() {
        let c = ExperimentConfig::from_toml(MINIMAL).unwrap();
        assert_eq!(c.run.runs, 100);
        assert_eq!(c.bench.strategies.len(), 8);
        assert_eq!(c.downstream.rates, vec![0.0, 0.1, 0.2, 0.3, 0.4]);
        c.validate().unwrap();
    }

    #[test]
    fn unknown_keys_are_rejected() {
        let text = format!("{MINIMAL}[bench]\nratios = 0.2\n");
        assert!(ExperimentConfig::from_toml(&text).is_err());
    }

    #[test]
    fn hash_tracks_semantic_fields_only() {
        let a = ExperimentConfig::from_toml(MINIMAL).unwrap();
        let mut b = a.clone();
        b.run.out = Some("elsewhere".into());
        assert_eq!(a.hash(), b.hash());
        b.bench.ratio = 0.3;
        assert_ne!(a.hash(), b.hash());
        let mut c = a.clone();
        c.run.master_seed = 1;
        assert_ne!(a.hash(), c.hash());
    }

    #[test]
    fn seeds_are_prefix_stable() {
        let long = derive_seeds(7, 10);
        assert_eq!(derive_seeds(7, 3), long[..3]);
        assert_ne!(derive_seeds(8, 3), long[..3]);
    }

    #[test]
    fn downstream_strategy_names() {
        assert_eq!("none".parse::<DownstreamStrategy>().unwrap(), DownstreamStrategy::None);
        assert_eq!(
            "transformer".parse::<DownstreamStrategy>().unwrap(),
            DownstreamStrategy::Impute(Strategy::Transformer)
        );
        assert!("bogus".parse::<DownstreamStrategy>().is_err());
    }
}
