use std::path::PathBuf;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// How the train/test subject split was obtained.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum SplitKind {
    /// Fixed list published with the dataset.
    Canonical,
    /// Seeded random partition.
    Seeded { seed: u64 },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelSchema {
    pub name: String,
    pub sample_rate_hz: f64,
    pub unit: String,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DatasetManifest {
    pub name: String,
    pub channels: Vec<ChannelSchema>,
    pub subjects: Vec<String>,
    pub train_subjects: Vec<String>,
    pub test_subjects: Vec<String>,
    pub split: SplitKind,
    pub labels: Vec<String>,
    pub files: Vec<PathBuf>,
}

impl DatasetManifest {
    /// Checks that the split partitions the subject list.
    pub fn validate(&self) -> Result<()> {
        for s in &self.train_subjects {
            if self.test_subjects.contains(s) {
                return Err(Error::Config(format!("subject {s} is in both train and test splits")));
            }
        }
        for s in self.train_subjects.iter().chain(&self.test_subjects) {
            if !self.subjects.contains(s) {
                return Err(Error::Config(format!("split names unknown subject {s}")));
            }
        }
        Ok(())
    }

    pub fn is_train(&self, subject: &str) -> bool {
        self.train_subjects.iter().any(|s| s == subject)
    }

    pub fn is_test(&self, subject: &str) -> bool {
        self.test_subjects.iter().any(|s| s == subject)
    }
}

/// Seeded partition of `subjects` into `(train, test)` with `n_train`
/// training subjects. Depends only on the set of subjects and the seed; both
/// halves come back sorted.
pub fn split_subjects(subjects: &[String], n_train: usize, seed: u64) -> (Vec<String>, Vec<String>) {
    let mut pool: Vec<String> = subjects.to_vec();
    pool.sort();
    pool.dedup();
    pool.shuffle(&mut ChaCha8Rng::seed_from_u64(seed));
    let n_train = n_train.min(pool.len());
    let mut test = pool.split_off(n_train);
    pool.sort();
    test.sort();
    (pool, test)
}

/// Training-subject count for a dataset with `n` subjects when the reference
/// split used `ref_train` of `ref_total`; at least one subject lands on each
/// side when `n >= 2`.
pub fn scaled_train_count(n: usize, ref_train: usize, ref_total: usize) -> usize {
    if n < 2 {
        return n;
    }
    ((n * ref_train) as f64 / ref_total as f64).round().clamp(1.0, (n - 1) as f64) as usize
}

/// Canonical split when every listed test subject is present, otherwise a
/// seeded one with the reference proportions.
pub(crate) fn choose_split(
    subjects: &[String],
    canonical_test: &[String],
    ref_train: usize,
    ref_total: usize,
    seed: Option<u64>,
) -> (Vec<String>, Vec<String>, SplitKind) {
    if seed.is_none() && !canonical_test.is_empty() && canonical_test.iter().all(|t| subjects.contains(t)) {
        let mut train: Vec<String> = subjects.iter().filter(|s| !canonical_test.contains(s)).cloned().collect();
        let mut test = canonical_test.to_vec();
        train.sort();
        test.sort();
        return (train, test, SplitKind::Canonical);
    }
    let seed = seed.unwrap_or(0);
    let (train, test) = split_subjects(subjects, scaled_train_count(subjects.len(), ref_train, ref_total), seed);
    (train, test, SplitKind::Seeded { seed })
}
