use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::datasets::e4::read_e4_csv;
use crate::datasets::manifest::{choose_split, ChannelSchema, DatasetManifest};
use crate::error::{Error, Result};
use crate::signal::{
    design_butterworth, filtfilt, resample, slice_labeled_windows, ChannelInfo, LabeledWindow, TimeSeriesFrame,
};

pub const WESAD_RATE_HZ: f64 = 4.0;
pub const WESAD_WINDOW: usize = 240;
/// Consecutive windows overlap by one reading.
pub const WESAD_STRIDE: usize = WESAD_WINDOW - 1;
pub const WESAD_CHANNELS: [&str; 6] = ["BVP", "EDA", "TEMP", "ACC_X", "ACC_Y", "ACC_Z"];
pub const WESAD_CLASSES: [&str; 3] = ["baseline", "stress", "amusement"];
pub const WESAD_BINARY_CLASSES: [&str; 2] = ["non-stress", "stress"];
pub const EDA_FILTER_ORDER: usize = 2;
pub const EDA_CUTOFF_HZ: f64 = 0.5;

/// Reference split: 11 of 15 subjects train.
const REF_TRAIN: usize = 11;
const REF_TOTAL: usize = 15;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum WesadTask {
    /// baseline / stress / amusement.
    ThreeClass,
    /// stress versus everything else.
    Binary,
}

impl WesadTask {
    pub fn classes(self) -> &'static [&'static str] {
        match self {
            WesadTask::ThreeClass => &WESAD_CLASSES,
            WesadTask::Binary => &WESAD_BINARY_CLASSES,
        }
    }

    /// Maps a protocol code (1 baseline, 2 stress, 3 amusement) to a class.
    pub fn label(self, code: i64) -> Option<usize> {
        match (self, code) {
            (WesadTask::ThreeClass, 1..=3) => Some(code as usize - 1),
            (WesadTask::Binary, 2) => Some(1),
            (WesadTask::Binary, 1 | 3) => Some(0),
            _ => None,
        }
    }
}

#[derive(Debug, Clone)]
pub struct WesadData {
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub manifest: DatasetManifest,
}

fn channel_file(dir: &Path, name: &str) -> Result<PathBuf> {
    let p = dir.join(format!("{name}.csv"));
    if !p.is_file() {
        return Err(Error::Dataset {
            path: p,
            msg: format!("missing {name} channel file"),
        });
    }
    Ok(p)
}

fn to_rate(series: Vec<Vec<f64>>, names: &[&str], rate: f64, path: &Path) -> Result<TimeSeriesFrame> {
    let frame = TimeSeriesFrame::from_channels(names.iter().map(|n| ChannelInfo::new(*n)).collect(), rate, series)?;
    resample(&frame, WESAD_RATE_HZ).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })
}

/// Preprocessed 4 Hz frame and per-reading protocol codes for one subject
/// directory.
pub fn load_wesad_subject(dir: &Path) -> Result<(TimeSeriesFrame, Vec<i64>)> {
    let subject = dir
        .file_name()
        .map(|s| s.to_string_lossy().into_owned())
        .unwrap_or_default();
    let bvp_path = channel_file(dir, "BVP")?;
    let eda_path = channel_file(dir, "EDA")?;
    let temp_path = channel_file(dir, "TEMP")?;
    let acc_path = channel_file(dir, "ACC")?;
    let label_path = channel_file(dir, "labels")?;

    let bvp = read_e4_csv(&bvp_path)?;
    let mut eda = read_e4_csv(&eda_path)?;
    let temp = read_e4_csv(&temp_path)?;
    let acc = read_e4_csv(&acc_path)?;
    let labels = read_e4_csv(&label_path)?;
    if acc.columns.len() != 3 {
        return Err(Error::Dataset {
            path: acc_path,
            msg: format!("expected 3 acceleration columns, found {}", acc.columns.len()),
        });
    }
    let lp = design_butterworth(EDA_FILTER_ORDER, EDA_CUTOFF_HZ, eda.sample_rate_hz)?;
    eda.columns[0] = filtfilt(&eda.columns[0], &lp)?;

    let parts = [
        to_rate(bvp.columns, &["BVP"], bvp.sample_rate_hz, &bvp_path)?,
        to_rate(eda.columns, &["EDA"], eda.sample_rate_hz, &eda_path)?,
        to_rate(temp.columns, &["TEMP"], temp.sample_rate_hz, &temp_path)?,
        to_rate(acc.columns, &["ACC_X", "ACC_Y", "ACC_Z"], acc.sample_rate_hz, &acc_path)?,
    ];
    let len = parts.iter().map(TimeSeriesFrame::len).min().unwrap_or(0);
    // Labels are sampled at each 4 Hz reading time.
    let codes: Vec<i64> = (0..len)
        .map(|k| {
            let t = k as f64 / WESAD_RATE_HZ;
            let idx = (t * labels.sample_rate_hz).round() as usize;
            labels.columns[0].get(idx).map_or(0, |&v| v.round() as i64)
        })
        .collect();
    let mut series = Vec::with_capacity(6);
    for p in &parts {
        for c in 0..p.n_channels() {
            series.push(p.channel(c)[..len].to_vec());
        }
    }
    let frame = TimeSeriesFrame::from_channels(
        WESAD_CHANNELS.iter().map(|n| ChannelInfo::new(*n)).collect(),
        WESAD_RATE_HZ,
        series,
    )?
    .with_subject(subject)
    .with_start_time(bvp.start_time);
    Ok((frame, codes))
}

/// Loads every subject directory under `root` (directories whose name starts
/// with `S`), slices label-homogeneous windows and splits subjects.
/// `split_seed` forces a seeded split; otherwise `canonical_test` is used
/// when all of its subjects are present.
pub fn load_wesad(root: &Path, task: WesadTask, canonical_test: &[String], split_seed: Option<u64>) -> Result<WesadData> {
    let mut dirs: Vec<PathBuf> = std::fs::read_dir(root)?
        .filter_map(|e| e.ok().map(|e| e.path()))
        .filter(|p| p.is_dir() && p.file_name().is_some_and(|n| n.to_string_lossy().starts_with('S')))
        .collect();
    dirs.sort();
    if dirs.is_empty() {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            msg: "no subject directories".into(),
        });
    }
    let mut windows = Vec::new();
    let mut subjects = Vec::new();
    let mut files = Vec::new();
    for dir in &dirs {
        let (frame, codes) = load_wesad_subject(dir)?;
        let labels: Vec<Option<usize>> = codes.iter().map(|&c| task.label(c)).collect();
        windows.extend(slice_labeled_windows(&frame, &labels, WESAD_WINDOW, WESAD_STRIDE)?);
        subjects.push(frame.subject_id.clone());
        for f in ["BVP", "EDA", "TEMP", "ACC", "labels"] {
            files.push(dir.join(format!("{f}.csv")));
        }
    }
    let (train_subjects, test_subjects, split) = choose_split(&subjects, canonical_test, REF_TRAIN, REF_TOTAL, split_seed);
    let manifest = DatasetManifest {
        name: "wesad".into(),
        channels: WESAD_CHANNELS
            .iter()
            .map(|n| ChannelSchema {
                name: (*n).into(),
                sample_rate_hz: WESAD_RATE_HZ,
                unit: String::new(),
            })
            .collect(),
        subjects,
        train_subjects,
        test_subjects,
        split,
        labels: task.classes().iter().map(|s| (*s).to_string()).collect(),
        files,
    };
    manifest.validate()?;
    let (train, test) = windows.into_iter().partition(|w| manifest.is_train(&w.subject_id));
    Ok(WesadData { train, test, manifest })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn binary_relabeling() {
        assert_eq!(WesadTask::Binary.label(1), Some(0));
        assert_eq!(WesadTask::Binary.label(3), Some(0));
        assert_eq!(WesadTask::Binary.label(2), Some(1));
        assert_eq!(WesadTask::Binary.label(4), None);
        assert_eq!(WesadTask::ThreeClass.label(3), Some(2));
        assert_eq!(WesadTask::ThreeClass.label(0), None);
    }
}
