//! Resolves the `[data]` section into train/test material.

use gapfill::datasets::{
    generate_har, generate_synthetic, load_novartis, load_ucihar, load_wesad, scaled_train_count, split_subjects,
    DatasetManifest, SyntheticSpec, HAR_CHANNELS, HAR_CLASSES, WESAD_CHANNELS,
};
use gapfill::signal::{LabeledWindow, TimeSeriesFrame};

use crate::config::{DataSection, SyntheticPreset};
use crate::BenchError;

#[derive(Debug, Clone)]
pub struct FrameData {
    pub train: Vec<TimeSeriesFrame>,
    pub test: Vec<TimeSeriesFrame>,
    pub manifest: Option<DatasetManifest>,
}

#[derive(Debug, Clone)]
pub struct WindowData {
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub channels: Vec<String>,
    pub classes: Vec<String>,
    pub manifest: Option<DatasetManifest>,
}

impl WindowData {
    pub fn window_len(&self) -> usize {
        self.train.first().or(self.test.first()).map_or(0, LabeledWindow::len)
    }
}

fn subjects_of<'a>(ids: impl Iterator<Item = &'a str>) -> Vec<String> {
    let mut out: Vec<String> = Vec::new();
    for id in ids {
        if !out.iter().any(|s| s == id) {
            out.push(id.to_string());
        }
    }
    out
}

/// The last `n_test` subjects in order of appearance.
fn tail_split(subjects: &[String], n_test: usize) -> Result<Vec<String>, BenchError> {
    if n_test == 0 || n_test >= subjects.len() {
        return Err(BenchError::Config(format!(
            "cannot hold out {n_test} of {} subjects",
            subjects.len()
        )));
    }
    Ok(subjects[subjects.len() - n_test..].to_vec())
}

pub fn load_frames(data: &DataSection) -> Result<FrameData, BenchError> {
    match data {
        DataSection::Synthetic {
            preset,
            seed,
            n_channels,
            test_subjects,
            n_subjects,
            days_per_subject,
        } => {
            let mut spec = match preset {
                SyntheticPreset::Wearable => SyntheticSpec::wearable(*seed),
                SyntheticPreset::Sinusoid => SyntheticSpec::sinusoid_mixture(*n_channels, *seed),
            };
            spec.n_subjects = n_subjects.unwrap_or(spec.n_subjects);
            spec.days_per_subject = days_per_subject.unwrap_or(spec.days_per_subject);
            let frames = generate_synthetic(&spec)?;
            let subjects = subjects_of(frames.iter().map(|f| f.subject_id.as_str()));
            let test_ids = tail_split(&subjects, *test_subjects)?;
            let (test, train) = frames.into_iter().partition(|f| test_ids.contains(&f.subject_id));
            Ok(FrameData {
                train,
                test,
                manifest: None,
            })
        }
        DataSection::Novartis {
            path,
            split_seed,
            test_fraction,
        } => {
            let loaded = load_novartis(path)?;
            let frames = loaded.evaluated_frames()?;
            let subjects = subjects_of(frames.iter().map(|f| f.subject_id.as_str()));
            let n_train = scaled_train_count(subjects.len(), ((1.0 - test_fraction) * 1000.0).round() as usize, 1000);
            let (train_ids, test_ids) = split_subjects(&subjects, n_train, *split_seed);
            let mut manifest = loaded.manifest;
            manifest.train_subjects = train_ids;
            manifest.test_subjects = test_ids.clone();
            manifest.split = gapfill::datasets::SplitKind::Seeded { seed: *split_seed };
            let (test, train) = frames.into_iter().partition(|f| test_ids.contains(&f.subject_id));
            Ok(FrameData {
                train,
                test,
                manifest: Some(manifest),
            })
        }
        _ => Err(BenchError::Config(format!(
            "data source {} provides labelled windows, not frames",
            data.task_name()
        ))),
    }
}

pub fn load_windows(data: &DataSection) -> Result<WindowData, BenchError> {
    match data {
        DataSection::HarSynthetic { spec, test_subjects } => {
            let windows = generate_har(spec)?;
            let subjects = subjects_of(windows.iter().map(|w| w.subject_id.as_str()));
            let test_ids = tail_split(&subjects, *test_subjects)?;
            let (test, train) = windows.into_iter().partition(|w| test_ids.contains(&w.subject_id));
            Ok(WindowData {
                train,
                test,
                channels: HAR_CHANNELS.iter().map(|s| s.to_string()).collect(),
                classes: HAR_CLASSES.iter().map(|s| s.to_string()).collect(),
                manifest: None,
            })
        }
        DataSection::Wesad {
            path,
            task,
            test_subjects,
            split_seed,
        } => {
            let d = load_wesad(path, *task, test_subjects, *split_seed)?;
            Ok(WindowData {
                train: d.train,
                test: d.test,
                channels: WESAD_CHANNELS.iter().map(|s| s.to_string()).collect(),
                classes: d.manifest.labels.clone(),
                manifest: Some(d.manifest),
            })
        }
        DataSection::Ucihar { path, split_seed } => {
            let d = load_ucihar(path, *split_seed)?;
            Ok(WindowData {
                train: d.train,
                test: d.test,
                channels: HAR_CHANNELS.iter().map(|s| s.to_string()).collect(),
                classes: d.manifest.labels.clone(),
                manifest: Some(d.manifest),
            })
        }
        _ => Err(BenchError::Config(format!(
            "data source {} provides frames, not labelled windows",
            data.task_name()
        ))),
    }
}
