use std::path::Path;

use serde::{Deserialize, Serialize};

use crate::datasets::manifest::{ChannelSchema, DatasetManifest, SplitKind};
use crate::error::{Error, Result};
use crate::signal::io::load_frames;
use crate::signal::TimeSeriesFrame;

/// Channels evaluated in the per-source benchmark.
pub const NOVARTIS_CHANNELS: [&str; 10] = ["ACC", "BAR", "BP", "BPW", "EE", "HR", "HRV", "RESP", "ST", "Step"];
pub const NOVARTIS_RATE_HZ: f64 = 1.0 / 60.0;
pub const SAMPLES_PER_DAY: usize = 1440;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelMissingness {
    pub channel: String,
    pub missing_percent: f64,
}

#[derive(Debug, Clone)]
pub struct NovartisData {
    /// One frame per subject-day, with every column present in the file.
    pub frames: Vec<TimeSeriesFrame>,
    pub missingness: Vec<ChannelMissingness>,
    pub manifest: DatasetManifest,
}

impl NovartisData {
    /// The same frames restricted to [`NOVARTIS_CHANNELS`].
    pub fn evaluated_frames(&self) -> Result<Vec<TimeSeriesFrame>> {
        self.frames.iter().map(|f| f.select_channels(&NOVARTIS_CHANNELS)).collect()
    }
}

/// Per-channel missing percentage pooled over `frames`.
pub fn missingness_summary(frames: &[TimeSeriesFrame]) -> Vec<ChannelMissingness> {
    let Some(first) = frames.first() else { return Vec::new() };
    (0..first.n_channels())
        .map(|c| {
            let total: usize = frames.iter().map(TimeSeriesFrame::len).sum();
            let observed: usize = frames.iter().map(|f| f.observed_count_channel(c)).sum();
            ChannelMissingness {
                channel: first.channels()[c].name.clone(),
                missing_percent: if total == 0 {
                    0.0
                } else {
                    100.0 * (total - observed) as f64 / total as f64
                },
            }
        })
        .collect()
}

/// Splits a minute-level frame at day boundaries. Without a start time the
/// frame is cut every [`SAMPLES_PER_DAY`] readings from its first sample.
pub fn split_days(frame: &TimeSeriesFrame) -> Result<Vec<TimeSeriesFrame>> {
    let first_cut = match frame.start_time {
        Some(t0) => {
            let minute = (t0 / 60.0).round() as i64;
            let into_day = minute.rem_euclid(SAMPLES_PER_DAY as i64) as usize;
            (SAMPLES_PER_DAY - into_day) % SAMPLES_PER_DAY
        }
        None => 0,
    };
    let mut cuts = vec![0];
    let mut next = if first_cut == 0 { SAMPLES_PER_DAY } else { first_cut };
    while next < frame.len() {
        cuts.push(next);
        next += SAMPLES_PER_DAY;
    }
    cuts.push(frame.len());
    cuts.windows(2)
        .filter(|w| w[1] > w[0])
        .map(|w| frame.slice_time(w[0], w[1] - w[0]))
        .collect()
}

/// Loads a frame-exchange CSV (plus sidecar) of minute-level wearable data.
pub fn load_novartis(path: &Path) -> Result<NovartisData> {
    let loaded = load_frames(path)?;
    let dataset_err = |msg: String| Error::Dataset {
        path: path.to_path_buf(),
        msg,
    };
    let Some(first) = loaded.first() else {
        return Err(dataset_err("file contains no readings".into()));
    };
    if (first.sample_rate_hz() - NOVARTIS_RATE_HZ).abs() > 1e-12 {
        return Err(dataset_err(format!(
            "expected one reading per minute ({NOVARTIS_RATE_HZ} Hz), sidecar declares {} Hz",
            first.sample_rate_hz()
        )));
    }
    for name in NOVARTIS_CHANNELS {
        if first.channel_index(name).is_none() {
            return Err(dataset_err(format!("missing column {name}")));
        }
    }
    let mut frames = Vec::new();
    for f in &loaded {
        frames.extend(split_days(f)?);
    }
    let mut subjects: Vec<String> = frames.iter().map(|f| f.subject_id.clone()).collect();
    subjects.sort();
    subjects.dedup();
    let manifest = DatasetManifest {
        name: "novartis".into(),
        channels: first
            .channels()
            .iter()
            .map(|c| ChannelSchema {
                name: c.name.clone(),
                sample_rate_hz: NOVARTIS_RATE_HZ,
                unit: c.unit.clone(),
            })
            .collect(),
        train_subjects: subjects.clone(),
        test_subjects: Vec::new(),
        subjects,
        split: SplitKind::Canonical,
        labels: Vec::new(),
        files: vec![path.to_path_buf(), crate::signal::io::sidecar_path(path)],
    };
    Ok(NovartisData {
        missingness: missingness_summary(&frames),
        frames,
        manifest,
    })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::ChannelInfo;

    #[test]
    fn days_split_on_midnight() {
        // Starts at 23:00, so the first piece is 60 readings long.
        let x: Vec<f64> = (0..1600).map(f64::from).collect();
        let f = TimeSeriesFrame::from_channels(vec![ChannelInfo::new("HR")], NOVARTIS_RATE_HZ, vec![x])
            .unwrap()
            .with_start_time(23.0 * 3600.0);
        let days = split_days(&f).unwrap();
        assert_eq!(days.iter().map(TimeSeriesFrame::len).collect::<Vec<_>>(), vec![60, 1440, 100]);
        assert_eq!(days[1].channel(0)[0], 60.0);
    }

    #[test]
    fn missingness_percent() {
        let f = TimeSeriesFrame::from_channels(
            vec![ChannelInfo::new("HR"), ChannelInfo::new("ST")],
            NOVARTIS_RATE_HZ,
            vec![vec![1.0, f64::NAN, 2.0, f64::NAN], vec![1.0; 4]],
        )
        .unwrap();
        let m = missingness_summary(&[f]);
        assert_eq!((m[0].channel.as_str(), m[0].missing_percent), ("HR", 50.0));
        assert_eq!(m[1].missing_percent, 0.0);
    }
}
