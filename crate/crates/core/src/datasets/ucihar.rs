//! Raw inertial layout: `acc_expXX_userYY.txt` and `gyro_expXX_userYY.txt`
//! with three whitespace-separated columns per line, plus `labels.txt` whose
//! rows are `experiment user activity first last` (1-based, inclusive).

use std::collections::BTreeMap;
use std::path::{Path, PathBuf};

use crate::datasets::manifest::{choose_split, ChannelSchema, DatasetManifest};
use crate::datasets::synthetic::{HAR_CHANNELS, HAR_CLASSES};
use crate::error::{Error, Result};
use crate::signal::{
    design_butterworth, filtfilt, median_filter, remove_gravity, slice_labeled_windows, ChannelInfo, LabeledWindow,
    TimeSeriesFrame,
};

pub const UCIHAR_RATE_HZ: f64 = 50.0;
pub const UCIHAR_WINDOW: usize = 128;
pub const UCIHAR_STRIDE: usize = 64;
pub const NOISE_MEDIAN_WIDTH: usize = 3;
pub const NOISE_FILTER_ORDER: usize = 3;
pub const NOISE_CUTOFF_HZ: f64 = 20.0;
/// Test subjects of the published release.
pub const UCIHAR_CANONICAL_TEST: [u32; 9] = [2, 4, 9, 10, 12, 13, 18, 20, 24];

const REF_TRAIN: usize = 21;
const REF_TOTAL: usize = 30;

#[derive(Debug, Clone)]
pub struct UciHarData {
    pub train: Vec<LabeledWindow>,
    pub test: Vec<LabeledWindow>,
    pub manifest: DatasetManifest,
}

pub fn subject_name(user: u32) -> String {
    format!("S{user:02}")
}

fn read_matrix(path: &Path, width: usize) -> Result<Vec<Vec<f64>>> {
    let text = std::fs::read_to_string(path).map_err(|e| Error::Dataset {
        path: path.to_path_buf(),
        msg: e.to_string(),
    })?;
    let mut cols = vec![Vec::new(); width];
    for (i, line) in text.lines().enumerate() {
        if line.trim().is_empty() {
            continue;
        }
        let parsed: std::result::Result<Vec<f64>, _> = line.split_whitespace().map(str::parse::<f64>).collect();
        match parsed {
            Ok(v) if v.len() == width => {
                for (c, x) in v.into_iter().enumerate() {
                    cols[c].push(x);
                }
            }
            _ => {
                return Err(Error::Dataset {
                    path: path.to_path_buf(),
                    msg: format!("line {}: expected {width} numeric columns", i + 1),
                })
            }
        }
    }
    Ok(cols)
}

/// Median, low-pass and gravity removal on the six raw axes (acc then gyro).
pub fn preprocess_inertial(acc: &[Vec<f64>], gyro: &[Vec<f64>]) -> Result<Vec<Vec<f64>>> {
    let lp = design_butterworth(NOISE_FILTER_ORDER, NOISE_CUTOFF_HZ, UCIHAR_RATE_HZ)?;
    let denoise = |x: &Vec<f64>| -> Result<Vec<f64>> { filtfilt(&median_filter(x, NOISE_MEDIAN_WIDTH)?, &lp) };
    let acc: Vec<Vec<f64>> = acc.iter().map(denoise).collect::<Result<_>>()?;
    let mut out = remove_gravity(&acc, UCIHAR_RATE_HZ)?;
    for g in gyro {
        out.push(denoise(g)?);
    }
    Ok(out)
}

struct Experiment {
    exp: u32,
    user: u32,
    acc: PathBuf,
    gyro: PathBuf,
}

fn parse_name(name: &str, prefix: &str) -> Option<(u32, u32)> {
    let rest = name.strip_prefix(prefix)?.strip_suffix(".txt")?;
    let (e, u) = rest.split_once("_user")?;
    Some((e.strip_prefix("exp")?.parse().ok()?, u.parse().ok()?))
}

/// Loads every experiment under `root`. `split_seed` forces a seeded split;
/// otherwise the canonical test subjects are used when all are present.
pub fn load_ucihar(root: &Path, split_seed: Option<u64>) -> Result<UciHarData> {
    let mut experiments = Vec::new();
    for entry in std::fs::read_dir(root)? {
        let path = entry?.path();
        let name = path.file_name().map(|s| s.to_string_lossy().into_owned()).unwrap_or_default();
        if let Some((exp, user)) = parse_name(&name, "acc_") {
            let gyro = root.join(format!("gyro_exp{exp:02}_user{user:02}.txt"));
            if !gyro.is_file() {
                return Err(Error::Dataset {
                    path: gyro,
                    msg: "missing gyroscope file".into(),
                });
            }
            experiments.push(Experiment { exp, user, acc: path, gyro });
        }
    }
    experiments.sort_by_key(|e| (e.user, e.exp));
    if experiments.is_empty() {
        return Err(Error::Dataset {
            path: root.to_path_buf(),
            msg: "no acc_expXX_userYY.txt files".into(),
        });
    }
    let label_path = root.join("labels.txt");
    let rows = read_matrix(&label_path, 5)?;
    let mut spans: BTreeMap<(u32, u32), Vec<(usize, usize, usize)>> = BTreeMap::new();
    for i in 0..rows[0].len() {
        let (exp, user, act) = (rows[0][i] as u32, rows[1][i] as u32, rows[2][i] as usize);
        let (first, last) = (rows[3][i] as usize, rows[4][i] as usize);
        if (1..=HAR_CLASSES.len()).contains(&act) && first >= 1 && last >= first {
            spans.entry((exp, user)).or_default().push((act - 1, first - 1, last));
        }
    }

    let infos: Vec<ChannelInfo> = HAR_CHANNELS.iter().map(|n| ChannelInfo::new(*n)).collect();
    let mut windows = Vec::new();
    let mut subjects = Vec::new();
    let mut files = vec![label_path];
    for e in &experiments {
        let acc = read_matrix(&e.acc, 3)?;
        let gyro = read_matrix(&e.gyro, 3)?;
        let n = acc[0].len().min(gyro[0].len());
        let trim = |m: Vec<Vec<f64>>| m.into_iter().map(|mut c| {
            c.truncate(n);
            c
        });
        let (acc, gyro): (Vec<_>, Vec<_>) = (trim(acc).collect(), trim(gyro).collect());
        let series = preprocess_inertial(&acc, &gyro).map_err(|err| Error::Dataset {
            path: e.acc.clone(),
            msg: err.to_string(),
        })?;
        let subject = subject_name(e.user);
        let frame = TimeSeriesFrame::from_channels(infos.clone(), UCIHAR_RATE_HZ, series)?.with_subject(subject.clone());
        let mut labels = vec![None; n];
        for &(class, a, b) in spans.get(&(e.exp, e.user)).map(Vec::as_slice).unwrap_or(&[]) {
            for l in labels.iter_mut().take(b.min(n)).skip(a) {
                *l = Some(class);
            }
        }
        windows.extend(slice_labeled_windows(&frame, &labels, UCIHAR_WINDOW, UCIHAR_STRIDE)?);
        if !subjects.contains(&subject) {
            subjects.push(subject);
        }
        files.push(e.acc.clone());
        files.push(e.gyro.clone());
    }
    let canonical: Vec<String> = UCIHAR_CANONICAL_TEST.iter().map(|&u| subject_name(u)).collect();
    let (train_subjects, test_subjects, split) = choose_split(&subjects, &canonical, REF_TRAIN, REF_TOTAL, split_seed);
    let manifest = DatasetManifest {
        name: "ucihar".into(),
        channels: HAR_CHANNELS
            .iter()
            .map(|n| ChannelSchema {
                name: (*n).into(),
                sample_rate_hz: UCIHAR_RATE_HZ,
                unit: String::new(),
            })
            .collect(),
        subjects,
        train_subjects,
        test_subjects,
        split,
        labels: HAR_CLASSES.iter().map(|s| (*s).to_string()).collect(),
        files,
    };
    manifest.validate()?;
    let (train, test) = windows.into_iter().partition(|w| manifest.is_train(&w.subject_id));
    Ok(UciHarData { train, test, manifest })
}
