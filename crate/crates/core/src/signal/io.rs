//! Frame exchange format: a CSV with header `timestamp,subject_id,<channel>...`
//! (empty cell = missing) plus a JSON sidecar carrying the sample rate and
//! channel descriptors.

use std::io::{Read, Write};
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::frame::{ChannelInfo, TimeSeriesFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FrameDescriptor {
    pub sample_rate_hz: f64,
    pub channels: Vec<ChannelInfo>,
}

/// Sidecar path for a frame CSV: `x.csv` -> `x.json`.
pub fn sidecar_path(csv_path: &Path) -> PathBuf {
    csv_path.with_extension("json")
}

pub fn write_frames_csv<W: Write>(frames: &[TimeSeriesFrame], w: W) -> Result<()> {
    let mut out = csv::Writer::from_writer(w);
    let Some(first) = frames.first() else {
        out.flush()?;
        return Ok(());
    };
    let mut header = vec!["timestamp".to_string(), "subject_id".to_string()];
    header.extend(first.channel_names());
    out.write_record(&header)?;
    for f in frames {
        if f.channel_names() != first.channel_names() {
            return Err(Error::Schema("frames disagree on channel layout".into()));
        }
        let start = f.start_time.unwrap_or(0.0);
        let mut row = Vec::with_capacity(header.len());
        for t in 0..f.len() {
            row.clear();
            row.push((start + t as f64 / f.sample_rate_hz()).to_string());
            row.push(f.subject_id.clone());
            for c in 0..f.n_channels() {
                row.push(f.value(c, t).map(|v| v.to_string()).unwrap_or_default());
            }
            out.write_record(&row)?;
        }
    }
    out.flush()?;
    Ok(())
}

/// Reads consecutive rows into one frame per contiguous subject run,
/// rejecting non-uniform timestamps.
pub fn read_frames_csv<R: Read>(r: R, descriptor: &FrameDescriptor) -> Result<Vec<TimeSeriesFrame>> {
    let mut rdr = csv::ReaderBuilder::new().trim(csv::Trim::All).from_reader(r);
    let header: Vec<String> = rdr.headers()?.iter().map(str::to_string).collect();
    if header.len() < 2 || header[0] != "timestamp" || header[1] != "subject_id" {
        return Err(Error::Schema(format!(
            "header must start with `timestamp,subject_id`, got {:?}",
            header.iter().take(2).collect::<Vec<_>>()
        )));
    }
    let names: Vec<&str> = descriptor.channels.iter().map(|c| c.name.as_str()).collect();
    if header[2..] != names[..] {
        for (i, n) in names.iter().enumerate() {
            if header.get(i + 2).map(String::as_str) != Some(*n) {
                return Err(Error::Schema(format!("expected column `{n}` at position {}", i + 2)));
            }
        }
        return Err(Error::Schema(format!(
            "unexpected column `{}`",
            header[2 + names.len()]
        )));
    }
    let dt = 1.0 / descriptor.sample_rate_hz;
    let mut frames = Vec::new();
    let mut cur: Option<(String, f64, f64, Vec<Vec<f64>>)> = None;
    let finish = |cur: Option<(String, f64, f64, Vec<Vec<f64>>)>, frames: &mut Vec<TimeSeriesFrame>| -> Result<()> {
        if let Some((subject, start, _, series)) = cur {
            frames.push(
                TimeSeriesFrame::from_channels(descriptor.channels.clone(), descriptor.sample_rate_hz, series)?
                    .with_subject(subject)
                    .with_start_time(start),
            );
        }
        Ok(())
    };
    for (line, rec) in rdr.records().enumerate() {
        let rec = rec?;
        let ts: f64 = rec[0]
            .parse()
            .map_err(|_| Error::Schema(format!("row {}: bad timestamp `{}`", line + 2, &rec[0])))?;
        let subject = rec[1].to_string();
        let mut vals = Vec::with_capacity(names.len());
        for (i, n) in names.iter().enumerate() {
            let cell = &rec[i + 2];
            vals.push(if cell.is_empty() {
                f64::NAN
            } else {
                cell.parse().map_err(|_| {
                    Error::Schema(format!("row {}: column `{n}`: bad value `{cell}`", line + 2))
                })?
            });
        }
        let continues = matches!(&cur, Some((s, _, _, _)) if *s == subject);
        if continues {
            let (_, start, last, series) = cur.as_mut().expect("checked");
            let step = ts - *last;
            if (step - dt).abs() > 1e-6 * dt.max(1.0) {
                return Err(Error::Frame(format!(
                    "row {}: timestamp step {step} s breaks uniform spacing of {dt} s (frame starting at {start})",
                    line + 2
                )));
            }
            *last = ts;
            for (s, v) in series.iter_mut().zip(vals) {
                s.push(v);
            }
        } else {
            finish(cur.take(), &mut frames)?;
            cur = Some((subject, ts, ts, vals.into_iter().map(|v| vec![v]).collect()));
        }
    }
    finish(cur, &mut frames)?;
    Ok(frames)
}

pub fn save_frames(path: &Path, frames: &[TimeSeriesFrame]) -> Result<()> {
    let first = frames
        .first()
        .ok_or_else(|| Error::Frame("nothing to save".into()))?;
    let descriptor = FrameDescriptor {
        sample_rate_hz: first.sample_rate_hz(),
        channels: first.channels().to_vec(),
    };
    write_frames_csv(frames, std::io::BufWriter::new(std::fs::File::create(path)?))?;
    std::fs::write(sidecar_path(path), serde_json::to_string_pretty(&descriptor)? + "\n")?;
    Ok(())
}

pub fn load_frames(path: &Path) -> Result<Vec<TimeSeriesFrame>> {
    let descriptor: FrameDescriptor = serde_json::from_str(&std::fs::read_to_string(sidecar_path(path))?)?;
    read_frames_csv(std::fs::File::open(path)?, &descriptor)
}
