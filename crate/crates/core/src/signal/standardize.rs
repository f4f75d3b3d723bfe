use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::frame::TimeSeriesFrame;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ChannelStats {
    pub name: String,
    pub mean: f64,
    pub std: f64,
}

/// Per-channel z-scoring fitted on observed points of a designated split.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Standardizer {
    pub stats: Vec<ChannelStats>,
}

impl Standardizer {
    /// Pools observed points of each channel across `frames` (population
    /// standard deviation).
    pub fn fit(frames: &[&TimeSeriesFrame]) -> Result<Self> {
        let first = frames
            .first()
            .ok_or_else(|| Error::Frame("no frames to fit standardization on".into()))?;
        let names = first.channel_names();
        if frames.iter().any(|f| f.channel_names() != names) {
            return Err(Error::Frame("frames disagree on channel layout".into()));
        }
        let mut stats = Vec::with_capacity(names.len());
        for (c, name) in names.iter().enumerate() {
            let mut n = 0usize;
            let mut sum = 0.0;
            for f in frames {
                for t in 0..f.len() {
                    if let Some(v) = f.value(c, t) {
                        n += 1;
                        sum += v;
                    }
                }
            }
            if n < 2 {
                return Err(Error::ConstantChannel(name.clone()));
            }
            let mean = sum / n as f64;
            let mut ss = 0.0;
            for f in frames {
                for t in 0..f.len() {
                    if let Some(v) = f.value(c, t) {
                        ss += (v - mean) * (v - mean);
                    }
                }
            }
            let std = (ss / n as f64).sqrt();
            if !(std > 1e-12 * mean.abs().max(1.0)) {
                return Err(Error::ConstantChannel(name.clone()));
            }
            stats.push(ChannelStats {
                name: name.clone(),
                mean,
                std,
            });
        }
        Ok(Self { stats })
    }

    fn check(&self, frame: &TimeSeriesFrame) -> Result<()> {
        if frame.n_channels() != self.stats.len()
            || frame
                .channels()
                .iter()
                .zip(&self.stats)
                .any(|(c, s)| c.name != s.name)
        {
            return Err(Error::Frame(
                "frame channels do not match standardization stats".into(),
            ));
        }
        Ok(())
    }

    pub fn transform(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check(frame)?;
        let mut out = frame.clone();
        for (c, s) in self.stats.iter().enumerate() {
            for t in 0..frame.len() {
                if let Some(v) = frame.value(c, t) {
                    out.set(c, t, (v - s.mean) / s.std);
                }
            }
        }
        Ok(out)
    }

    pub fn inverse(&self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        self.check(frame)?;
        let mut out = frame.clone();
        for (c, s) in self.stats.iter().enumerate() {
            for t in 0..frame.len() {
                if let Some(v) = frame.value(c, t) {
                    out.set(c, t, v * s.std + s.mean);
                }
            }
        }
        Ok(out)
    }
}

/// Fits on `stats_source` and applies to `frame`.
pub fn standardize(
    frame: &TimeSeriesFrame,
    stats_source: &[&TimeSeriesFrame],
) -> Result<(TimeSeriesFrame, Standardizer)> {
    let s = Standardizer::fit(stats_source)?;
    Ok((s.transform(frame)?, s))
}
