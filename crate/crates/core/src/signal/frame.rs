use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct ChannelInfo {
    pub name: String,
    #[serde(default)]
    pub unit: String,
    #[serde(default)]
    pub source: String,
}

impl ChannelInfo {
    pub fn new(name: impl Into<String>) -> Self {
        Self {
            name: name.into(),
            unit: String::new(),
            source: String::new(),
        }
    }

    pub fn with_unit(mut self, unit: impl Into<String>) -> Self {
        self.unit = unit.into();
        self
    }

    pub fn with_source(mut self, source: impl Into<String>) -> Self {
        self.source = source.into();
        self
    }
}

/// Uniformly sampled multichannel series with a per-cell observation mask.
///
/// Values are stored channel-major. Unobserved cells hold `NaN` and are never
/// handed out through [`TimeSeriesFrame::value`].
#[derive(Debug, Clone, PartialEq)]
pub struct TimeSeriesFrame {
    channels: Vec<ChannelInfo>,
    sample_rate_hz: f64,
    len: usize,
    values: Vec<f64>,
    observed: Vec<bool>,
    pub subject_id: String,
    /// Seconds of the first sample, when known.
    pub start_time: Option<f64>,
}

impl TimeSeriesFrame {
    /// Builds a frame from per-channel series; non-finite values become
    /// unobserved cells.
    pub fn from_channels(
        channels: Vec<ChannelInfo>,
        sample_rate_hz: f64,
        series: Vec<Vec<f64>>,
    ) -> Result<Self> {
        let len = series.first().map_or(0, Vec::len);
        let observed: Vec<Vec<bool>> = series
            .iter()
            .map(|s| s.iter().map(|v| v.is_finite()).collect())
            .collect();
        Self::with_mask(channels, sample_rate_hz, series, observed).map(|f| {
            debug_assert_eq!(f.len, len);
            f
        })
    }

    pub fn with_mask(
        channels: Vec<ChannelInfo>,
        sample_rate_hz: f64,
        series: Vec<Vec<f64>>,
        observed: Vec<Vec<bool>>,
    ) -> Result<Self> {
        if !(sample_rate_hz.is_finite() && sample_rate_hz > 0.0) {
            return Err(Error::Frame(format!("sample rate {sample_rate_hz} must be positive")));
        }
        if channels.len() != series.len() || series.len() != observed.len() {
            return Err(Error::Frame(format!(
                "{} channel descriptors, {} series, {} masks",
                channels.len(),
                series.len(),
                observed.len()
            )));
        }
        let len = series.first().map_or(0, Vec::len);
        let mut values = Vec::with_capacity(len * series.len());
        let mut mask = Vec::with_capacity(len * series.len());
        for (c, (s, m)) in series.iter().zip(&observed).enumerate() {
            if s.len() != len || m.len() != len {
                return Err(Error::Frame(format!(
                    "channel {} has {} values and {} mask cells, expected {len}",
                    channels[c].name,
                    s.len(),
                    m.len()
                )));
            }
            for (&v, &o) in s.iter().zip(m) {
                let o = o && v.is_finite();
                values.push(if o { v } else { f64::NAN });
                mask.push(o);
            }
        }
        Ok(Self {
            channels,
            sample_rate_hz,
            len,
            values,
            observed: mask,
            subject_id: String::new(),
            start_time: None,
        })
    }

    pub fn with_subject(mut self, subject: impl Into<String>) -> Self {
        self.subject_id = subject.into();
        self
    }

    pub fn with_start_time(mut self, start: f64) -> Self {
        self.start_time = Some(start);
        self
    }

    pub fn channels(&self) -> &[ChannelInfo] {
        &self.channels
    }

    pub fn channel_names(&self) -> Vec<String> {
        self.channels.iter().map(|c| c.name.clone()).collect()
    }

    pub fn channel_index(&self, name: &str) -> Option<usize> {
        self.channels.iter().position(|c| c.name == name)
    }

    pub fn n_channels(&self) -> usize {
        self.channels.len()
    }

    pub fn len(&self) -> usize {
        self.len
    }

    pub fn is_empty(&self) -> bool {
        self.len == 0
    }

    pub fn sample_rate_hz(&self) -> f64 {
        self.sample_rate_hz
    }

    /// Raw channel storage; unobserved cells are `NaN`.
    pub fn channel(&self, c: usize) -> &[f64] {
        &self.values[c * self.len..(c + 1) * self.len]
    }

    pub fn observed_mask(&self, c: usize) -> &[bool] {
        &self.observed[c * self.len..(c + 1) * self.len]
    }

    pub fn is_observed(&self, c: usize, t: usize) -> bool {
        self.observed[c * self.len + t]
    }

    pub fn value(&self, c: usize, t: usize) -> Option<f64> {
        let i = c * self.len + t;
        self.observed[i].then(|| self.values[i])
    }

    pub fn set(&mut self, c: usize, t: usize, v: f64) {
        let i = c * self.len + t;
        if v.is_finite() {
            self.values[i] = v;
            self.observed[i] = true;
        } else {
            self.values[i] = f64::NAN;
            self.observed[i] = false;
        }
    }

    pub fn set_missing(&mut self, c: usize, t: usize) {
        let i = c * self.len + t;
        self.values[i] = f64::NAN;
        self.observed[i] = false;
    }

    /// Replaces a whole channel; non-finite entries become unobserved.
    pub fn set_channel(&mut self, c: usize, series: &[f64]) -> Result<()> {
        if series.len() != self.len {
            return Err(Error::Frame(format!(
                "replacement for channel {} has {} values, expected {}",
                self.channels[c].name,
                series.len(),
                self.len
            )));
        }
        for (t, &v) in series.iter().enumerate() {
            self.set(c, t, v);
        }
        Ok(())
    }

    pub fn observed_count(&self) -> usize {
        self.observed.iter().filter(|&&o| o).count()
    }

    pub fn observed_count_channel(&self, c: usize) -> usize {
        self.observed_mask(c).iter().filter(|&&o| o).count()
    }

    pub fn is_complete(&self) -> bool {
        self.observed.iter().all(|&o| o)
    }

    /// Fraction of unobserved cells per channel.
    pub fn missing_fraction(&self) -> Vec<f64> {
        (0..self.n_channels())
            .map(|c| {
                if self.len == 0 {
                    0.0
                } else {
                    1.0 - self.observed_count_channel(c) as f64 / self.len as f64
                }
            })
            .collect()
    }

    pub fn series(&self) -> Vec<Vec<f64>> {
        (0..self.n_channels()).map(|c| self.channel(c).to_vec()).collect()
    }

    pub fn masks(&self) -> Vec<Vec<bool>> {
        (0..self.n_channels())
            .map(|c| self.observed_mask(c).to_vec())
            .collect()
    }

    /// Time slice `[start, start + len)`.
    pub fn slice_time(&self, start: usize, len: usize) -> Result<Self> {
        if start + len > self.len {
            return Err(Error::Frame(format!(
                "slice [{start}, {}) exceeds length {}",
                start + len,
                self.len
            )));
        }
        let series = (0..self.n_channels())
            .map(|c| self.channel(c)[start..start + len].to_vec())
            .collect();
        let masks = (0..self.n_channels())
            .map(|c| self.observed_mask(c)[start..start + len].to_vec())
            .collect();
        let mut f = Self::with_mask(self.channels.clone(), self.sample_rate_hz, series, masks)?;
        f.subject_id = self.subject_id.clone();
        f.start_time = self
            .start_time
            .map(|s| s + start as f64 / self.sample_rate_hz);
        Ok(f)
    }

    /// Keeps the named channels, in the given order.
    pub fn select_channels(&self, names: &[&str]) -> Result<Self> {
        let mut idx = Vec::with_capacity(names.len());
        for n in names {
            idx.push(
                self.channel_index(n)
                    .ok_or_else(|| Error::Schema(format!("missing column `{n}`")))?,
            );
        }
        let mut f = Self::with_mask(
            idx.iter().map(|&c| self.channels[c].clone()).collect(),
            self.sample_rate_hz,
            idx.iter().map(|&c| self.channel(c).to_vec()).collect(),
            idx.iter().map(|&c| self.observed_mask(c).to_vec()).collect(),
        )?;
        f.subject_id = self.subject_id.clone();
        f.start_time = self.start_time;
        Ok(f)
    }

    /// Bitwise equality including the `NaN` sentinels.
    pub fn bit_eq(&self, other: &Self) -> bool {
        self.channels == other.channels
            && self.sample_rate_hz.to_bits() == other.sample_rate_hz.to_bits()
            && self.len == other.len
            && self.observed == other.observed
            && self.subject_id == other.subject_id
            && self.start_time.map(f64::to_bits) == other.start_time.map(f64::to_bits)
            && self
                .values
                .iter()
                .zip(&other.values)
                .all(|(a, b)| a.to_bits() == b.to_bits())
    }
}
