use crate::error::{Error, Result};
use crate::imputer::model::ImputerModel;
use crate::signal::TimeSeriesFrame;

/// Windows reconstructed per forward pass.
const INFERENCE_BATCH: usize = 32;

/// Window starts covering every `true` entry of `missing`. Each run of
/// missing steps not already covered gets one window centred on it; runs
/// longer than `window` are tiled.
pub fn plan_windows(missing: &[bool], window: usize) -> Vec<usize> {
    let n = missing.len();
    let mut starts: Vec<usize> = Vec::new();
    if window == 0 || window > n {
        return starts;
    }
    let mut t = 0;
    while t < n {
        if !missing[t] {
            t += 1;
            continue;
        }
        let a = t;
        while t < n && missing[t] {
            t += 1;
        }
        let b = t;
        let covered_to = starts.last().map_or(0, |&s| s + window);
        let a = a.max(covered_to);
        if a >= b {
            continue;
        }
        if b - a <= window {
            starts.push(((a + b).saturating_sub(window) / 2).min(n - window));
        } else {
            log::warn!("gap of {} steps exceeds the model window {window}; tiling", b - a);
            let mut s = a;
            while s < b {
                starts.push(s.min(n - window));
                s += window;
            }
        }
    }
    starts
}

impl ImputerModel {
    /// Fills unobserved cells of a frame already in the model's standardised
    /// units. Overlapping window predictions are averaged; observed cells
    /// are left as they are.
    pub fn impute_standardized(&mut self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        let (c, t) = (self.config.n_channels, self.config.window_len);
        if frame.n_channels() != c {
            return Err(Error::Impute(format!(
                "frame has {} channels, model expects {c}",
                frame.n_channels()
            )));
        }
        if frame.is_complete() {
            return Ok(frame.clone());
        }
        if frame.len() < t {
            return Err(Error::Impute(format!(
                "frame of {} samples is shorter than the model window {t}",
                frame.len()
            )));
        }
        let missing: Vec<bool> = (0..frame.len())
            .map(|s| (0..c).any(|ch| !frame.is_observed(ch, s)))
            .collect();
        let starts = plan_windows(&missing, t);
        let n = frame.len();
        let mut sum = vec![0.0; c * n];
        let mut count = vec![0u32; c * n];
        for chunk in starts.chunks(INFERENCE_BATCH) {
            let mut values = Vec::with_capacity(chunk.len() * c * t);
            let mut visible = Vec::with_capacity(values.capacity());
            for &s in chunk {
                for ch in 0..c {
                    let x = &frame.channel(ch)[s..s + t];
                    let m = &frame.observed_mask(ch)[s..s + t];
                    values.extend(x.iter().zip(m).map(|(&v, &o)| if o { v } else { 0.0 }));
                    visible.extend_from_slice(m);
                }
            }
            let rec = self.reconstruct(&values, &visible, chunk.len())?;
            for (w, &s) in chunk.iter().enumerate() {
                for ch in 0..c {
                    for k in 0..t {
                        let i = ch * n + s + k;
                        sum[i] += rec[w * c * t + ch * t + k];
                        count[i] += 1;
                    }
                }
            }
        }
        let mut out = frame.clone();
        for ch in 0..c {
            for s in 0..n {
                if !frame.is_observed(ch, s) {
                    let i = ch * n + s;
                    debug_assert!(count[i] > 0, "planner left ({ch}, {s}) uncovered");
                    out.set(ch, s, sum[i] / count[i] as f64);
                }
            }
        }
        Ok(out)
    }

    /// Standardises with the embedded stats, fills, and maps back to raw
    /// units. Without stats the frame is taken as already standardised.
    pub fn impute(&mut self, frame: &TimeSeriesFrame) -> Result<TimeSeriesFrame> {
        match self.stats.clone() {
            Some(stats) => {
                let z = stats.transform(frame)?;
                let filled = self.impute_standardized(&z)?;
                let mut out = stats.inverse(&filled)?;
                // keep observed cells bit-identical to the input
                for ch in 0..frame.n_channels() {
                    for s in 0..frame.len() {
                        if let Some(v) = frame.value(ch, s) {
                            out.set(ch, s, v);
                        }
                    }
                }
                Ok(out)
            }
            None => self.impute_standardized(frame),
        }
    }

    /// Number of forward windows [`ImputerModel::impute_standardized`] would run.
    pub fn windows_needed(&self, frame: &TimeSeriesFrame) -> usize {
        let missing: Vec<bool> = (0..frame.len())
            .map(|s| (0..frame.n_channels()).any(|ch| !frame.is_observed(ch, s)))
            .collect();
        plan_windows(&missing, self.config.window_len).len()
    }
}
