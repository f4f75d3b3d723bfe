use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::frame::TimeSeriesFrame;

/// Fixed-length, single-label slice of a frame.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct LabeledWindow {
    /// Channel-major `n_channels x len` values.
    pub values: Vec<f64>,
    pub n_channels: usize,
    pub label: usize,
    pub subject_id: String,
    /// Offset of the first reading in the source frame.
    pub offset: usize,
}

impl LabeledWindow {
    pub fn len(&self) -> usize {
        self.values.len() / self.n_channels.max(1)
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn channel(&self, c: usize) -> &[f64] {
        let w = self.len();
        &self.values[c * w..(c + 1) * w]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [f64] {
        let w = self.len();
        &mut self.values[c * w..(c + 1) * w]
    }
}

/// Start offsets `0, stride, 2*stride, ...` with `offset + window <= len`.
pub fn slice_windows(len: usize, window: usize, stride: usize) -> Vec<usize> {
    if window == 0 || stride == 0 || window > len {
        return Vec::new();
    }
    (0..=(len - window) / stride).map(|i| i * stride).collect()
}

/// Label-homogeneous window starts.
///
/// A tentative window that contains a label change is dropped and the next
/// attempt starts at the first reading carrying the new label; readings
/// skipped this way are discarded.
pub fn label_homogeneous_offsets<L: PartialEq>(labels: &[L], window: usize, stride: usize) -> Vec<usize> {
    let mut out = Vec::new();
    if window == 0 || stride == 0 {
        return out;
    }
    let mut start = 0;
    while start + window <= labels.len() {
        let first = &labels[start];
        match labels[start..start + window].iter().position(|l| l != first) {
            None => {
                out.push(start);
                start += stride;
            }
            Some(k) => start += k,
        }
    }
    out
}

/// Cuts label-homogeneous windows out of a fully observed frame. Readings
/// whose label is `None` never appear in an emitted window.
pub fn slice_labeled_windows(
    frame: &TimeSeriesFrame,
    labels: &[Option<usize>],
    window: usize,
    stride: usize,
) -> Result<Vec<LabeledWindow>> {
    if labels.len() != frame.len() {
        return Err(Error::Frame(format!(
            "{} labels for {} readings",
            labels.len(),
            frame.len()
        )));
    }
    let mut out = Vec::new();
    for start in label_homogeneous_offsets(labels, window, stride) {
        let Some(label) = labels[start] else { continue };
        out.push(window_at(frame, start, window, label)?);
    }
    Ok(out)
}

pub(crate) fn window_at(
    frame: &TimeSeriesFrame,
    start: usize,
    window: usize,
    label: usize,
) -> Result<LabeledWindow> {
    let mut values = Vec::with_capacity(frame.n_channels() * window);
    for c in 0..frame.n_channels() {
        let x = &frame.channel(c)[start..start + window];
        if x.iter().any(|v| !v.is_finite()) {
            return Err(Error::Frame(format!(
                "window at {start} covers unobserved cells in channel {}",
                frame.channels()[c].name
            )));
        }
        values.extend_from_slice(x);
    }
    Ok(LabeledWindow {
        values,
        n_channels: frame.n_channels(),
        label,
        subject_id: frame.subject_id.clone(),
        offset: start,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn window_counts() {
        assert_eq!(slice_windows(256, 128, 64), vec![0, 64, 128]);
        assert_eq!(slice_windows(128, 128, 64), vec![0]);
        assert!(slice_windows(127, 128, 64).is_empty());
    }

    #[test]
    fn homogeneous_single_label() {
        let labels = vec![0u8; 480];
        assert_eq!(label_homogeneous_offsets(&labels, 240, 239), vec![0, 239]);
    }

    #[test]
    fn label_change_restarts_at_new_label() {
        let mut labels = vec![0u8; 300];
        labels.extend(vec![1u8; 300]);
        assert_eq!(label_homogeneous_offsets(&labels, 240, 239), vec![0, 300]);
    }

    #[test]
    fn alternating_labels_yield_nothing() {
        let labels: Vec<u8> = (0..1200).map(|i| ((i / 100) % 2) as u8).collect();
        assert!(label_homogeneous_offsets(&labels, 240, 239).is_empty());
    }
}
