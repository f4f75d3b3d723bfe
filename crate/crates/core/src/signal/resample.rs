use crate::error::{Error, Result};
use crate::signal::filter::{design_butterworth, filtfilt};
use crate::signal::frame::TimeSeriesFrame;

/// Anti-alias cutoff as a fraction of the target rate.
pub const ANTI_ALIAS_FRACTION: f64 = 0.45;
pub const ANTI_ALIAS_ORDER: usize = 4;

/// Integer ratio between two rates, or an error explaining what is supported.
pub fn decimation_factor(source_hz: f64, target_hz: f64) -> Result<usize> {
    if !(target_hz > 0.0) || target_hz > source_hz {
        return Err(Error::Resample(format!(
            "target rate {target_hz} Hz must be positive and at most the source rate {source_hz} Hz"
        )));
    }
    let ratio = source_hz / target_hz;
    let factor = ratio.round();
    if (ratio - factor).abs() > 1e-9 * ratio {
        return Err(Error::Resample(format!(
            "{source_hz} Hz -> {target_hz} Hz is not an integer decimation; choose a target that divides the source rate"
        )));
    }
    Ok(factor as usize)
}

/// Keeps every `factor`-th sample. An output cell is observed only when all
/// `factor` input cells it covers are observed. Output length is
/// `floor(len / factor)`.
pub fn decimate(frame: &TimeSeriesFrame, factor: usize) -> Result<TimeSeriesFrame> {
    if factor == 0 {
        return Err(Error::Resample("decimation factor must be positive".into()));
    }
    let out_len = frame.len() / factor;
    let mut series = Vec::with_capacity(frame.n_channels());
    let mut masks = Vec::with_capacity(frame.n_channels());
    for c in 0..frame.n_channels() {
        let x = frame.channel(c);
        let m = frame.observed_mask(c);
        series.push((0..out_len).map(|k| x[k * factor]).collect());
        masks.push(
            (0..out_len)
                .map(|k| m[k * factor..(k + 1) * factor].iter().all(|&o| o))
                .collect(),
        );
    }
    let mut out = TimeSeriesFrame::with_mask(
        frame.channels().to_vec(),
        frame.sample_rate_hz() / factor as f64,
        series,
        masks,
    )?;
    out.subject_id = frame.subject_id.clone();
    out.start_time = frame.start_time;
    Ok(out)
}

/// Anti-aliased integer decimation to `target_hz`.
///
/// Missing cells are bridged by linear interpolation before filtering so the
/// filter sees a continuous signal; the decimated mask still reports them.
pub fn resample(frame: &TimeSeriesFrame, target_hz: f64) -> Result<TimeSeriesFrame> {
    let factor = decimation_factor(frame.sample_rate_hz(), target_hz)?;
    if factor == 1 {
        return Ok(frame.clone());
    }
    let lp = design_butterworth(
        ANTI_ALIAS_ORDER,
        ANTI_ALIAS_FRACTION * target_hz,
        frame.sample_rate_hz(),
    )?;
    let mut filtered = frame.clone();
    for c in 0..frame.n_channels() {
        if frame.observed_count_channel(c) == 0 {
            continue;
        }
        let bridged = crate::baselines::linear_fill(frame.channel(c), frame.observed_mask(c))?;
        let y = filtfilt(&bridged, &lp)?;
        let mask = frame.observed_mask(c).to_vec();
        for (t, v) in y.into_iter().enumerate() {
            if mask[t] {
                filtered.set(c, t, v);
            }
        }
    }
    decimate(&filtered, factor)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::frame::ChannelInfo;

    #[test]
    fn factor_checks() {
        assert_eq!(decimation_factor(64.0, 4.0).unwrap(), 16);
        assert_eq!(decimation_factor(32.0, 4.0).unwrap(), 8);
        assert_eq!(decimation_factor(4.0, 4.0).unwrap(), 1);
        let err = decimation_factor(50.0, 4.0).unwrap_err().to_string();
        assert!(err.contains("integer"), "{err}");
        assert!(decimation_factor(4.0, 8.0).is_err());
    }

    #[test]
    fn decimate_mask_is_conservative() {
        let f = TimeSeriesFrame::from_channels(
            vec![ChannelInfo::new("x")],
            4.0,
            vec![vec![1.0, 2.0, f64::NAN, 4.0, 5.0]],
        )
        .unwrap();
        let d = decimate(&f, 2).unwrap();
        assert_eq!(d.len(), 2);
        assert_eq!(d.observed_mask(0), &[true, false]);
        assert_eq!(d.sample_rate_hz(), 2.0);
    }
}
