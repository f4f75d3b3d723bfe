//! Butterworth low-pass design, zero-phase application, median smoothing and
//! gravity removal.

use std::f64::consts::PI;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Cutoff of the gravity-separation low-pass.
pub const GRAVITY_CUTOFF_HZ: f64 = 0.3;
/// Order of the gravity-separation low-pass.
pub const GRAVITY_FILTER_ORDER: usize = 3;

/// One second-order section, `a[0] == 1`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct Biquad {
    pub b: [f64; 3],
    pub a: [f64; 3],
}

impl Biquad {
    fn dc_gain(&self) -> f64 {
        (self.b[0] + self.b[1] + self.b[2]) / (self.a[0] + self.a[1] + self.a[2])
    }

    /// Direct form II transposed state for a constant input `u` at steady state.
    fn steady_state(&self, u: f64) -> [f64; 2] {
        let y = self.dc_gain() * u;
        let s2 = self.b[2] * u - self.a[2] * y;
        let s1 = self.b[1] * u - self.a[1] * y + s2;
        [s1, s2]
    }

    fn run(&self, x: &mut [f64], mut state: [f64; 2]) {
        let [b0, b1, b2] = self.b;
        let [_, a1, a2] = self.a;
        for v in x.iter_mut() {
            let input = *v;
            let y = b0 * input + state[0];
            state[0] = b1 * input - a1 * y + state[1];
            state[1] = b2 * input - a2 * y;
            *v = y;
        }
    }
}

/// Cascade of biquads designed at a fixed sample rate.
#[derive(Debug, Clone, PartialEq)]
pub struct SosFilter {
    pub sections: Vec<Biquad>,
    pub order: usize,
    pub sample_rate_hz: f64,
}

impl SosFilter {
    /// |H(e^{jw})| at `freq_hz`.
    pub fn magnitude(&self, freq_hz: f64) -> f64 {
        let w = 2.0 * PI * freq_hz / self.sample_rate_hz;
        let (c1, s1, c2, s2) = (w.cos(), w.sin(), (2.0 * w).cos(), (2.0 * w).sin());
        self.sections
            .iter()
            .map(|sec| {
                let nr = sec.b[0] + sec.b[1] * c1 + sec.b[2] * c2;
                let ni = -(sec.b[1] * s1 + sec.b[2] * s2);
                let dr = sec.a[0] + sec.a[1] * c1 + sec.a[2] * c2;
                let di = -(sec.a[1] * s1 + sec.a[2] * s2);
                ((nr * nr + ni * ni) / (dr * dr + di * di)).sqrt()
            })
            .product()
    }

    /// Causal pass starting from the steady state of `x[0]`.
    fn run_steady(&self, x: &mut [f64]) {
        let Some(&first) = x.first() else { return };
        let mut level = first;
        for sec in &self.sections {
            let state = sec.steady_state(level);
            sec.run(x, state);
            level *= sec.dc_gain();
        }
    }

    /// Causal filtering from a zero initial state.
    pub fn apply(&self, x: &[f64]) -> Vec<f64> {
        let mut y = x.to_vec();
        for sec in &self.sections {
            sec.run(&mut y, [0.0, 0.0]);
        }
        y
    }
}

/// Butterworth low-pass via the bilinear transform with frequency
/// pre-warping, realised as second-order sections (plus one first-order
/// section for odd orders). Each section has unit DC gain.
pub fn design_butterworth(order: usize, cutoff_hz: f64, sample_rate_hz: f64) -> Result<SosFilter> {
    if order == 0 {
        return Err(Error::Filter("order must be positive".into()));
    }
    let nyquist = sample_rate_hz / 2.0;
    if !(cutoff_hz > 0.0 && cutoff_hz < nyquist) {
        return Err(Error::Filter(format!(
            "cutoff {cutoff_hz} Hz must lie in (0, {nyquist}) for sample rate {sample_rate_hz} Hz"
        )));
    }
    // Pre-warped analog cutoff, normalised by 2*fs.
    let w = (PI * cutoff_hz / sample_rate_hz).tan();
    let w2 = w * w;
    let mut sections = Vec::with_capacity(order.div_ceil(2));
    for k in 0..order / 2 {
        // s^2 + 2 sin(theta_k) s + 1
        let a = 2.0 * (PI * (2 * k + 1) as f64 / (2 * order) as f64).sin();
        let a0 = 1.0 + a * w + w2;
        sections.push(Biquad {
            b: [w2 / a0, 2.0 * w2 / a0, w2 / a0],
            a: [1.0, (2.0 * w2 - 2.0) / a0, (1.0 - a * w + w2) / a0],
        });
    }
    if order % 2 == 1 {
        let a0 = 1.0 + w;
        sections.push(Biquad {
            b: [w / a0, w / a0, 0.0],
            a: [1.0, (w - 1.0) / a0, 0.0],
        });
    }
    Ok(SosFilter {
        sections,
        order,
        sample_rate_hz,
    })
}

/// Padding applied on each side by [`filtfilt`].
pub fn filtfilt_padding(filter: &SosFilter) -> usize {
    3 * filter.order
}

/// Zero-phase forward-backward filtering with odd reflective padding of
/// `3 * order` samples and steady-state initial conditions.
pub fn filtfilt(signal: &[f64], filter: &SosFilter) -> Result<Vec<f64>> {
    let pad = filtfilt_padding(filter);
    let n = signal.len();
    if n <= pad {
        return Err(Error::Filter(format!(
            "signal of {n} samples is too short for zero-phase filtering (needs more than {pad})"
        )));
    }
    if signal.iter().any(|v| !v.is_finite()) {
        return Err(Error::Filter("signal contains non-finite values".into()));
    }
    let mut ext = Vec::with_capacity(n + 2 * pad);
    let (first, last) = (signal[0], signal[n - 1]);
    ext.extend((1..=pad).rev().map(|i| 2.0 * first - signal[i]));
    ext.extend_from_slice(signal);
    ext.extend((1..=pad).map(|i| 2.0 * last - signal[n - 1 - i]));

    filter.run_steady(&mut ext);
    ext.reverse();
    filter.run_steady(&mut ext);
    ext.reverse();
    Ok(ext[pad..pad + n].to_vec())
}

/// Sliding median of odd `width`; edges use the nearest sample as padding.
pub fn median_filter(signal: &[f64], width: usize) -> Result<Vec<f64>> {
    if width == 0 || width % 2 == 0 {
        return Err(Error::Filter(format!("median kernel width {width} must be odd")));
    }
    let half = width / 2;
    let n = signal.len();
    let mut buf = Vec::with_capacity(width);
    Ok((0..n)
        .map(|i| {
            buf.clear();
            for k in 0..width {
                let j = (i + k).saturating_sub(half).min(n - 1);
                buf.push(signal[j]);
            }
            buf.sort_by(f64::total_cmp);
            buf[half]
        })
        .collect())
}

/// Subtracts each axis' low-frequency (gravity) component.
pub fn remove_gravity(axes: &[Vec<f64>], sample_rate_hz: f64) -> Result<Vec<Vec<f64>>> {
    if axes.len() != 3 {
        return Err(Error::Filter(format!(
            "gravity removal expects 3 axes, got {}",
            axes.len()
        )));
    }
    let lp = design_butterworth(GRAVITY_FILTER_ORDER, GRAVITY_CUTOFF_HZ, sample_rate_hz)?;
    axes.iter()
        .map(|x| {
            let gravity = filtfilt(x, &lp)?;
            Ok(x.iter().zip(&gravity).map(|(a, g)| a - g).collect())
        })
        .collect()
}

/// Declarative single-channel filter.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum FilterSpec {
    ButterworthLowpass { order: usize, cutoff_hz: f64 },
    Median { kernel_width: usize },
}

impl FilterSpec {
    pub fn apply(&self, signal: &[f64], sample_rate_hz: f64) -> Result<Vec<f64>> {
        match *self {
            FilterSpec::ButterworthLowpass { order, cutoff_hz } => {
                filtfilt(signal, &design_butterworth(order, cutoff_hz, sample_rate_hz)?)
            }
            FilterSpec::Median { kernel_width } => median_filter(signal, kernel_width),
        }
    }
}
