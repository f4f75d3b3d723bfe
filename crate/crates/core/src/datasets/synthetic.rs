//! Seeded generators standing in for the wearable datasets.

use std::f64::consts::PI;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::{Distribution, Normal, Poisson};
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::{slice_labeled_windows, ChannelInfo, LabeledWindow, TimeSeriesFrame};

/// Shared driver of all dynamic channels in a frame: `n_components`
/// sinusoids with periods drawn per frame from `[min_period, max_period]`
/// plus an AR(1) process, mixed `1 - ar_weight : ar_weight` in variance.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct DynamicLatent {
    pub n_components: usize,
    pub min_period: f64,
    pub max_period: f64,
    pub ar_coef: f64,
    pub ar_weight: f64,
}

impl Default for DynamicLatent {
    fn default() -> Self {
        Self {
            n_components: 3,
            min_period: 15.0,
            max_period: 60.0,
            ar_coef: 0.7,
            ar_weight: 0.3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case", deny_unknown_fields)]
pub enum ChannelGenerator {
    /// `gain * latent + noise`.
    Dynamic { gain: f64, noise: f64 },
    /// Slow drift: two sinusoids with periods in `[min_period, max_period]`,
    /// a linear trend of `trend` per frame, and white noise.
    Smooth {
        min_period: f64,
        max_period: f64,
        trend: f64,
        noise: f64,
    },
    /// Mostly zero; bursts start with probability `burst_prob` per step,
    /// last 1 to `max_burst` steps and carry Poisson(`mean_count`) counts.
    Discrete {
        burst_prob: f64,
        max_burst: usize,
        mean_count: f64,
    },
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SyntheticChannel {
    pub name: String,
    pub generator: ChannelGenerator,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct SyntheticSpec {
    pub channels: Vec<SyntheticChannel>,
    #[serde(default)]
    pub latent: DynamicLatent,
    pub n_subjects: usize,
    pub days_per_subject: usize,
    pub samples_per_day: usize,
    pub sample_rate_hz: f64,
    pub seed: u64,
}

impl SyntheticSpec {
    /// Dynamic, smooth and discrete channels at one sample per minute, the
    /// taxonomy of the physiological benchmark.
    pub fn wearable(seed: u64) -> Self {
        let dynamic = |name: &str, gain: f64| SyntheticChannel {
            name: name.into(),
            generator: ChannelGenerator::Dynamic { gain, noise: 0.1 },
        };
        let smooth = |name: &str, trend: f64| SyntheticChannel {
            name: name.into(),
            generator: ChannelGenerator::Smooth {
                min_period: 600.0,
                max_period: 2400.0,
                trend,
                noise: 0.005,
            },
        };
        Self {
            channels: vec![
                dynamic("HR", 1.0),
                dynamic("RESP", -0.8),
                dynamic("ACC", 0.6),
                smooth("ST", 0.5),
                smooth("BAR", -1.0),
                SyntheticChannel {
                    name: "Step".into(),
                    generator: ChannelGenerator::Discrete {
                        burst_prob: 0.05,
                        max_burst: 1,
                        mean_count: 20.0,
                    },
                },
            ],
            latent: DynamicLatent::default(),
            n_subjects: 4,
            days_per_subject: 2,
            samples_per_day: 1440,
            sample_rate_hz: 1.0 / 60.0,
            seed,
        }
    }

    /// `n_channels` dynamic channels driven by a pure sinusoid mixture.
    pub fn sinusoid_mixture(n_channels: usize, seed: u64) -> Self {
        let gains = [1.0, -0.7, 0.5, 0.9, -1.2, 0.6, 0.8, -0.5];
        Self {
            channels: (0..n_channels)
                .map(|c| SyntheticChannel {
                    name: format!("s{c}"),
                    generator: ChannelGenerator::Dynamic {
                        gain: gains[c % gains.len()],
                        noise: 0.03,
                    },
                })
                .collect(),
            latent: DynamicLatent {
                n_components: 3,
                min_period: 10.0,
                max_period: 40.0,
                ar_coef: 0.0,
                ar_weight: 0.0,
            },
            n_subjects: 4,
            days_per_subject: 1,
            samples_per_day: 1440,
            sample_rate_hz: 1.0 / 60.0,
            seed,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: &str| Err(Error::Config(format!("synthetic spec: {m}")));
        if self.channels.is_empty() || self.n_subjects == 0 || self.days_per_subject == 0 {
            return bad("needs channels, subjects and days");
        }
        if self.samples_per_day < 2 || !(self.sample_rate_hz > 0.0) {
            return bad("samples_per_day must be at least 2 and the rate positive");
        }
        let l = &self.latent;
        if l.n_components == 0 || !(l.min_period >= 2.0 && l.min_period <= l.max_period) {
            return bad("latent needs components and periods >= 2");
        }
        if !(0.0..1.0).contains(&l.ar_coef) || !(0.0..=1.0).contains(&l.ar_weight) {
            return bad("ar_coef must lie in [0, 1) and ar_weight in [0, 1]");
        }
        for ch in &self.channels {
            match ch.generator {
                ChannelGenerator::Dynamic { noise, .. } | ChannelGenerator::Smooth { noise, .. }
                    if noise < 0.0 =>
                {
                    return bad("noise must be non-negative")
                }
                ChannelGenerator::Smooth { min_period, max_period, .. }
                    if !(min_period >= 2.0 && min_period <= max_period) =>
                {
                    return bad("smooth periods must satisfy 2 <= min <= max")
                }
                ChannelGenerator::Discrete { burst_prob, max_burst, mean_count }
                    if !(0.0..1.0).contains(&burst_prob) || max_burst == 0 || !(mean_count > 0.0) =>
                {
                    return bad("discrete channel parameters out of range")
                }
                _ => {}
            }
        }
        Ok(())
    }
}

fn latent_series<R: Rng + ?Sized>(spec: &DynamicLatent, n: usize, rng: &mut R) -> Vec<f64> {
    let k = spec.n_components;
    let comps: Vec<(f64, f64, f64)> = (0..k)
        .map(|_| {
            let period = rng.random_range(spec.min_period..=spec.max_period);
            let phase = rng.random_range(0.0..2.0 * PI);
            let amp = rng.random_range(0.5..1.5);
            (period, phase, amp)
        })
        .collect();
    let power: f64 = comps.iter().map(|c| c.2 * c.2 / 2.0).sum();
    let sin_scale = (1.0 - spec.ar_weight).sqrt() / power.sqrt();
    let innov = Normal::new(0.0, (1.0 - spec.ar_coef * spec.ar_coef).sqrt()).expect("valid std");
    let ar_scale = spec.ar_weight.sqrt();
    let mut ar = innov.sample(rng) / (1.0 - spec.ar_coef * spec.ar_coef).sqrt();
    (0..n)
        .map(|t| {
            let s: f64 = comps
                .iter()
                .map(|&(p, ph, a)| a * (2.0 * PI * t as f64 / p + ph).sin())
                .sum();
            let v = sin_scale * s + ar_scale * ar;
            ar = spec.ar_coef * ar + innov.sample(rng);
            v
        })
        .collect()
}

fn channel_series<R: Rng + ?Sized>(
    gen: &ChannelGenerator,
    latent: &[f64],
    rng: &mut R,
) -> Vec<f64> {
    let n = latent.len();
    let std_normal = Normal::new(0.0, 1.0).expect("valid std");
    match *gen {
        ChannelGenerator::Dynamic { gain, noise } => latent
            .iter()
            .map(|&z| gain * z + noise * std_normal.sample(rng))
            .collect(),
        ChannelGenerator::Smooth {
            min_period,
            max_period,
            trend,
            noise,
        } => {
            let p1 = rng.random_range(min_period..=max_period);
            let p2 = rng.random_range(min_period..=max_period);
            let (f1, f2) = (rng.random_range(0.0..2.0 * PI), rng.random_range(0.0..2.0 * PI));
            let level = rng.random_range(-1.0..1.0);
            (0..n)
                .map(|t| {
                    let u = t as f64;
                    level
                        + (2.0 * PI * u / p1 + f1).sin()
                        + 0.5 * (2.0 * PI * u / p2 + f2).sin()
                        + trend * u / n as f64
                        + noise * std_normal.sample(rng)
                })
                .collect()
        }
        ChannelGenerator::Discrete {
            burst_prob,
            max_burst,
            mean_count,
        } => {
            let counts = Poisson::new(mean_count).expect("positive mean");
            let mut out = vec![0.0; n];
            let mut t = 0;
            while t < n {
                if rng.random::<f64>() < burst_prob {
                    let len = rng.random_range(1..=max_burst);
                    for v in out.iter_mut().skip(t).take(len) {
                        *v = counts.sample(rng);
                    }
                    t += len;
                } else {
                    t += 1;
                }
            }
            out
        }
    }
}

/// One complete frame per subject-day, in subject order, deterministic per
/// seed. Subject ids are `S01`, `S02`, ...
pub fn generate_synthetic(spec: &SyntheticSpec) -> Result<Vec<TimeSeriesFrame>> {
    spec.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let infos: Vec<ChannelInfo> = spec
        .channels
        .iter()
        .map(|c| {
            let kind = match c.generator {
                ChannelGenerator::Dynamic { .. } => "dynamic",
                ChannelGenerator::Smooth { .. } => "smooth",
                ChannelGenerator::Discrete { .. } => "discrete",
            };
            ChannelInfo::new(c.name.clone()).with_source(kind)
        })
        .collect();
    let mut frames = Vec::with_capacity(spec.n_subjects * spec.days_per_subject);
    for s in 0..spec.n_subjects {
        for d in 0..spec.days_per_subject {
            let latent = latent_series(&spec.latent, spec.samples_per_day, &mut rng);
            let series = spec
                .channels
                .iter()
                .map(|c| channel_series(&c.generator, &latent, &mut rng))
                .collect();
            frames.push(
                TimeSeriesFrame::from_channels(infos.clone(), spec.sample_rate_hz, series)?
                    .with_subject(format!("S{:02}", s + 1))
                    .with_start_time(d as f64 * 86_400.0),
            );
        }
    }
    Ok(frames)
}

/// Activity-recognition analogue: six inertial-like channels whose
/// oscillation frequencies, amplitudes and cross-channel coupling depend on
/// the activity class.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct HarSpec {
    pub n_subjects: usize,
    /// Activity bouts per subject; each class appears in turn.
    pub bouts_per_subject: usize,
    pub bout_len: usize,
    pub window_len: usize,
    pub stride: usize,
    pub noise: f64,
    pub seed: u64,
}

impl Default for HarSpec {
    fn default() -> Self {
        Self {
            n_subjects: 6,
            bouts_per_subject: 6,
            bout_len: 320,
            window_len: 128,
            stride: 64,
            noise: 0.3,
            seed: 0,
        }
    }
}

pub const HAR_CLASSES: [&str; 6] = ["walking", "upstairs", "downstairs", "sitting", "standing", "laying"];
pub const HAR_CHANNELS: [&str; 6] = ["acc_x", "acc_y", "acc_z", "gyro_x", "gyro_y", "gyro_z"];

/// Per-class (period in samples, amplitude) of the shared movement driver.
const HAR_PATTERNS: [(f64, f64); 6] = [(16.0, 1.0), (20.0, 1.0), (12.0, 1.0), (24.0, 0.35), (18.0, 0.35), (30.0, 0.35)];

/// Per-class channel gains applied to the driver.
const HAR_GAINS: [[f64; 6]; 6] = [
    [1.0, 0.5, -0.5, 0.8, -0.3, 0.2],
    [1.0, -0.5, 0.5, -0.8, 0.3, 0.2],
    [0.5, 1.0, 0.5, 0.2, 0.8, -0.3],
    [0.5, -1.0, 0.5, 0.2, -0.8, 0.3],
    [-0.5, 0.5, 1.0, 0.3, 0.2, 0.8],
    [0.5, 0.5, -1.0, -0.3, 0.2, -0.8],
];

/// Continuous per-subject recordings plus per-reading labels.
pub fn generate_har_frames(spec: &HarSpec) -> Result<Vec<(TimeSeriesFrame, Vec<Option<usize>>)>> {
    if spec.n_subjects == 0 || spec.bouts_per_subject == 0 || spec.bout_len < spec.window_len {
        return Err(Error::Config("har spec needs subjects, bouts and bouts at least one window long".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(spec.seed);
    let noise = Normal::new(0.0, spec.noise.max(0.0)).expect("valid std");
    let infos: Vec<ChannelInfo> = HAR_CHANNELS.iter().map(|n| ChannelInfo::new(*n)).collect();
    let mut out = Vec::with_capacity(spec.n_subjects);
    for s in 0..spec.n_subjects {
        let subject_gain = rng.random_range(0.8..1.2);
        let n = spec.bouts_per_subject * spec.bout_len;
        let mut series = vec![Vec::with_capacity(n); 6];
        let mut labels = Vec::with_capacity(n);
        for b in 0..spec.bouts_per_subject {
            let class = (b + s) % HAR_CLASSES.len();
            let (period, amp) = HAR_PATTERNS[class];
            let period = period * rng.random_range(0.95..1.05);
            let phase = rng.random_range(0.0..2.0 * PI);
            for t in 0..spec.bout_len {
                let u = t as f64;
                let drive = amp * subject_gain * (2.0 * PI * u / period + phase).sin();
                let harmonic = 0.3 * amp * (4.0 * PI * u / period + 2.0 * phase).sin();
                for (c, ch) in series.iter_mut().enumerate() {
                    let g = HAR_GAINS[class][c];
                    let h = if c < 3 { harmonic } else { -harmonic };
                    ch.push(g * drive + h + noise.sample(&mut rng));
                }
                labels.push(Some(class));
            }
        }
        let frame = TimeSeriesFrame::from_channels(infos.clone(), 50.0, series)?
            .with_subject(format!("S{:02}", s + 1));
        out.push((frame, labels));
    }
    Ok(out)
}

/// Label-homogeneous windows of [`generate_har_frames`].
pub fn generate_har(spec: &HarSpec) -> Result<Vec<LabeledWindow>> {
    let mut windows = Vec::new();
    for (frame, labels) in generate_har_frames(spec)? {
        windows.extend(slice_labeled_windows(&frame, &labels, spec.window_len, spec.stride)?);
    }
    Ok(windows)
}
