//! Closed-form single-channel imputers.
//!
//! Every strategy takes a series plus its observation mask and returns a
//! fully observed copy. Observed cells are copied through untouched.

use std::collections::BTreeMap;
use std::fmt;
use std::str::FromStr;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSeriesFrame;

/// Values are rounded to this many decimals before counting for the mode.
pub const MODE_DECIMALS: i32 = 6;

/// Imputation strategy, written in configs as `mean`, `median`, `mode`,
/// `nearest`, `linear`, `spline` (cubic), `spline:3`, `spline:2`,
/// `quadratic` or `transformer`.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub enum Strategy {
    Mean,
    Median,
    Mode,
    Nearest,
    Linear,
    Spline { order: u8 },
    Transformer,
}

impl Strategy {
    pub const BASELINES: [Strategy; 7] = [
        Strategy::Linear,
        Strategy::Mean,
        Strategy::Median,
        Strategy::Mode,
        Strategy::Nearest,
        Strategy::Spline { order: 3 },
        Strategy::Spline { order: 2 },
    ];

    pub fn is_baseline(&self) -> bool {
        !matches!(self, Strategy::Transformer)
    }
}

impl fmt::Display for Strategy {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            Strategy::Mean => f.write_str("mean"),
            Strategy::Median => f.write_str("median"),
            Strategy::Mode => f.write_str("mode"),
            Strategy::Nearest => f.write_str("nearest"),
            Strategy::Linear => f.write_str("linear"),
            Strategy::Spline { order: 2 } => f.write_str("quadratic"),
            Strategy::Spline { order } => write!(f, "spline:{order}"),
            Strategy::Transformer => f.write_str("transformer"),
        }
    }
}

impl FromStr for Strategy {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        let s = s.trim().to_ascii_lowercase();
        let strategy = match s.as_str() {
            "mean" => Strategy::Mean,
            "median" => Strategy::Median,
            "mode" => Strategy::Mode,
            "nearest" => Strategy::Nearest,
            "linear" => Strategy::Linear,
            "spline" | "cubic" => Strategy::Spline { order: 3 },
            "quadratic" => Strategy::Spline { order: 2 },
            "transformer" => Strategy::Transformer,
            other => match other.strip_prefix("spline:") {
                Some(order) => match order.parse::<u8>() {
                    Ok(o @ (2 | 3)) => Strategy::Spline { order: o },
                    _ => {
                        return Err(Error::Config(format!(
                            "spline order must be 2 or 3, got `{order}`"
                        )))
                    }
                },
                None => return Err(Error::Config(format!("unknown strategy `{other}`"))),
            },
        };
        Ok(strategy)
    }
}

impl Serialize for Strategy {
    fn serialize<S: serde::Serializer>(&self, s: S) -> std::result::Result<S::Ok, S::Error> {
        s.collect_str(self)
    }
}

impl<'de> Deserialize<'de> for Strategy {
    fn deserialize<D: serde::Deserializer<'de>>(d: D) -> std::result::Result<Self, D::Error> {
        let s = String::deserialize(d)?;
        s.parse().map_err(serde::de::Error::custom)
    }
}

fn check(values: &[f64], observed: &[bool]) -> Result<()> {
    if values.len() != observed.len() {
        return Err(Error::Impute(format!(
            "{} values but {} mask cells",
            values.len(),
            observed.len()
        )));
    }
    if !observed.iter().any(|&o| o) {
        return Err(Error::Impute("series has no observed points".into()));
    }
    if values.iter().zip(observed).any(|(v, &o)| o && !v.is_finite()) {
        return Err(Error::Impute("observed point is not finite".into()));
    }
    Ok(())
}

fn observed_values(values: &[f64], observed: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(observed)
        .filter(|(_, &o)| o)
        .map(|(&v, _)| v)
        .collect()
}

fn fill_constant(values: &[f64], observed: &[bool], fill: f64) -> Vec<f64> {
    values
        .iter()
        .zip(observed)
        .map(|(&v, &o)| if o { v } else { fill })
        .collect()
}

pub fn mean(xs: &[f64]) -> f64 {
    xs.iter().sum::<f64>() / xs.len() as f64
}

pub fn median(xs: &[f64]) -> f64 {
    let mut s = xs.to_vec();
    s.sort_by(f64::total_cmp);
    let n = s.len();
    if n % 2 == 1 {
        s[n / 2]
    } else {
        (s[n / 2 - 1] + s[n / 2]) / 2.0
    }
}

/// Most frequent value after rounding to [`MODE_DECIMALS`]; ties go to the
/// smallest value. Returns the smallest observed member of the winning
/// bucket, so the fill is always a value that was actually seen.
pub fn mode(xs: &[f64]) -> f64 {
    let scale = 10f64.powi(MODE_DECIMALS);
    let mut buckets: BTreeMap<i64, (usize, f64)> = BTreeMap::new();
    for &x in xs {
        let b = buckets.entry((x * scale).round() as i64).or_insert((0, x));
        b.0 += 1;
        b.1 = b.1.min(x);
    }
    let mut best = (0usize, f64::NAN);
    for &(n, x) in buckets.values() {
        if n > best.0 {
            best = (n, x);
        }
    }
    best.1
}

pub fn impute_mean(values: &[f64], observed: &[bool]) -> Result<Vec<f64>> {
    check(values, observed)?;
    Ok(fill_constant(values, observed, mean(&observed_values(values, observed))))
}

pub fn impute_median(values: &[f64], observed: &[bool]) -> Result<Vec<f64>> {
    check(values, observed)?;
    Ok(fill_constant(values, observed, median(&observed_values(values, observed))))
}

pub fn impute_mode(values: &[f64], observed: &[bool]) -> Result<Vec<f64>> {
    check(values, observed)?;
    Ok(fill_constant(values, observed, mode(&observed_values(values, observed))))
}

/// Anchor indices immediately before and after each cell.
fn anchors(observed: &[bool]) -> (Vec<Option<usize>>, Vec<Option<usize>>) {
    let n = observed.len();
    let mut prev = vec![None; n];
    let mut next = vec![None; n];
    let mut last = None;
    for t in 0..n {
        if observed[t] {
            last = Some(t);
        }
        prev[t] = last;
    }
    last = None;
    for t in (0..n).rev() {
        if observed[t] {
            last = Some(t);
        }
        next[t] = last;
    }
    (prev, next)
}

/// Temporally nearest observed value; equidistant cells take the earlier one.
pub fn impute_nearest(values: &[f64], observed: &[bool]) -> Result<Vec<f64>> {
    check(values, observed)?;
    let (prev, next) = anchors(observed);
    Ok((0..values.len())
        .map(|t| match (prev[t], next[t]) {
            (Some(p), Some(q)) => {
                if t - p <= q - t {
                    values[p]
                } else {
                    values[q]
                }
            }
            (Some(p), None) => values[p],
            (None, Some(q)) => values[q],
            (None, None) => unreachable!("checked for observed points"),
        })
        .collect())
}

/// Straight lines between gap anchors; boundary gaps repeat the nearest value.
pub fn impute_linear(values: &[f64], observed: &[bool]) -> Result<Vec<f64>> {
    check(values, observed)?;
    Ok(linear_unchecked(values, observed))
}

fn linear_unchecked(values: &[f64], observed: &[bool]) -> Vec<f64> {
    let (prev, next) = anchors(observed);
    (0..values.len())
        .map(|t| {
            if observed[t] {
                return values[t];
            }
            match (prev[t], next[t]) {
                (Some(p), Some(q)) => {
                    let w = (t - p) as f64 / (q - p) as f64;
                    values[p] + w * (values[q] - values[p])
                }
                (Some(p), None) => values[p],
                (None, Some(q)) => values[q],
                (None, None) => f64::NAN,
            }
        })
        .collect()
}

/// Linear bridging used internally by the resampler.
pub(crate) fn linear_fill(values: &[f64], observed: &[bool]) -> Result<Vec<f64>> {
    impute_linear(values, observed)
}

/// Interpolating spline through the observed points. Cells outside the first
/// and last anchors use nearest-value extension.
///
/// Order 3 is a cubic spline with not-a-knot end conditions, which reproduces
/// cubic polynomials exactly. Order 2 is a piecewise quadratic: each interval
/// takes the mean of the parabolas through its two anchors plus the previous
/// or the next anchor (only one exists at the ends). It is continuous and
/// reproduces quadratics exactly.
pub fn impute_spline(values: &[f64], observed: &[bool], order: u8) -> Result<Vec<f64>> {
    check(values, observed)?;
    if !matches!(order, 2 | 3) {
        return Err(Error::Impute(format!("spline order must be 2 or 3, got {order}")));
    }
    if observed.iter().all(|&o| o) {
        return Ok(values.to_vec());
    }
    let xs: Vec<f64> = (0..values.len()).filter(|&t| observed[t]).map(|t| t as f64).collect();
    let ys = observed_values(values, observed);
    if xs.len() < order as usize + 1 {
        return Err(Error::Impute(format!(
            "order-{order} spline needs at least {} observed points, got {}",
            order + 1,
            xs.len()
        )));
    }
    let spline: Box<dyn Fn(usize, f64) -> f64> = if order == 3 {
        let m = cubic_not_a_knot(&xs, &ys);
        Box::new(move |i, t| cubic_eval(&xs, &ys, &m, i, t))
    } else {
        Box::new(move |i, t| quadratic_eval(&xs, &ys, i, t))
    };
    let (prev, next) = anchors(observed);
    let mut out = values.to_vec();
    let mut segment = 0;
    for t in 0..values.len() {
        if observed[t] {
            if t > 0 && prev[t - 1].is_some() {
                segment += 1;
            }
            continue;
        }
        out[t] = match (prev[t], next[t]) {
            (Some(_), Some(_)) => spline(segment, t as f64),
            (Some(p), None) => values[p],
            (None, Some(q)) => values[q],
            (None, None) => unreachable!("checked for observed points"),
        };
    }
    Ok(out)
}

/// Second derivatives at the knots for a not-a-knot cubic spline (n >= 4).
fn cubic_not_a_knot(xs: &[f64], ys: &[f64]) -> Vec<f64> {
    let n = xs.len();
    let h: Vec<f64> = xs.windows(2).map(|w| w[1] - w[0]).collect();
    let d: Vec<f64> = (0..n - 1).map(|i| (ys[i + 1] - ys[i]) / h[i]).collect();
    // Unknowns M_1..M_{n-2}; M_0 and M_{n-1} are eliminated through the
    // not-a-knot conditions (third derivative continuous at x_1 and x_{n-2}).
    let k = n - 2;
    let mut sub = vec![0.0; k];
    let mut diag = vec![0.0; k];
    let mut sup = vec![0.0; k];
    let mut rhs = vec![0.0; k];
    for j in 0..k {
        let i = j + 1;
        sub[j] = h[i - 1];
        diag[j] = 2.0 * (h[i - 1] + h[i]);
        sup[j] = h[i];
        rhs[j] = 6.0 * (d[i] - d[i - 1]);
    }
    let (h0, h1) = (h[0], h[1]);
    diag[0] += h0 * (h0 + h1) / h1;
    sup[0] -= h0 * h0 / h1;
    let (ha, hb) = (h[n - 3], h[n - 2]);
    diag[k - 1] += hb * (ha + hb) / ha;
    sub[k - 1] -= hb * hb / ha;
    let inner = thomas(&sub, &diag, &sup, &rhs);
    let mut m = Vec::with_capacity(n);
    m.push(((h0 + h1) * inner[0] - h0 * inner[1]) / h1);
    m.extend_from_slice(&inner);
    m.push(((ha + hb) * inner[k - 1] - hb * inner[k - 2]) / ha);
    m
}

fn thomas(sub: &[f64], diag: &[f64], sup: &[f64], rhs: &[f64]) -> Vec<f64> {
    let n = diag.len();
    let mut c = vec![0.0; n];
    let mut d = vec![0.0; n];
    c[0] = sup[0] / diag[0];
    d[0] = rhs[0] / diag[0];
    for i in 1..n {
        let denom = diag[i] - sub[i] * c[i - 1];
        c[i] = sup[i] / denom;
        d[i] = (rhs[i] - sub[i] * d[i - 1]) / denom;
    }
    let mut x = vec![0.0; n];
    x[n - 1] = d[n - 1];
    for i in (0..n - 1).rev() {
        x[i] = d[i] - c[i] * x[i + 1];
    }
    x
}

fn cubic_eval(xs: &[f64], ys: &[f64], m: &[f64], i: usize, t: f64) -> f64 {
    let h = xs[i + 1] - xs[i];
    let a = xs[i + 1] - t;
    let b = t - xs[i];
    m[i] * a * a * a / (6.0 * h)
        + m[i + 1] * b * b * b / (6.0 * h)
        + (ys[i] / h - m[i] * h / 6.0) * a
        + (ys[i + 1] / h - m[i + 1] * h / 6.0) * b
}

/// Newton form of the parabola through anchors `j`, `j + 1`, `j + 2`.
fn parabola(xs: &[f64], ys: &[f64], j: usize, t: f64) -> f64 {
    let d01 = (ys[j + 1] - ys[j]) / (xs[j + 1] - xs[j]);
    let d12 = (ys[j + 2] - ys[j + 1]) / (xs[j + 2] - xs[j + 1]);
    let c = (d12 - d01) / (xs[j + 2] - xs[j]);
    ys[j] + d01 * (t - xs[j]) + c * (t - xs[j]) * (t - xs[j + 1])
}

fn quadratic_eval(xs: &[f64], ys: &[f64], i: usize, t: f64) -> f64 {
    let left = (i > 0).then(|| parabola(xs, ys, i - 1, t));
    let right = (i + 2 < xs.len()).then(|| parabola(xs, ys, i, t));
    match (left, right) {
        (Some(l), Some(r)) => 0.5 * (l + r),
        (Some(v), None) | (None, Some(v)) => v,
        (None, None) => unreachable!("at least three anchors"),
    }
}

/// Dispatches a baseline strategy on one channel.
pub fn impute_series(strategy: Strategy, values: &[f64], observed: &[bool]) -> Result<Vec<f64>> {
    match strategy {
        Strategy::Mean => impute_mean(values, observed),
        Strategy::Median => impute_median(values, observed),
        Strategy::Mode => impute_mode(values, observed),
        Strategy::Nearest => impute_nearest(values, observed),
        Strategy::Linear => impute_linear(values, observed),
        Strategy::Spline { order } => impute_spline(values, observed, order),
        Strategy::Transformer => Err(Error::Impute(
            "the transformer strategy needs a trained model".into(),
        )),
    }
}

/// Applies a baseline to every channel of a frame. A complete frame comes
/// back unchanged.
pub fn impute_frame(frame: &TimeSeriesFrame, strategy: Strategy) -> Result<TimeSeriesFrame> {
    let mut out = frame.clone();
    for c in 0..frame.n_channels() {
        if frame.observed_count_channel(c) == frame.len() {
            continue;
        }
        let filled = impute_series(strategy, frame.channel(c), frame.observed_mask(c)).map_err(
            |e| Error::Impute(format!("channel {}: {e}", frame.channels()[c].name)),
        )?;
        out.set_channel(c, &filled)?;
    }
    Ok(out)
}
