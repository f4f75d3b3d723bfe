//! Reproducible artificial missingness over observed cells.

use std::fmt;
use std::str::FromStr;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::signal::TimeSeriesFrame;

/// Rejected start positions tolerated per gap before giving up.
const MAX_ATTEMPTS_PER_GAP: usize = 10_000;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum LengthClass {
    S,
    M,
    L,
}

impl LengthClass {
    pub const ALL: [LengthClass; 3] = [LengthClass::S, LengthClass::M, LengthClass::L];
}

impl fmt::Display for LengthClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            LengthClass::S => "S",
            LengthClass::M => "M",
            LengthClass::L => "L",
        })
    }
}

impl FromStr for LengthClass {
    type Err = Error;

    fn from_str(s: &str) -> Result<Self> {
        match s.trim() {
            "S" | "s" => Ok(LengthClass::S),
            "M" | "m" => Ok(LengthClass::M),
            "L" | "l" => Ok(LengthClass::L),
            other => Err(Error::Config(format!("unknown length class `{other}`"))),
        }
    }
}

/// Inclusive gap-length ranges, in samples, for each class.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapClasses {
    pub s: (usize, usize),
    pub m: (usize, usize),
    pub l: (usize, usize),
}

impl Default for GapClasses {
    fn default() -> Self {
        Self {
            s: (1, 5),
            m: (6, 30),
            l: (31, 120),
        }
    }
}

impl GapClasses {
    pub fn range(&self, class: LengthClass) -> (usize, usize) {
        match class {
            LengthClass::S => self.s,
            LengthClass::M => self.m,
            LengthClass::L => self.l,
        }
    }

    /// Class of a gap length; lengths past the L range count as L.
    pub fn classify(&self, length: usize) -> LengthClass {
        if length <= self.s.1 {
            LengthClass::S
        } else if length <= self.m.1 {
            LengthClass::M
        } else {
            LengthClass::L
        }
    }

    pub fn validate(&self) -> Result<()> {
        let ok = self.s.0 >= 1
            && self.s.0 <= self.s.1
            && self.m.0 <= self.m.1
            && self.l.0 <= self.l.1
            && self.s.1 < self.m.0
            && self.m.1 < self.l.0;
        if ok {
            Ok(())
        } else {
            Err(Error::Config(format!("gap classes must be ordered, disjoint and non-empty: {self:?}")))
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub struct GapDescriptor {
    pub channel: usize,
    pub start: usize,
    pub length: usize,
    pub class: LengthClass,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskScope {
    PerChannel,
    AllSensors,
}

/// Which cells of a frame to hide.
///
/// `cells` is the union of the gap intervals restricted to cells observed in
/// the frame the plan was built for, sorted by (channel, time).
#[derive(Debug, Clone, PartialEq)]
pub struct MaskPlan {
    pub n_channels: usize,
    pub len: usize,
    pub seed: u64,
    pub ratio: f64,
    pub scope: MaskScope,
    pub gaps: Vec<GapDescriptor>,
    pub cells: Vec<(usize, usize)>,
}

/// Hidden values, aligned with the plan's cells.
#[derive(Debug, Clone, PartialEq)]
pub struct GroundTruth {
    pub cells: Vec<(usize, usize)>,
    pub values: Vec<f64>,
}

impl GroundTruth {
    /// Values of `frame` at the recorded cells.
    pub fn gather(&self, frame: &TimeSeriesFrame) -> Vec<f64> {
        self.cells.iter().map(|&(c, t)| frame.channel(c)[t]).collect()
    }

    /// Indices of entries whose gap has the given class.
    pub fn class_indices(&self, plan: &MaskPlan, class: LengthClass) -> Vec<usize> {
        let lookup = plan.cell_classes();
        (0..self.cells.len())
            .filter(|&i| lookup[i] == class)
            .collect()
    }
}

impl MaskPlan {
    pub fn empty(frame: &TimeSeriesFrame, seed: u64) -> Self {
        Self {
            n_channels: frame.n_channels(),
            len: frame.len(),
            seed,
            ratio: 0.0,
            scope: MaskScope::PerChannel,
            gaps: Vec::new(),
            cells: Vec::new(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.cells.is_empty()
    }

    fn from_gaps(
        frame: &TimeSeriesFrame,
        seed: u64,
        ratio: f64,
        scope: MaskScope,
        mut gaps: Vec<GapDescriptor>,
    ) -> Self {
        gaps.sort_by_key(|g| (g.channel, g.start));
        let mut cells = Vec::new();
        for g in &gaps {
            cells.extend(
                (g.start..g.start + g.length)
                    .filter(|&t| frame.is_observed(g.channel, t))
                    .map(|t| (g.channel, t)),
            );
        }
        cells.sort_unstable();
        cells.dedup();
        Self {
            n_channels: frame.n_channels(),
            len: frame.len(),
            seed,
            ratio,
            scope,
            gaps,
            cells,
        }
    }

    /// Length class of the gap containing each cell, aligned with `cells`.
    pub fn cell_classes(&self) -> Vec<LengthClass> {
        self.cells
            .iter()
            .map(|&(c, t)| {
                self.gaps
                    .iter()
                    .find(|g| g.channel == c && (g.start..g.start + g.length).contains(&t))
                    .map(|g| g.class)
                    .expect("every cell lies in a gap")
            })
            .collect()
    }

    pub fn cells_per_channel(&self) -> Vec<usize> {
        let mut n = vec![0; self.n_channels];
        for &(c, _) in &self.cells {
            n[c] += 1;
        }
        n
    }

    /// Line-oriented text form: `#`-prefixed header lines followed by a
    /// `channel,start,length,class` table.
    pub fn to_text(&self) -> String {
        let mut s = String::new();
        s.push_str(&format!("# seed={}\n", self.seed));
        s.push_str(&format!("# ratio={}\n", self.ratio));
        s.push_str(&format!("# channels={}\n", self.n_channels));
        s.push_str(&format!("# len={}\n", self.len));
        s.push_str(&format!(
            "# scope={}\n",
            match self.scope {
                MaskScope::PerChannel => "per_channel",
                MaskScope::AllSensors => "all_sensors",
            }
        ));
        s.push_str("channel,start,length,class\n");
        for g in &self.gaps {
            s.push_str(&format!("{},{},{},{}\n", g.channel, g.start, g.length, g.class));
        }
        s
    }

    /// Parses [`MaskPlan::to_text`] output and rebuilds the cell set against
    /// `frame`.
    pub fn from_text(text: &str, frame: &TimeSeriesFrame) -> Result<Self> {
        let bad = |msg: String| Error::PlanMismatch(msg);
        let mut seed = None;
        let mut ratio = None;
        let mut channels = None;
        let mut len = None;
        let mut scope = MaskScope::PerChannel;
        let mut gaps = Vec::new();
        let mut saw_header = false;
        for (i, line) in text.lines().enumerate() {
            let line = line.trim();
            if line.is_empty() {
                continue;
            }
            if let Some(kv) = line.strip_prefix('#') {
                let Some((k, v)) = kv.trim().split_once('=') else { continue };
                let v = v.trim();
                let num = |v: &str| v.parse::<u64>().map_err(|_| bad(format!("line {}: bad number `{v}`", i + 1)));
                match k.trim() {
                    "seed" => seed = Some(num(v)?),
                    "ratio" => {
                        ratio = Some(v.parse::<f64>().map_err(|_| bad(format!("line {}: bad ratio", i + 1)))?)
                    }
                    "channels" => channels = Some(num(v)? as usize),
                    "len" => len = Some(num(v)? as usize),
                    "scope" => {
                        scope = match v {
                            "per_channel" => MaskScope::PerChannel,
                            "all_sensors" => MaskScope::AllSensors,
                            other => return Err(bad(format!("unknown scope `{other}`"))),
                        }
                    }
                    _ => {}
                }
                continue;
            }
            if !saw_header {
                if line != "channel,start,length,class" {
                    return Err(bad(format!("line {}: expected column header", i + 1)));
                }
                saw_header = true;
                continue;
            }
            let fields: Vec<&str> = line.split(',').map(str::trim).collect();
            if fields.len() != 4 {
                return Err(bad(format!("line {}: expected 4 fields", i + 1)));
            }
            let int = |s: &str| s.parse::<usize>().map_err(|_| bad(format!("line {}: bad integer `{s}`", i + 1)));
            gaps.push(GapDescriptor {
                channel: int(fields[0])?,
                start: int(fields[1])?,
                length: int(fields[2])?,
                class: fields[3].parse()?,
            });
        }
        let seed = seed.ok_or_else(|| bad("missing seed header".into()))?;
        let ratio = ratio.ok_or_else(|| bad("missing ratio header".into()))?;
        if channels.is_some_and(|c| c != frame.n_channels()) || len.is_some_and(|l| l != frame.len()) {
            return Err(bad("plan dimensions differ from frame".into()));
        }
        for g in &gaps {
            if g.channel >= frame.n_channels() || g.length == 0 || g.start + g.length > frame.len() {
                return Err(bad(format!("gap {g:?} lies outside the frame")));
            }
        }
        Ok(Self::from_gaps(frame, seed, ratio, scope, gaps))
    }
}

/// Places gaps with lengths uniform in `range` over `available` cells until
/// exactly `target` cells are covered; the final gap is shortened when the
/// remainder is smaller than its drawn length. Gaps never overlap, never
/// touch each other and only cover available cells.
pub fn sample_gaps<R: Rng + ?Sized>(
    available: &[bool],
    target: usize,
    range: (usize, usize),
    rng: &mut R,
) -> Result<Vec<(usize, usize)>> {
    let (lo, hi) = range;
    if lo == 0 || lo > hi {
        return Err(Error::Config(format!("invalid gap length range [{lo}, {hi}]")));
    }
    let n = available.len();
    let mut taken = available.iter().map(|&a| !a).collect::<Vec<_>>();
    let mut covered = 0;
    let mut gaps = Vec::new();
    while covered < target {
        let len = rng.random_range(lo..=hi).min(target - covered);
        if len > n {
            return Err(Error::InfeasibleMask(format!("gap of {len} does not fit in {n} samples")));
        }
        let mut placed = false;
        for _ in 0..MAX_ATTEMPTS_PER_GAP {
            let start = rng.random_range(0..=n - len);
            let lo_guard = start.saturating_sub(1);
            let hi_guard = (start + len + 1).min(n);
            let clear = (start..start + len).all(|t| !taken[t])
                && (lo_guard..start).all(|t| !taken[t] || !available[t])
                && (start + len..hi_guard).all(|t| !taken[t] || !available[t]);
            if clear {
                taken[start..start + len].iter_mut().for_each(|x| *x = true);
                gaps.push((start, len));
                covered += len;
                placed = true;
                break;
            }
        }
        if !placed {
            return Err(Error::InfeasibleMask(format!(
                "could not place a gap of {len} after covering {covered} of {target} cells"
            )));
        }
    }
    gaps.sort_unstable();
    Ok(gaps)
}

fn check_ratio(ratio: f64) -> Result<()> {
    if !(0.0..1.0).contains(&ratio) {
        return Err(Error::Config(format!("mask ratio {ratio} must lie in [0, 1)")));
    }
    Ok(())
}

/// Hides `round(ratio * observed)` cells per channel in gaps whose lengths
/// are drawn from `gap_range`.
pub fn mask_by_ratio(
    frame: &TimeSeriesFrame,
    ratio: f64,
    gap_range: (usize, usize),
    classes: &GapClasses,
    seed: u64,
) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaps = Vec::new();
    for c in 0..frame.n_channels() {
        let target = (ratio * frame.observed_count_channel(c) as f64).round() as usize;
        for (start, length) in sample_gaps(frame.observed_mask(c), target, gap_range, &mut rng)? {
            gaps.push(GapDescriptor {
                channel: c,
                start,
                length,
                class: classes.classify(length),
            });
        }
    }
    Ok(MaskPlan::from_gaps(frame, seed, ratio, MaskScope::PerChannel, gaps))
}

/// As [`mask_by_ratio`], but every channel shares the same gaps over time.
pub fn mask_by_ratio_all_sensors(
    frame: &TimeSeriesFrame,
    ratio: f64,
    gap_range: (usize, usize),
    classes: &GapClasses,
    seed: u64,
) -> Result<MaskPlan> {
    check_ratio(ratio)?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let target = (ratio * frame.len() as f64).round() as usize;
    let spans = sample_gaps(&vec![true; frame.len()], target, gap_range, &mut rng)?;
    let gaps = spans
        .iter()
        .flat_map(|&(start, length)| {
            (0..frame.n_channels()).map(move |channel| GapDescriptor {
                channel,
                start,
                length,
                class: classes.classify(length),
            })
        })
        .collect();
    Ok(MaskPlan::from_gaps(frame, seed, ratio, MaskScope::AllSensors, gaps))
}

/// `count` gaps of one length class per channel.
pub fn mask_by_length_class(
    frame: &TimeSeriesFrame,
    class: LengthClass,
    count: usize,
    classes: &GapClasses,
    seed: u64,
) -> Result<MaskPlan> {
    classes.validate()?;
    let (lo, hi) = classes.range(class);
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut gaps = Vec::new();
    let mut hidden = 0usize;
    for c in 0..frame.n_channels() {
        let avail = frame.observed_mask(c);
        let mut taken: Vec<bool> = avail.iter().map(|&a| !a).collect();
        for _ in 0..count {
            let len = rng.random_range(lo..=hi);
            if len > frame.len() {
                return Err(Error::InfeasibleMask(format!(
                    "class {class} gap of {len} exceeds frame length {}",
                    frame.len()
                )));
            }
            let mut placed = false;
            for _ in 0..MAX_ATTEMPTS_PER_GAP {
                let start = rng.random_range(0..=frame.len() - len);
                let a = start.saturating_sub(1);
                let b = (start + len + 1).min(frame.len());
                let clear = (start..start + len).all(|t| !taken[t])
                    && (a..b).all(|t| !taken[t] || !avail[t]);
                if clear {
                    taken[start..start + len].iter_mut().for_each(|x| *x = true);
                    gaps.push(GapDescriptor {
                        channel: c,
                        start,
                        length: len,
                        class,
                    });
                    hidden += len;
                    placed = true;
                    break;
                }
            }
            if !placed {
                return Err(Error::InfeasibleMask(format!(
                    "cannot fit {count} class-{class} gaps in channel {}",
                    frame.channels()[c].name
                )));
            }
        }
    }
    let total = frame.observed_count().max(1);
    Ok(MaskPlan::from_gaps(
        frame,
        seed,
        hidden as f64 / total as f64,
        MaskScope::PerChannel,
        gaps,
    ))
}

/// Every channel hidden over `[start, start + length)`.
pub fn mask_all_sensors(frame: &TimeSeriesFrame, start: usize, length: usize, classes: &GapClasses) -> Result<MaskPlan> {
    if length == 0 || start + length > frame.len() {
        return Err(Error::InfeasibleMask(format!(
            "interval [{start}, {}) lies outside a frame of {} samples",
            start + length,
            frame.len()
        )));
    }
    let gaps = (0..frame.n_channels())
        .map(|channel| GapDescriptor {
            channel,
            start,
            length,
            class: classes.classify(length),
        })
        .collect();
    let ratio = length as f64 / frame.len() as f64;
    Ok(MaskPlan::from_gaps(frame, 0, ratio, MaskScope::AllSensors, gaps))
}

fn check_plan(frame: &TimeSeriesFrame, plan: &MaskPlan) -> Result<()> {
    if plan.n_channels != frame.n_channels() || plan.len != frame.len() {
        return Err(Error::PlanMismatch(format!(
            "plan is {}x{}, frame is {}x{}",
            plan.n_channels,
            plan.len,
            frame.n_channels(),
            frame.len()
        )));
    }
    Ok(())
}

/// Hides the plan's cells. The original frame is left untouched.
pub fn apply(frame: &TimeSeriesFrame, plan: &MaskPlan) -> Result<(TimeSeriesFrame, GroundTruth)> {
    check_plan(frame, plan)?;
    let mut masked = frame.clone();
    let mut values = Vec::with_capacity(plan.cells.len());
    for &(c, t) in &plan.cells {
        let v = frame.value(c, t).ok_or_else(|| {
            Error::PlanMismatch(format!("cell ({c}, {t}) is not observed in the frame"))
        })?;
        values.push(v);
        masked.set_missing(c, t);
    }
    Ok((
        masked,
        GroundTruth {
            cells: plan.cells.clone(),
            values,
        },
    ))
}

/// Puts hidden values back.
pub fn restore(masked: &TimeSeriesFrame, truth: &GroundTruth) -> TimeSeriesFrame {
    let mut out = masked.clone();
    for (&(c, t), &v) in truth.cells.iter().zip(&truth.values) {
        out.set(c, t, v);
    }
    out
}
