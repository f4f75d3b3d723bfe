//! Reconstruction and classification scores with mean ± std aggregation.

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

fn check_pair(pred: &[f64], truth: &[f64]) -> Result<()> {
    if pred.len() != truth.len() {
        return Err(Error::Metrics(format!(
            "length mismatch: {} predictions, {} targets",
            pred.len(),
            truth.len()
        )));
    }
    if pred.is_empty() {
        return Err(Error::Metrics("no points to score".into()));
    }
    Ok(())
}

pub fn mae(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    Ok(pred.iter().zip(truth).map(|(p, t)| (p - t).abs()).sum::<f64>() / pred.len() as f64)
}

pub fn rmse(pred: &[f64], truth: &[f64]) -> Result<f64> {
    check_pair(pred, truth)?;
    let mse = pred.iter().zip(truth).map(|(p, t)| (p - t) * (p - t)).sum::<f64>() / pred.len() as f64;
    Ok(mse.sqrt())
}

/// A correlation coefficient; `degenerate` marks a zero-variance input, in
/// which case `value` is 0.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Correlation {
    pub value: f64,
    pub degenerate: bool,
}

pub fn pearson(pred: &[f64], truth: &[f64]) -> Result<Correlation> {
    check_pair(pred, truth)?;
    if pred.len() < 2 {
        return Err(Error::Metrics("correlation needs at least 2 points".into()));
    }
    let n = pred.len() as f64;
    let mp = pred.iter().sum::<f64>() / n;
    let mt = truth.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (p, t) in pred.iter().zip(truth) {
        let (dx, dy) = (p - mp, t - mt);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    if sxx == 0.0 || syy == 0.0 {
        return Ok(Correlation {
            value: 0.0,
            degenerate: true,
        });
    }
    Ok(Correlation {
        value: (sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0),
        degenerate: false,
    })
}

/// 1-based ranks; tied values share the average of their positions.
pub fn average_ranks(xs: &[f64]) -> Vec<f64> {
    let mut idx: Vec<usize> = (0..xs.len()).collect();
    idx.sort_by(|&a, &b| xs[a].total_cmp(&xs[b]));
    let mut ranks = vec![0.0; xs.len()];
    let mut i = 0;
    while i < idx.len() {
        let mut j = i;
        while j + 1 < idx.len() && xs[idx[j + 1]] == xs[idx[i]] {
            j += 1;
        }
        let r = (i + j) as f64 / 2.0 + 1.0;
        for &k in &idx[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

pub fn spearman(pred: &[f64], truth: &[f64]) -> Result<Correlation> {
    check_pair(pred, truth)?;
    pearson(&average_ranks(pred), &average_ranks(truth))
}

pub fn accuracy(pred: &[usize], truth: &[usize]) -> Result<f64> {
    if pred.len() != truth.len() || pred.is_empty() {
        return Err(Error::Metrics(format!(
            "cannot score {} predictions against {} labels",
            pred.len(),
            truth.len()
        )));
    }
    Ok(pred.iter().zip(truth).filter(|(p, t)| p == t).count() as f64 / pred.len() as f64)
}

/// Scores of one reconstruction over masked cells.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Scores {
    pub mae: f64,
    pub rmse: f64,
    pub pearson: f64,
    pub spearman: f64,
    pub pearson_degenerate: bool,
    pub spearman_degenerate: bool,
    pub n_points: usize,
}

pub fn score(pred: &[f64], truth: &[f64]) -> Result<Scores> {
    let (p, s) = if pred.len() >= 2 {
        (pearson(pred, truth)?, spearman(pred, truth)?)
    } else {
        let d = Correlation {
            value: 0.0,
            degenerate: true,
        };
        (d, d)
    };
    Ok(Scores {
        mae: mae(pred, truth)?,
        rmse: rmse(pred, truth)?,
        pearson: p.value,
        spearman: s.value,
        pearson_degenerate: p.degenerate,
        spearman_degenerate: s.degenerate,
        n_points: pred.len(),
    })
}

/// One run's scores under a grouping key.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub strategy: String,
    /// Data source (channel) or length class.
    pub group: String,
    pub seed: u64,
    #[serde(flatten)]
    pub scores: Scores,
}

/// Sample mean and (n - 1) standard deviation; the deviation of a single
/// run is NaN.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct Aggregate {
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

impl Aggregate {
    pub fn of(values: &[f64]) -> Result<Self> {
        if values.is_empty() {
            return Err(Error::Metrics("nothing to aggregate".into()));
        }
        let n = values.len();
        let mean = values.iter().sum::<f64>() / n as f64;
        let var = if n < 2 {
            f64::NAN
        } else {
            values.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / (n - 1) as f64
        };
        Ok(Self {
            mean,
            std: var.sqrt(),
            n,
        })
    }

    /// `mean + std` below `other.mean - other.std`.
    pub fn clearly_below(&self, other: &Aggregate) -> bool {
        self.mean + self.std < other.mean - other.std
    }
}

impl fmt::Display for Aggregate {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:.2} ± {:.2}", self.mean, self.std)
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, PartialOrd, Ord, Hash, Serialize, Deserialize)]
#[serde(rename_all = "lowercase")]
pub enum Metric {
    Mae,
    Rmse,
    Pearson,
    Spearman,
}

impl Metric {
    pub const ALL: [Metric; 4] = [Metric::Mae, Metric::Rmse, Metric::Pearson, Metric::Spearman];

    pub fn of(&self, s: &Scores) -> f64 {
        match self {
            Metric::Mae => s.mae,
            Metric::Rmse => s.rmse,
            Metric::Pearson => s.pearson,
            Metric::Spearman => s.spearman,
        }
    }
}

impl fmt::Display for Metric {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(match self {
            Metric::Mae => "MAE",
            Metric::Rmse => "RMSE",
            Metric::Pearson => "Pearson",
            Metric::Spearman => "Spearman",
        })
    }
}

/// Aggregates keyed by (group, strategy) for every metric.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AggregateTable {
    /// Header of the group column, `Data` or `Gap`.
    pub group_label: String,
    pub groups: Vec<String>,
    pub strategies: Vec<String>,
    pub cells: BTreeMap<String, BTreeMap<String, BTreeMap<Metric, Aggregate>>>,
}

impl AggregateTable {
    /// Groups `reports` by (group, strategy). Row and column order follow
    /// `groups` and `strategies`.
    pub fn build(
        group_label: &str,
        groups: &[String],
        strategies: &[String],
        reports: &[MetricsReport],
    ) -> Result<Self> {
        let mut cells = BTreeMap::new();
        for g in groups {
            let mut row = BTreeMap::new();
            for s in strategies {
                let runs: Vec<&Scores> = reports
                    .iter()
                    .filter(|r| &r.group == g && &r.strategy == s)
                    .map(|r| &r.scores)
                    .collect();
                if runs.is_empty() {
                    continue;
                }
                let mut per_metric = BTreeMap::new();
                for m in Metric::ALL {
                    let v: Vec<f64> = runs.iter().map(|r| m.of(r)).collect();
                    per_metric.insert(m, Aggregate::of(&v)?);
                }
                row.insert(s.clone(), per_metric);
            }
            cells.insert(g.clone(), row);
        }
        Ok(Self {
            group_label: group_label.to_string(),
            groups: groups.to_vec(),
            strategies: strategies.to_vec(),
            cells,
        })
    }

    pub fn get(&self, group: &str, strategy: &str, metric: Metric) -> Option<&Aggregate> {
        self.cells.get(group)?.get(strategy)?.get(&metric)
    }

    /// Column order of [`AggregateTable::to_csv`].
    pub fn header(&self) -> Vec<String> {
        let mut h = vec!["Metric".to_string(), self.group_label.clone()];
        h.extend(self.strategies.iter().cloned());
        h
    }

    /// Table-shaped CSV: one row per (metric, group), one `m ± s` column per
    /// strategy. Missing cells are left empty.
    pub fn to_csv(&self) -> Result<String> {
        let mut w = csv::Writer::from_writer(Vec::new());
        w.write_record(self.header())?;
        for m in Metric::ALL {
            for g in &self.groups {
                let mut row = vec![m.to_string(), g.clone()];
                for s in &self.strategies {
                    row.push(self.get(g, s, m).map(|a| a.to_string()).unwrap_or_default());
                }
                w.write_record(&row)?;
            }
        }
        let bytes = w.into_inner().map_err(|e| Error::Metrics(e.to_string()))?;
        Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
    }

    pub fn to_json(&self) -> Result<String> {
        Ok(serde_json::to_string_pretty(self)? + "\n")
    }
}

/// Raw per-run rows, one line per (strategy, group, seed).
pub fn reports_to_csv(reports: &[MetricsReport]) -> Result<String> {
    let mut w = csv::Writer::from_writer(Vec::new());
    w.write_record([
        "strategy",
        "group",
        "seed",
        "mae",
        "rmse",
        "pearson",
        "spearman",
        "pearson_degenerate",
        "spearman_degenerate",
        "n_points",
    ])?;
    for r in reports {
        let s = &r.scores;
        w.write_record(&[
            r.strategy.clone(),
            r.group.clone(),
            r.seed.to_string(),
            format!("{:.17e}", s.mae),
            format!("{:.17e}", s.rmse),
            format!("{:.17e}", s.pearson),
            format!("{:.17e}", s.spearman),
            s.pearson_degenerate.to_string(),
            s.spearman_degenerate.to_string(),
            s.n_points.to_string(),
        ])?;
    }
    let bytes = w.into_inner().map_err(|e| Error::Metrics(e.to_string()))?;
    Ok(String::from_utf8(bytes).expect("csv output is utf-8"))
}
