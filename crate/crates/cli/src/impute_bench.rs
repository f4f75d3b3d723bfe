//! Per-source and per-length imputation benchmark.

use gapfill::baselines::{impute_frame, Strategy};
use gapfill::imputer::{segments_from_frames, train, EpochLoss, ImputerConfig, ImputerModel, TrainOptions};
use gapfill::masking::{apply, mask_by_length_class, mask_by_ratio, LengthClass};
use gapfill::metrics::{score, AggregateTable, MetricsReport};
use gapfill::signal::{Standardizer, TimeSeriesFrame};
use serde::{Deserialize, Serialize};

use crate::config::ExperimentConfig;
use crate::data::FrameData;
use crate::BenchError;

/// Row order of the per-length table.
pub const LENGTH_ORDER: [LengthClass; 3] = [LengthClass::L, LengthClass::M, LengthClass::S];

/// A strategy (or mask) that failed for one run.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Failure {
    pub table: String,
    pub seed: u64,
    pub strategy: String,
    pub message: String,
}

#[derive(Debug, Clone)]
pub struct ImputeBenchOutput {
    pub seeds: Vec<u64>,
    pub by_source_runs: Vec<MetricsReport>,
    pub by_length_runs: Vec<MetricsReport>,
    pub by_source: AggregateTable,
    pub by_length: AggregateTable,
    pub failures: Vec<Failure>,
}

/// Standardised train/test frames and the fitted statistics.
pub struct Standardized {
    pub train: Vec<TimeSeriesFrame>,
    pub test: Vec<TimeSeriesFrame>,
    pub stats: Standardizer,
}

pub fn standardize_data(data: &FrameData) -> Result<Standardized, BenchError> {
    let stats = Standardizer::fit(&data.train.iter().collect::<Vec<_>>())?;
    let train = data.train.iter().map(|f| stats.transform(f)).collect::<gapfill::Result<_>>()?;
    let test = data.test.iter().map(|f| stats.transform(f)).collect::<gapfill::Result<_>>()?;
    Ok(Standardized { train, test, stats })
}

/// Imputer config with the channel count taken from the data.
pub fn resolved_imputer_config(config: &ExperimentConfig, n_channels: usize) -> ImputerConfig {
    ImputerConfig {
        n_channels,
        ..config.imputer.clone()
    }
}

/// Loads the configured checkpoint or trains on the standardised training
/// frames. The loss curve is empty for a loaded model.
pub fn prepare_imputer(
    config: &ExperimentConfig,
    data: &Standardized,
    opts: &TrainOptions,
) -> Result<(ImputerModel, Vec<EpochLoss>), BenchError> {
    let n_channels = data.stats.stats.len();
    if let Some(path) = &config.training.imputer_checkpoint {
        let mut model = ImputerModel::load(path)?;
        if model.config.n_channels != n_channels {
            return Err(BenchError::Config(format!(
                "checkpoint {} expects {} channels, data has {n_channels}",
                path.display(),
                model.config.n_channels
            )));
        }
        model.stats = Some(data.stats.clone());
        return Ok((model, Vec::new()));
    }
    let icfg = resolved_imputer_config(config, n_channels);
    let segments = segments_from_frames(&data.train, icfg.window_len, config.training.segment_stride)?;
    log::info!("training imputer on {} segments", segments.len());
    let (mut model, curve) = train(&segments, &icfg, config.run.master_seed, opts)?;
    model.stats = Some(data.stats.clone());
    Ok((model, curve))
}

fn frame_seed(seed: u64, k: usize) -> u64 {
    seed.wrapping_add((k as u64).wrapping_mul(0x9E37_79B9_7F4A_7C15))
}

fn run_strategy(
    strategy: Strategy,
    masked: &TimeSeriesFrame,
    imputer: Option<&mut ImputerModel>,
) -> gapfill::Result<TimeSeriesFrame> {
    match (strategy, imputer) {
        (Strategy::Transformer, Some(m)) => m.impute_standardized(masked),
        (Strategy::Transformer, None) => Err(gapfill::Error::Impute("no transformer model available".into())),
        (s, _) => impute_frame(masked, s),
    }
}

/// Predictions and truths pooled per group for one strategy in one run.
type Pool = Vec<(Vec<f64>, Vec<f64>)>;

/// Runs every seed and strategy over the standardised test frames.
pub fn run_impute_bench(
    config: &ExperimentConfig,
    data: &Standardized,
    mut imputer: Option<&mut ImputerModel>,
) -> Result<ImputeBenchOutput, BenchError> {
    let b = &config.bench;
    let seeds = config.seeds();
    let strategies: Vec<String> = b.strategies.iter().map(Strategy::to_string).collect();
    let channels: Vec<String> = data
        .test
        .first()
        .map(TimeSeriesFrame::channel_names)
        .ok_or_else(|| BenchError::Config("no test frames".into()))?;
    let classes: Vec<String> = LENGTH_ORDER.iter().map(LengthClass::to_string).collect();
    let mut failures = Vec::new();
    let mut by_source_runs = Vec::new();
    let mut by_length_runs = Vec::new();

    for &seed in &seeds {
        // Per source: ratio masks, scored channel by channel.
        let mut masked = Vec::with_capacity(data.test.len());
        let mut mask_ok = true;
        for (k, f) in data.test.iter().enumerate() {
            match mask_by_ratio(f, b.ratio, (b.gap_min, b.gap_max), &b.classes, frame_seed(seed, k))
                .and_then(|plan| apply(f, &plan))
            {
                Ok(m) => masked.push(m),
                Err(e) => {
                    failures.push(Failure {
                        table: "source".into(),
                        seed,
                        strategy: "mask".into(),
                        message: e.to_string(),
                    });
                    mask_ok = false;
                    break;
                }
            }
        }
        if mask_ok {
            for &strategy in &b.strategies {
                let mut pool: Pool = vec![(Vec::new(), Vec::new()); channels.len()];
                let result = masked.iter().try_for_each(|(m, truth)| {
                    let filled = run_strategy(strategy, m, imputer.as_deref_mut())?;
                    let pred = truth.gather(&filled);
                    for (i, &(c, _)) in truth.cells.iter().enumerate() {
                        pool[c].0.push(pred[i]);
                        pool[c].1.push(truth.values[i]);
                    }
                    Ok::<_, gapfill::Error>(())
                });
                match result.and_then(|_| {
                    pool.iter()
                        .zip(&channels)
                        .filter(|((p, _), _)| !p.is_empty())
                        .map(|((p, t), name)| {
                            Ok(MetricsReport {
                                strategy: strategy.to_string(),
                                group: name.clone(),
                                seed,
                                scores: score(p, t)?,
                            })
                        })
                        .collect::<gapfill::Result<Vec<_>>>()
                }) {
                    Ok(rows) => by_source_runs.extend(rows),
                    Err(e) => failures.push(Failure {
                        table: "source".into(),
                        seed,
                        strategy: strategy.to_string(),
                        message: e.to_string(),
                    }),
                }
            }
        }

        // Per length: gaps of one class, all channels pooled.
        for class in LENGTH_ORDER {
            let mut masked = Vec::with_capacity(data.test.len());
            let mut mask_ok = true;
            for (k, f) in data.test.iter().enumerate() {
                match mask_by_length_class(f, class, b.gaps_per_class, &b.classes, frame_seed(seed, k))
                    .and_then(|plan| apply(f, &plan))
                {
                    Ok(m) => masked.push(m),
                    Err(e) => {
                        failures.push(Failure {
                            table: format!("length:{class}"),
                            seed,
                            strategy: "mask".into(),
                            message: e.to_string(),
                        });
                        mask_ok = false;
                        break;
                    }
                }
            }
            if !mask_ok {
                continue;
            }
            for &strategy in &b.strategies {
                let mut pred = Vec::new();
                let mut truth = Vec::new();
                let result = masked.iter().try_for_each(|(m, t)| {
                    let filled = run_strategy(strategy, m, imputer.as_deref_mut())?;
                    pred.extend(t.gather(&filled));
                    truth.extend_from_slice(&t.values);
                    Ok::<_, gapfill::Error>(())
                });
                match result.and_then(|_| score(&pred, &truth)) {
                    Ok(scores) => by_length_runs.push(MetricsReport {
                        strategy: strategy.to_string(),
                        group: class.to_string(),
                        seed,
                        scores,
                    }),
                    Err(e) => failures.push(Failure {
                        table: format!("length:{class}"),
                        seed,
                        strategy: strategy.to_string(),
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    let by_source = AggregateTable::build("Data", &channels, &strategies, &by_source_runs)?;
    let by_length = AggregateTable::build("Gap", &classes, &strategies, &by_length_runs)?;
    Ok(ImputeBenchOutput {
        seeds,
        by_source_runs,
        by_length_runs,
        by_source,
        by_length,
        failures,
    })
}
