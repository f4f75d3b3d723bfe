//! Classification accuracy over strategies and missing rates.

use gapfill::classifier::{
    evaluate_with_imputation, train_loso, ClassifierConfig, FoldResult, PatchClassifier, WindowFill,
};
use gapfill::imputer::{train, EpochLoss, ImputerModel, Segment, TrainOptions};
use gapfill::metrics::Aggregate;
use gapfill::signal::{ChannelInfo, LabeledWindow, Standardizer, TimeSeriesFrame};
use serde::{Deserialize, Serialize};

use crate::config::{DownstreamStrategy, ExperimentConfig};
use crate::data::WindowData;
use crate::impute_bench::{resolved_imputer_config, Failure};
use crate::BenchError;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamRow {
    pub task: String,
    pub strategy: String,
    pub rate: f64,
    pub accuracy: f64,
    pub seed: u64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct DownstreamSummary {
    pub strategy: String,
    pub rate: f64,
    pub mean: f64,
    pub std: f64,
    pub n: usize,
}

#[derive(Debug, Clone)]
pub struct DownstreamOutput {
    pub rows: Vec<DownstreamRow>,
    pub summary: Vec<DownstreamSummary>,
    pub failures: Vec<Failure>,
}

impl DownstreamOutput {
    pub fn mean(&self, strategy: &str, rate: f64) -> Option<f64> {
        self.summary
            .iter()
            .find(|s| s.strategy == strategy && s.rate == rate)
            .map(|s| s.mean)
    }
}

pub fn resolved_classifier_config(config: &ExperimentConfig, data: &WindowData) -> ClassifierConfig {
    ClassifierConfig {
        n_channels: data.channels.len(),
        window_len: data.window_len(),
        n_classes: data.classes.len(),
        ..config.classifier.clone()
    }
}

/// Loads the configured classifier or selects one by leave-one-subject-out
/// training on the training windows.
pub fn prepare_classifier(
    config: &ExperimentConfig,
    data: &WindowData,
) -> Result<(PatchClassifier, Vec<FoldResult>), BenchError> {
    if let Some(path) = &config.training.classifier_checkpoint {
        let model = PatchClassifier::load(path)?;
        let want = resolved_classifier_config(config, data);
        if (model.config.n_channels, model.config.window_len, model.config.n_classes)
            != (want.n_channels, want.window_len, want.n_classes)
        {
            return Err(BenchError::Config(format!(
                "checkpoint {} does not match the data shape",
                path.display()
            )));
        }
        return Ok((model, Vec::new()));
    }
    let out = train_loso(&data.train, &resolved_classifier_config(config, data), config.run.master_seed)?;
    log::info!(
        "classifier folds: mean accuracy {:.3}, selected fold {}",
        out.mean_accuracy(),
        out.folds[out.selected_fold].held_out
    );
    Ok((out.model, out.folds))
}

fn window_frame(w: &LabeledWindow, channels: &[String]) -> gapfill::Result<TimeSeriesFrame> {
    TimeSeriesFrame::from_channels(
        channels.iter().map(|n| ChannelInfo::new(n.clone())).collect(),
        1.0,
        (0..w.n_channels).map(|c| w.channel(c).to_vec()).collect(),
    )
}

/// Loads the configured imputer or trains one whose segment length equals
/// the window length, on the standardised training windows.
pub fn prepare_window_imputer(
    config: &ExperimentConfig,
    data: &WindowData,
    opts: &TrainOptions,
) -> Result<(ImputerModel, Vec<EpochLoss>), BenchError> {
    let frames: Vec<TimeSeriesFrame> = data
        .train
        .iter()
        .map(|w| window_frame(w, &data.channels))
        .collect::<gapfill::Result<_>>()?;
    let stats = Standardizer::fit(&frames.iter().collect::<Vec<_>>())?;
    if let Some(path) = &config.training.imputer_checkpoint {
        let mut model = ImputerModel::load(path)?;
        if (model.config.n_channels, model.config.window_len) != (data.channels.len(), data.window_len()) {
            return Err(BenchError::Config(format!(
                "checkpoint {} does not match the window shape",
                path.display()
            )));
        }
        model.stats = Some(stats);
        return Ok((model, Vec::new()));
    }
    let mut icfg = resolved_imputer_config(config, data.channels.len());
    icfg.window_len = data.window_len();
    let segments = frames
        .iter()
        .map(|f| Segment::from_frame(&stats.transform(f)?, 0, icfg.window_len))
        .collect::<gapfill::Result<Vec<_>>>()?;
    let (mut model, curve) = train(&segments, &icfg, config.run.master_seed, opts)?;
    model.stats = Some(stats);
    Ok((model, curve))
}

/// Full grid over rates, strategies and seeds on the test windows.
pub fn run_downstream(
    config: &ExperimentConfig,
    data: &WindowData,
    classifier: &PatchClassifier,
    imputer: Option<&ImputerModel>,
) -> Result<DownstreamOutput, BenchError> {
    let d = &config.downstream;
    let task = config.data.task_name().to_string();
    let seeds = config.seeds();
    let mut rows = Vec::new();
    let mut failures = Vec::new();
    for &rate in &d.rates {
        for &strategy in &d.strategies {
            let fill = match strategy {
                DownstreamStrategy::None => WindowFill::Zero,
                DownstreamStrategy::Impute(gapfill::baselines::Strategy::Transformer) => match imputer {
                    Some(m) => WindowFill::Transformer(m),
                    None => {
                        return Err(BenchError::Config("transformer strategy needs an imputer".into()));
                    }
                },
                DownstreamStrategy::Impute(s) => WindowFill::Baseline(s),
            };
            for &seed in &seeds {
                match evaluate_with_imputation(classifier, &data.test, fill, rate, (d.gap_min, d.gap_max), seed) {
                    Ok(accuracy) => rows.push(DownstreamRow {
                        task: task.clone(),
                        strategy: strategy.to_string(),
                        rate,
                        accuracy,
                        seed,
                    }),
                    Err(e) => failures.push(Failure {
                        table: format!("downstream:{rate}"),
                        seed,
                        strategy: strategy.to_string(),
                        message: e.to_string(),
                    }),
                }
            }
        }
    }
    let mut summary = Vec::new();
    for &rate in &d.rates {
        for strategy in &d.strategies {
            let name = strategy.to_string();
            let acc: Vec<f64> = rows
                .iter()
                .filter(|r| r.rate == rate && r.strategy == name)
                .map(|r| r.accuracy)
                .collect();
            if let Ok(a) = Aggregate::of(&acc) {
                summary.push(DownstreamSummary {
                    strategy: name,
                    rate,
                    mean: a.mean,
                    std: a.std,
                    n: a.n,
                });
            }
        }
    }
    Ok(DownstreamOutput {
        rows,
        summary,
        failures,
    })
}
