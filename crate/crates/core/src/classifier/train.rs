use std::collections::BTreeSet;

use gapfill_tensor::{AdamConfig, AdamState, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::baselines::Strategy;
use crate::classifier::config::ClassifierConfig;
use crate::classifier::model::PatchClassifier;
use crate::error::{Error, Result};
use crate::imputer::ImputerModel;
use crate::masking::{self, GapClasses};
use crate::metrics::accuracy;
use crate::signal::{ChannelInfo, LabeledWindow, TimeSeriesFrame};

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldResult {
    pub held_out: String,
    pub best_epoch: usize,
    pub accuracy: f64,
    /// Mean training loss of every epoch that ran.
    pub losses: Vec<f64>,
    /// `confusion[truth][predicted]`.
    pub confusion: Vec<Vec<usize>>,
}

#[derive(Debug, Clone)]
pub struct LosoOutcome {
    pub folds: Vec<FoldResult>,
    /// Model of the fold with the highest held-out accuracy.
    pub model: PatchClassifier,
    pub selected_fold: usize,
}

impl LosoOutcome {
    pub fn mean_accuracy(&self) -> f64 {
        self.folds.iter().map(|f| f.accuracy).sum::<f64>() / self.folds.len() as f64
    }
}

pub fn confusion_matrix(pred: &[usize], truth: &[usize], n_classes: usize) -> Vec<Vec<usize>> {
    let mut m = vec![vec![0; n_classes]; n_classes];
    for (&p, &t) in pred.iter().zip(truth) {
        if p < n_classes && t < n_classes {
            m[t][p] += 1;
        }
    }
    m
}

fn check_windows(windows: &[&LabeledWindow], config: &ClassifierConfig) -> Result<()> {
    for w in windows {
        if w.n_channels != config.n_channels || w.len() != config.window_len {
            return Err(Error::Config(format!(
                "window is {}x{}, classifier expects {}x{}",
                w.n_channels,
                w.len(),
                config.n_channels,
                config.window_len
            )));
        }
        if w.label >= config.n_classes {
            return Err(Error::Config(format!(
                "label {} outside {} classes",
                w.label, config.n_classes
            )));
        }
    }
    Ok(())
}

fn evaluate(model: &PatchClassifier, windows: &[&LabeledWindow]) -> Result<(f64, Vec<usize>)> {
    let values: Vec<&[f64]> = windows.iter().map(|w| w.values.as_slice()).collect();
    let pred = model.predict(&values)?;
    let truth: Vec<usize> = windows.iter().map(|w| w.label).collect();
    Ok((accuracy(&pred, &truth)?, pred))
}

#[derive(Debug, Clone)]
pub struct TrainedClassifier {
    /// Parameters of the best validation epoch.
    pub model: PatchClassifier,
    /// 0 when no epoch improved on the initial parameters.
    pub best_epoch: usize,
    pub best_accuracy: f64,
    pub losses: Vec<f64>,
}

/// Trains on `train` with early stopping on `val` accuracy.
pub fn train_classifier(
    train: &[&LabeledWindow],
    val: &[&LabeledWindow],
    config: &ClassifierConfig,
    seed: u64,
) -> Result<TrainedClassifier> {
    config.validate()?;
    check_windows(train, config)?;
    check_windows(val, config)?;
    if train.is_empty() || val.is_empty() {
        return Err(Error::Config("classifier training needs training and validation windows".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = PatchClassifier::new(config.clone(), &mut rng)?;
    let mut adam = AdamState::for_store(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.store(),
    );
    let patches: Vec<Tensor> = train
        .iter()
        .map(|w| model.prepare(&[w.values.as_slice()]))
        .collect::<Result<_>>()?;
    let (np, pw) = (config.n_patches(), config.patch_width());
    let mut order: Vec<usize> = (0..train.len()).collect();
    let mut best = (evaluate(&model, val)?.0, 0, model.clone());
    let mut stale = 0;
    let mut losses = Vec::new();
    for epoch in 1..=config.epochs {
        order.shuffle(&mut rng);
        let mut total = 0.0;
        for chunk in order.chunks(config.batch_size) {
            let mut data = Vec::with_capacity(chunk.len() * np * pw);
            for &i in chunk {
                data.extend_from_slice(patches[i].data());
            }
            let labels: Vec<usize> = chunk.iter().map(|&i| train[i].label).collect();
            let mut tape = Tape::new();
            tape.set_checked(false);
            let x = tape.constant(Tensor::new(vec![chunk.len(), np, pw], data)?);
            let logits = model.logits(&mut tape, x, true, &mut rng)?;
            let loss = tape.cross_entropy(logits, &labels)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(Error::Diverged { epoch, checkpoint: None });
            }
            total += value * chunk.len() as f64;
            let grads = tape.backward(loss)?;
            adam.step(model.store_mut(), &grads)?;
        }
        let (acc, _) = evaluate(&model, val)?;
        losses.push(total / train.len() as f64);
        log::debug!("classifier epoch {epoch}: loss {:.4} val acc {acc:.3}", losses[epoch - 1]);
        if acc > best.0 {
            best = (acc, epoch, model.clone());
            stale = 0;
        } else {
            stale += 1;
            if stale >= config.patience {
                break;
            }
        }
    }
    Ok(TrainedClassifier {
        model: best.2,
        best_epoch: best.1,
        best_accuracy: best.0,
        losses,
    })
}

/// Leave-one-subject-out training: one fold per subject in `windows`.
pub fn train_loso(windows: &[LabeledWindow], config: &ClassifierConfig, seed: u64) -> Result<LosoOutcome> {
    let subjects: BTreeSet<&str> = windows.iter().map(|w| w.subject_id.as_str()).collect();
    if subjects.len() < 2 {
        return Err(Error::Config(format!(
            "leave-one-subject-out needs at least 2 subjects, got {}",
            subjects.len()
        )));
    }
    let mut folds = Vec::with_capacity(subjects.len());
    let mut best: Option<(f64, usize, PatchClassifier)> = None;
    for (k, subject) in subjects.iter().enumerate() {
        let (val, train): (Vec<&LabeledWindow>, Vec<&LabeledWindow>) =
            windows.iter().partition(|w| w.subject_id == *subject);
        let trained = train_classifier(&train, &val, config, seed.wrapping_add(k as u64))?;
        let (model, best_epoch) = (trained.model, trained.best_epoch);
        let (acc, pred) = evaluate(&model, &val)?;
        let truth: Vec<usize> = val.iter().map(|w| w.label).collect();
        log::info!("fold {subject}: accuracy {acc:.3} (epoch {best_epoch})");
        folds.push(FoldResult {
            held_out: subject.to_string(),
            best_epoch,
            accuracy: acc,
            losses: trained.losses,
            confusion: confusion_matrix(&pred, &truth, config.n_classes),
        });
        if best.as_ref().is_none_or(|b| acc > b.0) {
            best = Some((acc, k, model));
        }
    }
    let (_, selected_fold, model) = best.expect("at least two folds");
    Ok(LosoOutcome {
        folds,
        model,
        selected_fold,
    })
}

/// How masked test windows are filled before classification.
#[derive(Debug, Clone, Copy)]
pub enum WindowFill<'a> {
    /// Masked cells set to zero.
    Zero,
    Baseline(Strategy),
    Transformer(&'a ImputerModel),
}

/// Hides `ratio` of each channel of each window in gaps drawn from
/// `gap_range`, fills them and reports classification accuracy. Masks
/// depend only on `seed` and the window index, so every fill method sees the
/// same cells.
pub fn evaluate_with_imputation(
    model: &PatchClassifier,
    windows: &[LabeledWindow],
    fill: WindowFill<'_>,
    ratio: f64,
    gap_range: (usize, usize),
    seed: u64,
) -> Result<f64> {
    let filled = mask_and_fill(windows, fill, ratio, gap_range, seed)?;
    let refs: Vec<&LabeledWindow> = filled.iter().collect();
    Ok(evaluate(model, &refs)?.0)
}

/// Masks and fills every window; see [`evaluate_with_imputation`].
pub fn mask_and_fill(
    windows: &[LabeledWindow],
    fill: WindowFill<'_>,
    ratio: f64,
    gap_range: (usize, usize),
    seed: u64,
) -> Result<Vec<LabeledWindow>> {
    let classes = GapClasses::default();
    let mut imputer = match fill {
        WindowFill::Transformer(m) => Some(m.clone()),
        _ => None,
    };
    // The imputer's standardizer matches channels by name.
    let names: Option<Vec<String>> = imputer
        .as_ref()
        .and_then(|m| m.stats.as_ref())
        .map(|s| s.stats.iter().map(|c| c.name.clone()).collect());
    let mut out = Vec::with_capacity(windows.len());
    for (i, w) in windows.iter().enumerate() {
        let channels = (0..w.n_channels)
            .map(|c| match names.as_ref().and_then(|n| n.get(c)) {
                Some(n) => ChannelInfo::new(n.clone()),
                None => ChannelInfo::new(format!("c{c}")),
            })
            .collect();
        let series = (0..w.n_channels).map(|c| w.channel(c).to_vec()).collect();
        let frame = TimeSeriesFrame::from_channels(channels, 1.0, series)?;
        if ratio == 0.0 {
            out.push(w.clone());
            continue;
        }
        let plan = masking::mask_by_ratio(&frame, ratio, gap_range, &classes, seed.wrapping_add(i as u64))?;
        let (masked, _) = masking::apply(&frame, &plan)?;
        let filled = match (fill, imputer.as_mut()) {
            (WindowFill::Transformer(_), Some(m)) => m.impute(&masked)?,
            (WindowFill::Baseline(s), _) => crate::baselines::impute_frame(&masked, s)?,
            _ => {
                let mut f = masked.clone();
                for c in 0..f.n_channels() {
                    let zeros = impute_zero(f.channel(c), f.observed_mask(c));
                    f.set_channel(c, &zeros)?;
                }
                f
            }
        };
        let mut values = Vec::with_capacity(w.values.len());
        for c in 0..filled.n_channels() {
            values.extend_from_slice(filled.channel(c));
        }
        out.push(LabeledWindow { values, ..w.clone() });
    }
    Ok(out)
}

fn impute_zero(values: &[f64], observed: &[bool]) -> Vec<f64> {
    values
        .iter()
        .zip(observed)
        .map(|(&v, &o)| if o { v } else { 0.0 })
        .collect()
}
