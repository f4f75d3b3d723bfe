use std::path::PathBuf;

use gapfill_tensor::{AdamConfig, AdamState, CheckpointHeader, Tape, Tensor};
use rand::seq::SliceRandom;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputer::config::{ImputerConfig, LossScope, TrainMaskPolicy};
use crate::imputer::model::{masked_mse, ImputerModel};
use crate::masking::LengthClass;
use crate::signal::TimeSeriesFrame;

/// Channel-major `C x T` training unit with its native observation mask.
#[derive(Debug, Clone, PartialEq)]
pub struct Segment {
    pub values: Vec<f64>,
    pub observed: Vec<bool>,
    pub n_channels: usize,
    pub len: usize,
}

impl Segment {
    pub fn complete(values: Vec<f64>, n_channels: usize, len: usize) -> Result<Self> {
        if values.len() != n_channels * len {
            return Err(Error::Impute(format!(
                "{} values for a {n_channels}x{len} segment",
                values.len()
            )));
        }
        let observed = values.iter().map(|v| v.is_finite()).collect();
        Ok(Self {
            values,
            observed,
            n_channels,
            len,
        })
    }

    pub fn from_frame(frame: &TimeSeriesFrame, start: usize, len: usize) -> Result<Self> {
        if start + len > frame.len() {
            return Err(Error::Frame(format!(
                "segment [{start}, {}) exceeds frame of {}",
                start + len,
                frame.len()
            )));
        }
        let mut values = Vec::with_capacity(frame.n_channels() * len);
        let mut observed = Vec::with_capacity(values.capacity());
        for c in 0..frame.n_channels() {
            values.extend_from_slice(&frame.channel(c)[start..start + len]);
            observed.extend_from_slice(&frame.observed_mask(c)[start..start + len]);
        }
        Ok(Self {
            values,
            observed,
            n_channels: frame.n_channels(),
            len,
        })
    }
}

/// Windows of `len` every `stride` samples; windows without any observed
/// cell are skipped.
pub fn segments_from_frames(frames: &[TimeSeriesFrame], len: usize, stride: usize) -> Result<Vec<Segment>> {
    let mut out = Vec::new();
    for f in frames {
        for start in crate::signal::slice_windows(f.len(), len, stride) {
            let s = Segment::from_frame(f, start, len)?;
            if s.observed.iter().any(|&o| o) {
                out.push(s);
            }
        }
    }
    Ok(out)
}

/// Hidden cells for one segment under `policy`; at least one observed cell
/// is hidden whenever the segment has one.
pub fn sample_train_mask<R: Rng + ?Sized>(seg: &Segment, policy: &TrainMaskPolicy, rng: &mut R) -> Vec<bool> {
    let (c, t) = (seg.n_channels, seg.len);
    let mut hidden = vec![false; c * t];
    let mut any = false;
    let gap = |ch: usize, hidden: &mut [bool], rng: &mut R| {
        let class = LengthClass::ALL[rng.random_range(0..3)];
        let (lo, hi) = policy.classes.range(class);
        let len = rng.random_range(lo.min(t)..=hi.min(t));
        let start = rng.random_range(0..=t - len);
        let mut hit = false;
        for s in start..start + len {
            if seg.observed[ch * t + s] {
                hidden[ch * t + s] = true;
                hit = true;
            }
        }
        hit
    };
    for ch in 0..c {
        if rng.random::<f64>() < policy.channel_prob {
            any |= gap(ch, &mut hidden, rng);
        }
    }
    if !any && seg.observed.iter().any(|&o| o) {
        for _ in 0..64 {
            let ch = rng.random_range(0..c);
            if gap(ch, &mut hidden, rng) {
                break;
            }
        }
    }
    hidden
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct EpochLoss {
    pub epoch: usize,
    pub train_loss: f64,
    pub val_loss: Option<f64>,
}

#[derive(Debug, Clone, Default)]
pub struct TrainOptions {
    /// Where a diagnostic checkpoint is written if training diverges.
    pub diagnostic_dir: Option<PathBuf>,
    /// Log progress every this many epochs (0 disables).
    pub log_every: usize,
}

/// A batch laid out for the loss: input tensor, time-major target and
/// loss weights.
pub struct PreparedBatch {
    pub input: Tensor,
    pub target: Tensor,
    pub weights: Tensor,
}

pub fn prepare_batch(
    model: &ImputerModel,
    segs: &[&Segment],
    hidden: &[&[bool]],
) -> Result<PreparedBatch> {
    let cfg = &model.config;
    let (c, t, b) = (cfg.n_channels, cfg.window_len, segs.len());
    let mut values = Vec::with_capacity(b * c * t);
    let mut visible = Vec::with_capacity(b * c * t);
    let mut target = vec![0.0; b * t * c];
    let mut weights = vec![0.0; b * t * c];
    for (i, (seg, hid)) in segs.iter().zip(hidden).enumerate() {
        if seg.n_channels != c || seg.len != t {
            return Err(Error::Impute(format!(
                "segment is {}x{}, model expects {c}x{t}",
                seg.n_channels, seg.len
            )));
        }
        for ch in 0..c {
            for s in 0..t {
                let k = ch * t + s;
                let obs = seg.observed[k];
                values.push(if obs { seg.values[k] } else { 0.0 });
                visible.push(obs && !hid[k]);
                let j = (i * t + s) * c + ch;
                if obs {
                    target[j] = seg.values[k];
                }
                let counted = match cfg.loss_scope {
                    LossScope::MaskedOnly => obs && hid[k],
                    LossScope::AllObserved => obs,
                };
                if counted {
                    weights[j] = 1.0;
                }
            }
        }
    }
    Ok(PreparedBatch {
        input: model.encode_input(&values, &visible, b)?,
        target: Tensor::new(vec![b, t, c], target)?,
        weights: Tensor::new(vec![b, t, c], weights)?,
    })
}

/// Loss of one prepared batch on a fresh tape.
pub fn batch_loss(model: &mut ImputerModel, batch: &PreparedBatch, training: bool) -> Result<(Tape, gapfill_tensor::Var)> {
    let mut tape = Tape::new();
    tape.set_checked(false);
    let input = tape.constant(batch.input.clone());
    let fwd = model.forward(&mut tape, input, training)?;
    let loss = masked_mse(&mut tape, fwd.output, &batch.target, &batch.weights)?;
    Ok((tape, loss))
}

fn diverged(model: &ImputerModel, epoch: usize, opts: &TrainOptions) -> Error {
    let checkpoint = opts.diagnostic_dir.as_ref().and_then(|dir| {
        let path = dir.join(format!("diverged_epoch{epoch}.ckpt"));
        std::fs::create_dir_all(dir).ok()?;
        model.save(&path).ok()?;
        Some(path)
    });
    Error::Diverged { epoch, checkpoint }
}

/// Trains from scratch. Masks are redrawn every epoch; the validation split
/// keeps one fixed mask per segment.
pub fn train(
    segments: &[Segment],
    config: &ImputerConfig,
    seed: u64,
    opts: &TrainOptions,
) -> Result<(ImputerModel, Vec<EpochLoss>)> {
    config.validate()?;
    if segments.is_empty() {
        return Err(Error::Impute("no training segments".into()));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut model = ImputerModel::new(config.clone(), &mut rng)?;
    let mut order: Vec<usize> = (0..segments.len()).collect();
    order.shuffle(&mut rng);
    let n_val = if segments.len() >= 2 {
        ((config.val_fraction * segments.len() as f64).round() as usize).min(segments.len() - 1)
    } else {
        0
    };
    let (val_idx, train_idx) = order.split_at(n_val);
    let val_masks: Vec<Vec<bool>> = val_idx
        .iter()
        .map(|&i| sample_train_mask(&segments[i], &config.train_mask, &mut rng))
        .collect();
    let mut train_idx = train_idx.to_vec();
    let mut adam = AdamState::for_store(
        AdamConfig {
            learning_rate: config.learning_rate,
            ..AdamConfig::default()
        },
        model.store(),
    );
    let mut curve = Vec::with_capacity(config.epochs);
    for epoch in 1..=config.epochs {
        train_idx.shuffle(&mut rng);
        let mut total = 0.0;
        let mut batches = 0;
        for chunk in train_idx.chunks(config.batch_size) {
            let segs: Vec<&Segment> = chunk.iter().map(|&i| &segments[i]).collect();
            let masks: Vec<Vec<bool>> = segs
                .iter()
                .map(|s| sample_train_mask(s, &config.train_mask, &mut rng))
                .collect();
            let refs: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
            let batch = prepare_batch(&model, &segs, &refs)?;
            if !batch.weights.data().iter().any(|&w| w != 0.0) {
                continue;
            }
            let (tape, loss) = batch_loss(&mut model, &batch, true)?;
            let value = tape.value(loss).item();
            if !value.is_finite() {
                return Err(diverged(&model, epoch, opts));
            }
            let grads = tape.backward(loss)?;
            adam.step(model.store_mut(), &grads)?;
            if !model.store().all_finite() {
                return Err(diverged(&model, epoch, opts));
            }
            total += value;
            batches += 1;
        }
        let train_loss = if batches > 0 { total / batches as f64 } else { f64::NAN };
        let val_loss = if val_idx.is_empty() {
            None
        } else {
            let mut vt = 0.0;
            let mut vn = 0;
            for (chunk, masks) in val_idx.chunks(config.batch_size).zip(val_masks.chunks(config.batch_size)) {
                let segs: Vec<&Segment> = chunk.iter().map(|&i| &segments[i]).collect();
                let refs: Vec<&[bool]> = masks.iter().map(Vec::as_slice).collect();
                let batch = prepare_batch(&model, &segs, &refs)?;
                if !batch.weights.data().iter().any(|&w| w != 0.0) {
                    continue;
                }
                let (tape, loss) = batch_loss(&mut model, &batch, false)?;
                vt += tape.value(loss).item();
                vn += 1;
            }
            (vn > 0).then(|| vt / vn as f64)
        };
        if opts.log_every > 0 && (epoch % opts.log_every == 0 || epoch == 1) {
            log::info!("imputer epoch {epoch}: train {train_loss:.5} val {val_loss:?}");
        }
        curve.push(EpochLoss {
            epoch,
            train_loss,
            val_loss,
        });
    }
    Ok((model, curve))
}

impl ImputerModel {
    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let config = serde_json::to_value(&self.config)?;
        let header = CheckpointHeader::new(&config, serde_json::to_value(self.meta())?);
        gapfill_tensor::save_checkpoint(path, &header, &self.store)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (header, store) = gapfill_tensor::load_checkpoint(path)?;
        let meta = serde_json::from_value(header.metadata)?;
        Self::from_parts(meta, store)
    }

    pub fn to_bytes(&self) -> Result<Vec<u8>> {
        let config = serde_json::to_value(&self.config)?;
        let header = CheckpointHeader::new(&config, serde_json::to_value(self.meta())?);
        let mut buf = Vec::new();
        gapfill_tensor::write_checkpoint(&mut buf, &header, &self.store)?;
        Ok(buf)
    }
}

/// Two-column `epoch,loss` CSV of the training loss.
pub fn loss_curve_csv(curve: &[EpochLoss]) -> String {
    let mut s = String::from("epoch,loss\n");
    for e in curve {
        s.push_str(&format!("{},{:.17e}\n", e.epoch, e.train_loss));
    }
    s
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::signal::ChannelInfo;

    fn seg(observed: Vec<bool>, c: usize, t: usize) -> Segment {
        Segment {
            values: vec![1.0; c * t],
            observed,
            n_channels: c,
            len: t,
        }
    }

    #[test]
    fn train_masks_hide_only_observed_cells() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        let policy = TrainMaskPolicy::default();
        let observed: Vec<bool> = (0..60).map(|i| i % 7 != 0).collect();
        let s = seg(observed.clone(), 3, 20);
        for _ in 0..200 {
            let hidden = sample_train_mask(&s, &policy, &mut rng);
            assert!(hidden.iter().any(|&h| h));
            assert!(hidden.iter().zip(&observed).all(|(&h, &o)| !h || o));
        }
        let empty = seg(vec![false; 60], 3, 20);
        assert!(!sample_train_mask(&empty, &policy, &mut rng).iter().any(|&h| h));
    }

    #[test]
    fn segments_skip_fully_missing_windows() {
        let mut v: Vec<f64> = (0..10).map(f64::from).collect();
        v[4..8].fill(f64::NAN);
        let f = TimeSeriesFrame::from_channels(vec![ChannelInfo::new("x")], 1.0, vec![v]).unwrap();
        let segs = segments_from_frames(&[f], 2, 2).unwrap();
        assert_eq!(segs.len(), 3);
        assert_eq!(segs[2].values, vec![8.0, 9.0]);
    }

    #[test]
    fn loss_curve_has_one_row_per_epoch() {
        let curve: Vec<EpochLoss> = (1..=3)
            .map(|epoch| EpochLoss {
                epoch,
                train_loss: 1.0 / epoch as f64,
                val_loss: None,
            })
            .collect();
        let csv = loss_curve_csv(&curve);
        assert_eq!(csv.lines().count(), 4);
        assert!(csv.starts_with("epoch,loss\n1,"));
    }
}
