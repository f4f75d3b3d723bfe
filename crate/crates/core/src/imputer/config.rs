use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::masking::GapClasses;

/// How hidden cells are presented to the model.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MaskToken {
    /// Zero-fill plus one 0/1 indicator channel per input channel.
    ZeroWithIndicator,
    /// Zero-fill only.
    Zero,
}

/// Cells that contribute to the training loss.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum LossScope {
    /// Artificially hidden cells that were originally observed.
    MaskedOnly,
    /// Every originally observed cell.
    AllObserved,
}

/// Fresh training masks drawn per segment and epoch: each channel receives
/// one gap with probability `channel_prob`, its length class chosen
/// uniformly and its length uniformly within the class range (capped at the
/// window length).
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainMaskPolicy {
    pub classes: GapClasses,
    pub channel_prob: f64,
}

impl Default for TrainMaskPolicy {
    fn default() -> Self {
        Self {
            classes: GapClasses::default(),
            channel_prob: 0.5,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ImputerConfig {
    pub n_channels: usize,
    pub window_len: usize,
    pub d_model: usize,
    pub n_heads: usize,
    pub ffn_hidden: usize,
    pub n_layers: usize,
    pub learning_rate: f64,
    pub epochs: usize,
    pub batch_size: usize,
    pub mask_token: MaskToken,
    pub loss_scope: LossScope,
    pub train_mask: TrainMaskPolicy,
    /// Share of segments held out for the validation loss.
    pub val_fraction: f64,
}

impl Default for ImputerConfig {
    fn default() -> Self {
        Self {
            n_channels: 10,
            window_len: 120,
            d_model: 16,
            n_heads: 4,
            ffn_hidden: 18,
            n_layers: 1,
            learning_rate: 1e-3,
            epochs: 400,
            batch_size: 32,
            mask_token: MaskToken::ZeroWithIndicator,
            loss_scope: LossScope::MaskedOnly,
            train_mask: TrainMaskPolicy::default(),
            val_fraction: 0.1,
        }
    }
}

impl ImputerConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.n_channels == 0 || self.window_len == 0 {
            return fail("n_channels and window_len must be at least 1".into());
        }
        if self.d_model == 0 || self.n_heads == 0 || self.d_model % self.n_heads != 0 {
            return fail(format!(
                "d_model {} must be a positive multiple of n_heads {}",
                self.d_model, self.n_heads
            ));
        }
        if self.ffn_hidden == 0 || self.n_layers == 0 || self.batch_size == 0 {
            return fail("ffn_hidden, n_layers and batch_size must be at least 1".into());
        }
        if !(self.learning_rate > 0.0 && self.learning_rate.is_finite()) {
            return fail(format!("learning rate {} must be positive", self.learning_rate));
        }
        if !(0.0..1.0).contains(&self.val_fraction) {
            return fail(format!("val_fraction {} must lie in [0, 1)", self.val_fraction));
        }
        if !(0.0..=1.0).contains(&self.train_mask.channel_prob) || self.train_mask.channel_prob == 0.0 {
            return fail("train_mask.channel_prob must lie in (0, 1]".into());
        }
        self.train_mask.classes.validate()
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    pub fn input_width(&self) -> usize {
        match self.mask_token {
            MaskToken::ZeroWithIndicator => 2 * self.n_channels,
            MaskToken::Zero => self.n_channels,
        }
    }

    /// Closed-form learnable parameter count.
    pub fn analytic_parameter_count(&self) -> usize {
        let (c, d, f, t) = (self.n_channels, self.d_model, self.ffn_hidden, self.window_len);
        let input = self.input_width() * d + d;
        let positional = t * d;
        let attention = 4 * (d * d + d);
        let ffn = (d * f + f) + (f * d + d);
        let norm = 2 * d;
        let output = d * c + c;
        input + positional + self.n_layers * (attention + ffn + norm) + output
    }
}
