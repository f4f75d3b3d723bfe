use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::nn::{Linear, MultiHeadAttention};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Pooling {
    /// Learnable class token prepended to the patch sequence.
    ClassToken,
    /// Mean of the patch tokens.
    Mean,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ClassifierConfig {
    pub patch_size: usize,
    pub depth: usize,
    pub n_heads: usize,
    pub d_emb: usize,
    /// Per-head query/key/value width.
    pub d_attn: usize,
    pub d_mlp: usize,
    pub p_emb: f64,
    pub p_attn: f64,
    pub p_mlp: f64,
    pub n_classes: usize,
    pub n_channels: usize,
    pub window_len: usize,
    pub pooling: Pooling,
    pub learning_rate: f64,
    pub epochs: usize,
    /// Epochs without a validation-accuracy improvement before stopping.
    pub patience: usize,
    pub batch_size: usize,
}

impl Default for ClassifierConfig {
    fn default() -> Self {
        Self {
            patch_size: 16,
            depth: 8,
            n_heads: 4,
            d_emb: 64,
            d_attn: 64,
            d_mlp: 128,
            p_emb: 0.4,
            p_attn: 0.4,
            p_mlp: 0.4,
            n_classes: 6,
            n_channels: 6,
            window_len: 128,
            pooling: Pooling::ClassToken,
            learning_rate: 1e-3,
            epochs: 100,
            patience: 10,
            batch_size: 32,
        }
    }
}

impl ClassifierConfig {
    pub fn validate(&self) -> Result<()> {
        let fail = |m: String| Err(Error::Config(m));
        if self.patch_size == 0 || self.window_len % self.patch_size != 0 {
            return fail(format!(
                "window_len {} must be a multiple of patch_size {}",
                self.window_len, self.patch_size
            ));
        }
        for (name, p) in [("p_emb", self.p_emb), ("p_attn", self.p_attn), ("p_mlp", self.p_mlp)] {
            if !(0.0..1.0).contains(&p) {
                return fail(format!("{name} = {p} must lie in [0, 1)"));
            }
        }
        if self.depth == 0
            || self.n_heads == 0
            || self.d_emb == 0
            || self.d_attn == 0
            || self.d_mlp == 0
            || self.n_channels == 0
            || self.batch_size == 0
        {
            return fail("classifier dimensions must be positive".into());
        }
        if self.n_classes < 2 {
            return fail(format!("need at least 2 classes, got {}", self.n_classes));
        }
        if !(self.learning_rate > 0.0) {
            return fail("learning rate must be positive".into());
        }
        Ok(())
    }

    pub fn n_patches(&self) -> usize {
        self.window_len / self.patch_size
    }

    pub fn patch_width(&self) -> usize {
        self.n_channels * self.patch_size
    }

    pub fn n_tokens(&self) -> usize {
        self.n_patches() + usize::from(self.pooling == Pooling::ClassToken)
    }

    /// Closed-form learnable parameter count.
    pub fn analytic_parameter_count(&self) -> usize {
        let d = self.d_emb;
        let embed = Linear::num_params(self.patch_width(), d, true);
        let cls = if self.pooling == Pooling::ClassToken { d } else { 0 };
        let positional = self.n_tokens() * d;
        let block = 2 * d
            + MultiHeadAttention::num_params(d, self.n_heads, self.d_attn, false)
            + 2 * d
            + Linear::num_params(d, self.d_mlp, true)
            + Linear::num_params(self.d_mlp, d, true);
        let head = 2 * d + Linear::num_params(d, self.n_classes, true);
        embed + cls + positional + self.depth * block + head
    }
}
