use gapfill_tensor::{softmax, ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, RngCore};
use serde::{Deserialize, Serialize};

use crate::classifier::config::{ClassifierConfig, Pooling};
use crate::error::{Error, Result};
use crate::nn::{lookup, Linear, MultiHeadAttention, NormParams};

/// Floor on the per-channel standard deviation in instance normalisation.
pub const INSTANCE_NORM_EPS: f64 = 1e-8;

/// Per-channel z-scoring of a channel-major `C x W` window. A constant
/// channel maps to zeros.
pub fn instance_normalize(values: &[f64], n_channels: usize) -> Result<Vec<f64>> {
    if n_channels == 0 || values.len() % n_channels != 0 || values.len() / n_channels < 2 {
        return Err(Error::Frame(format!(
            "instance normalisation needs at least 2 readings per channel ({} values, {n_channels} channels)",
            values.len()
        )));
    }
    let w = values.len() / n_channels;
    let mut out = Vec::with_capacity(values.len());
    for x in values.chunks(w) {
        let mean = x.iter().sum::<f64>() / w as f64;
        let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / w as f64;
        let std = var.sqrt();
        if std < INSTANCE_NORM_EPS {
            out.extend(std::iter::repeat_n(0.0, w));
        } else {
            out.extend(x.iter().map(|v| (v - mean) / std));
        }
    }
    Ok(out)
}

/// `C x W` window to `(W / P) x (C * P)` patches. Patches follow time; each
/// patch lists channel 0's `P` readings, then channel 1's, and so on.
pub fn patchify(values: &[f64], n_channels: usize, patch: usize) -> Result<Vec<f64>> {
    let w = values.len() / n_channels.max(1);
    if patch == 0 || w * n_channels != values.len() || w % patch != 0 {
        return Err(Error::Config(format!("patch size {patch} does not divide window length {w}")));
    }
    let mut out = Vec::with_capacity(values.len());
    for p in 0..w / patch {
        for c in 0..n_channels {
            out.extend_from_slice(&values[c * w + p * patch..c * w + (p + 1) * patch]);
        }
    }
    Ok(out)
}

/// Inverse of [`patchify`].
pub fn unpatchify(patches: &[f64], n_channels: usize, patch: usize) -> Result<Vec<f64>> {
    let w = patches.len() / n_channels.max(1);
    if patch == 0 || w * n_channels != patches.len() || w % patch != 0 {
        return Err(Error::Config(format!("patch size {patch} does not divide window length {w}")));
    }
    let mut out = vec![0.0; patches.len()];
    let mut k = 0;
    for p in 0..w / patch {
        for c in 0..n_channels {
            out[c * w + p * patch..c * w + (p + 1) * patch].copy_from_slice(&patches[k..k + patch]);
            k += patch;
        }
    }
    Ok(out)
}

#[derive(Debug, Clone)]
struct Block {
    ln1: NormParams,
    attn: MultiHeadAttention,
    ln2: NormParams,
    mlp1: Linear,
    mlp2: Linear,
}

/// Patch-based transformer classifier.
#[derive(Debug, Clone)]
pub struct PatchClassifier {
    pub config: ClassifierConfig,
    store: ParamStore,
    embed: Linear,
    cls: Option<ParamId>,
    positional: ParamId,
    blocks: Vec<Block>,
    final_norm: NormParams,
    head: Linear,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
struct ClassifierMeta {
    config: ClassifierConfig,
}

impl PatchClassifier {
    pub fn new<R: Rng + ?Sized>(config: ClassifierConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let d = config.d_emb;
        let mut store = ParamStore::new();
        let embed = Linear::new(&mut store, "patch_embed", config.patch_width(), d, true, rng)?;
        let cls = match config.pooling {
            Pooling::ClassToken => Some(store.add("cls_token", Tensor::randn(&[1, d], 0.02, rng))?),
            Pooling::Mean => None,
        };
        let positional = store.add("positional", Tensor::randn(&[config.n_tokens(), d], 0.02, rng))?;
        let mut blocks = Vec::with_capacity(config.depth);
        for b in 0..config.depth {
            let p = format!("block{b}");
            blocks.push(Block {
                ln1: NormParams::new(&mut store, &format!("{p}.ln1"), d)?,
                attn: MultiHeadAttention::new(
                    &mut store,
                    &format!("{p}.attn"),
                    d,
                    config.n_heads,
                    config.d_attn,
                    false,
                    rng,
                )?,
                ln2: NormParams::new(&mut store, &format!("{p}.ln2"), d)?,
                mlp1: Linear::new(&mut store, &format!("{p}.mlp1"), d, config.d_mlp, true, rng)?,
                mlp2: Linear::new(&mut store, &format!("{p}.mlp2"), config.d_mlp, d, true, rng)?,
            });
        }
        let final_norm = NormParams::new(&mut store, "final_norm", d)?;
        let head = Linear::new(&mut store, "head", d, config.n_classes, true, rng)?;
        Ok(Self {
            config,
            store,
            embed,
            cls,
            positional,
            blocks,
            final_norm,
            head,
        })
    }

    fn from_parts(config: ClassifierConfig, store: ParamStore) -> Result<Self> {
        config.validate()?;
        let blocks = (0..config.depth)
            .map(|b| {
                let p = format!("block{b}");
                Ok(Block {
                    ln1: NormParams::from_store(&store, &format!("{p}.ln1"))?,
                    attn: MultiHeadAttention::from_store(&store, &format!("{p}.attn"), config.n_heads)?,
                    ln2: NormParams::from_store(&store, &format!("{p}.ln2"))?,
                    mlp1: Linear::from_store(&store, &format!("{p}.mlp1"))?,
                    mlp2: Linear::from_store(&store, &format!("{p}.mlp2"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        let model = Self {
            embed: Linear::from_store(&store, "patch_embed")?,
            cls: store.id_of("cls_token"),
            positional: lookup(&store, "positional")?,
            final_norm: NormParams::from_store(&store, "final_norm")?,
            head: Linear::from_store(&store, "head")?,
            blocks,
            config,
            store,
        };
        if model.count_parameters() != model.config.analytic_parameter_count() {
            return Err(Error::Config("checkpoint parameters do not match the embedded config".into()));
        }
        Ok(model)
    }

    pub fn count_parameters(&self) -> usize {
        self.store.num_elements()
    }

    pub fn store(&self) -> &ParamStore {
        &self.store
    }

    pub fn store_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }

    pub fn positional_id(&self) -> ParamId {
        self.positional
    }

    /// Instance-normalised patch matrix for a batch of channel-major windows.
    pub fn prepare(&self, windows: &[&[f64]]) -> Result<Tensor> {
        let cfg = &self.config;
        let per = cfg.n_channels * cfg.window_len;
        let mut data = Vec::with_capacity(windows.len() * per);
        for w in windows {
            if w.len() != per {
                return Err(Error::Config(format!(
                    "window has {} values, classifier expects {}x{}",
                    w.len(),
                    cfg.n_channels,
                    cfg.window_len
                )));
            }
            let z = instance_normalize(w, cfg.n_channels)?;
            data.extend(patchify(&z, cfg.n_channels, cfg.patch_size)?);
        }
        Ok(Tensor::new(vec![windows.len(), cfg.n_patches(), cfg.patch_width()], data)?)
    }

    /// Logits `[B, n_classes]` for prepared patches `[B, N, C * P]`.
    pub fn logits(&self, tape: &mut Tape, patches: Var, training: bool, rng: &mut dyn RngCore) -> Result<Var> {
        let cfg = &self.config;
        let s = tape.shape(patches).to_vec();
        if s.len() != 3 || s[1] != cfg.n_patches() || s[2] != cfg.patch_width() {
            return Err(Error::Config(format!("patch tensor {s:?} does not match the classifier")));
        }
        let b = s[0];
        let d = cfg.d_emb;
        let mut x = self.embed.forward(tape, &self.store, patches)?;
        if let Some(cls) = self.cls {
            let table = tape.param(&self.store, cls);
            let rows = tape.gather_rows(table, &vec![0; b])?;
            let rows = tape.reshape(rows, &[b, 1, d])?;
            x = tape.concat(&[rows, x], 1)?;
        }
        let pos = tape.param(&self.store, self.positional);
        x = tape.add_broadcast(x, pos)?;
        x = tape.dropout(x, cfg.p_emb, training, rng)?;
        for block in &self.blocks {
            let h = block.ln1.layer_norm(tape, &self.store, x)?;
            let (a, _) = block.attn.forward(tape, &self.store, h, cfg.p_attn, training, rng)?;
            x = tape.add(x, a)?;
            let h = block.ln2.layer_norm(tape, &self.store, x)?;
            let h = block.mlp1.forward(tape, &self.store, h)?;
            let h = tape.gelu(h)?;
            let h = tape.dropout(h, cfg.p_mlp, training, rng)?;
            let h = block.mlp2.forward(tape, &self.store, h)?;
            let h = tape.dropout(h, cfg.p_mlp, training, rng)?;
            x = tape.add(x, h)?;
        }
        x = self.final_norm.layer_norm(tape, &self.store, x)?;
        let pooled = match cfg.pooling {
            Pooling::ClassToken => {
                let first = tape.slice(x, 1, 0, 1)?;
                tape.reshape(first, &[b, d])?
            }
            Pooling::Mean => tape.mean_axis(x, 1)?,
        };
        self.head.forward(tape, &self.store, pooled)
    }

    /// Eval-mode class probabilities, one row per window.
    pub fn predict_proba(&self, windows: &[&[f64]]) -> Result<Vec<Vec<f64>>> {
        let mut out = Vec::with_capacity(windows.len());
        let mut rng = crate::imputer::idle_rng();
        for chunk in windows.chunks(self.config.batch_size.max(1)) {
            let mut tape = Tape::new();
            tape.set_checked(false);
            let p = tape.constant(self.prepare(chunk)?);
            let logits = self.logits(&mut tape, p, false, &mut rng)?;
            let probs = softmax(tape.value(logits), 1)?;
            out.extend(probs.data().chunks(self.config.n_classes).map(<[f64]>::to_vec));
        }
        Ok(out)
    }

    pub fn predict(&self, windows: &[&[f64]]) -> Result<Vec<usize>> {
        Ok(self
            .predict_proba(windows)?
            .iter()
            .map(|p| {
                p.iter()
                    .enumerate()
                    .fold((0, f64::NEG_INFINITY), |best, (i, &v)| if v > best.1 { (i, v) } else { best })
                    .0
            })
            .collect())
    }

    pub fn save(&self, path: &std::path::Path) -> Result<()> {
        let config = serde_json::to_value(&self.config)?;
        let meta = serde_json::to_value(ClassifierMeta {
            config: self.config.clone(),
        })?;
        let header = gapfill_tensor::CheckpointHeader::new(&config, meta);
        gapfill_tensor::save_checkpoint(path, &header, &self.store)?;
        Ok(())
    }

    pub fn load(path: &std::path::Path) -> Result<Self> {
        let (header, store) = gapfill_tensor::load_checkpoint(path)?;
        let meta: ClassifierMeta = serde_json::from_value(header.metadata)?;
        Self::from_parts(meta.config, store)
    }
}
