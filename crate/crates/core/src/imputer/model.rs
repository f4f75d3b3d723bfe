use gapfill_tensor::{ParamId, ParamStore, RunningStats, Tape, Tensor, Var};
use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::imputer::config::{ImputerConfig, MaskToken};
use crate::nn::{lookup, Linear, MultiHeadAttention, NormParams};
use crate::signal::Standardizer;

#[derive(Debug, Clone)]
pub(crate) struct EncoderLayer {
    pub attn: MultiHeadAttention,
    pub ff1: Linear,
    pub ff2: Linear,
    pub norm: NormParams,
}

/// Encoder-only masked-reconstruction transformer.
#[derive(Debug, Clone)]
pub struct ImputerModel {
    pub config: ImputerConfig,
    pub(crate) store: ParamStore,
    pub(crate) in_proj: Linear,
    pub(crate) positional: ParamId,
    pub(crate) layers: Vec<EncoderLayer>,
    pub(crate) out_proj: Linear,
    pub(crate) running: Vec<RunningStats>,
    /// Standardisation fitted on the training split, applied by
    /// [`ImputerModel::impute`] on raw frames.
    pub stats: Option<Standardizer>,
}

/// Serialisable non-parameter state carried in checkpoints.
#[derive(Debug, Clone, Serialize, Deserialize)]
pub(crate) struct ImputerMeta {
    pub config: ImputerConfig,
    pub running: Vec<RunningStats>,
    pub stats: Option<Standardizer>,
}

/// Model output for one batch.
pub struct Forward {
    /// `[B, T, C]` reconstruction.
    pub output: Var,
    /// Per-layer attention weights `[B * H, T, T]`.
    pub attention: Vec<Var>,
}

impl ImputerModel {
    pub fn new<R: Rng + ?Sized>(config: ImputerConfig, rng: &mut R) -> Result<Self> {
        config.validate()?;
        let (d, f) = (config.d_model, config.ffn_hidden);
        let mut store = ParamStore::new();
        let in_proj = Linear::new(&mut store, "in_proj", config.input_width(), d, true, rng)?;
        let positional = store.add(
            "positional",
            Tensor::randn(&[config.window_len, d], 0.02, rng),
        )?;
        let mut layers = Vec::with_capacity(config.n_layers);
        for l in 0..config.n_layers {
            let p = format!("layer{l}");
            layers.push(EncoderLayer {
                attn: MultiHeadAttention::new(
                    &mut store,
                    &format!("{p}.attn"),
                    d,
                    config.n_heads,
                    config.head_dim(),
                    true,
                    rng,
                )?,
                ff1: Linear::new(&mut store, &format!("{p}.ff1"), d, f, true, rng)?,
                ff2: Linear::new(&mut store, &format!("{p}.ff2"), f, d, true, rng)?,
                norm: NormParams::new(&mut store, &format!("{p}.bn"), d)?,
            });
        }
        let out_proj = Linear::new(&mut store, "out_proj", d, config.n_channels, true, rng)?;
        let running = (0..config.n_layers).map(|_| RunningStats::new(d)).collect();
        Ok(Self {
            config,
            store,
            in_proj,
            positional,
            layers,
            out_proj,
            running,
            stats: None,
        })
    }

    pub(crate) fn from_parts(meta: ImputerMeta, store: ParamStore) -> Result<Self> {
        let config = meta.config;
        config.validate()?;
        let layers = (0..config.n_layers)
            .map(|l| {
                let p = format!("layer{l}");
                Ok(EncoderLayer {
                    attn: MultiHeadAttention::from_store(&store, &format!("{p}.attn"), config.n_heads)?,
                    ff1: Linear::from_store(&store, &format!("{p}.ff1"))?,
                    ff2: Linear::from_store(&store, &format!("{p}.ff2"))?,
                    norm: NormParams::from_store(&store, &format!("{p}.bn"))?,
                })
            })
            .collect::<Result<Vec<_>>>()?;
        if meta.running.len() != config.n_layers {
            return Err(Error::Config("checkpoint running stats do not match n_layers".into()));
        }
        let model = Self {
            in_proj: Linear::from_store(&store, "in_proj")?,
            positional: lookup(&store, "positional")?,
            out_proj: Linear::from_store(&store, "out_proj")?,
            layers,
            running: meta.running,
            stats: meta.stats,
            config,
            store,
        };
        if model.count_parameters() != model.config.analytic_parameter_count() {
            return Err(Error::Config("checkpoint parameters do not match the embedded config".into()));
        }
        Ok(model)
    }

    pub(crate) fn meta(&self) -> ImputerMeta {
        ImputerMeta {
            config: self.config.clone(),
            running: self.running.clone(),
            stats: self.stats.clone(),
        }
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

    pub fn output_projection(&self) -> (ParamId, ParamId) {
        (self.out_proj.weight, self.out_proj.bias.expect("output projection has a bias"))
    }

    pub fn running_stats(&self) -> &[RunningStats] {
        &self.running
    }

    /// Introspected learnable element count.
    pub fn count_parameters(&self) -> usize {
        self.store.num_elements()
    }

    /// Multi-head self-attention of one layer on a single `[T, d]` input,
    /// returning the output and the `[H, T, T]` attention weights.
    pub fn self_attention(&self, layer: usize, x: &Tensor) -> Result<(Tensor, Tensor)> {
        let s = x.shape().to_vec();
        let mut tape = Tape::new();
        let xv = tape.constant(x.clone().reshaped(&[1, s[0], s[1]])?);
        let (out, w) = self.layers[layer].attn.forward(
            &mut tape,
            &self.store,
            xv,
            0.0,
            false,
            &mut idle_rng(),
        )?;
        Ok((
            tape.value(out).clone().reshaped(&s)?,
            tape.value(w).clone(),
        ))
    }

    /// Builds the model input `[B, T, in]` from channel-major segment values
    /// and a visibility mask (both `B` blocks of `C * T`).
    pub fn encode_input(&self, values: &[f64], visible: &[bool], batch: usize) -> Result<Tensor> {
        let (c, t) = (self.config.n_channels, self.config.window_len);
        if values.len() != batch * c * t || visible.len() != values.len() {
            return Err(Error::Impute(format!(
                "expected {batch} segments of {c}x{t} cells, got {} values",
                values.len()
            )));
        }
        let width = self.config.input_width();
        let mut data = vec![0.0; batch * t * width];
        for b in 0..batch {
            for ch in 0..c {
                for s in 0..t {
                    let i = b * c * t + ch * t + s;
                    let row = (b * t + s) * width;
                    if visible[i] {
                        data[row + ch] = values[i];
                    } else if self.config.mask_token == MaskToken::ZeroWithIndicator {
                        data[row + c + ch] = 1.0;
                    }
                }
            }
        }
        Ok(Tensor::new(vec![batch, t, width], data)?)
    }

    /// Full forward pass on `[B, T, in]` input.
    pub fn forward(&mut self, tape: &mut Tape, input: Var, training: bool) -> Result<Forward> {
        let s = tape.shape(input).to_vec();
        if s.len() != 3 || s[1] != self.config.window_len || s[2] != self.config.input_width() {
            return Err(Error::Impute(format!(
                "input shape {s:?} does not match window {} and width {}",
                self.config.window_len,
                self.config.input_width()
            )));
        }
        let mut rng = idle_rng();
        let mut x = self.in_proj.forward(tape, &self.store, input)?;
        let pos = tape.param(&self.store, self.positional);
        x = tape.add_broadcast(x, pos)?;
        let mut attention = Vec::with_capacity(self.layers.len());
        for (layer, running) in self.layers.iter().zip(self.running.iter_mut()) {
            let (a, w) = layer.attn.forward(tape, &self.store, x, 0.0, training, &mut rng)?;
            attention.push(w);
            let x1 = tape.add(x, a)?;
            let h = layer.ff1.forward(tape, &self.store, x1)?;
            let h = tape.gelu(h)?;
            let h = layer.ff2.forward(tape, &self.store, h)?;
            let g = tape.param(&self.store, layer.norm.gamma);
            let bt = tape.param(&self.store, layer.norm.beta);
            let h = tape.batch_norm(h, g, bt, running, training)?;
            x = tape.add(x1, h)?;
        }
        let output = self.out_proj.forward(tape, &self.store, x)?;
        Ok(Forward { output, attention })
    }

    /// Eval-mode reconstruction of `batch` channel-major segments.
    pub fn reconstruct(&mut self, values: &[f64], visible: &[bool], batch: usize) -> Result<Vec<f64>> {
        let input = self.encode_input(values, visible, batch)?;
        let mut tape = Tape::new();
        tape.set_checked(false);
        let iv = tape.constant(input);
        let fwd = self.forward(&mut tape, iv, false)?;
        let out = tape.value(fwd.output).data();
        let (c, t) = (self.config.n_channels, self.config.window_len);
        let mut res = vec![0.0; batch * c * t];
        for b in 0..batch {
            for s in 0..t {
                for ch in 0..c {
                    res[b * c * t + ch * t + s] = out[(b * t + s) * c + ch];
                }
            }
        }
        Ok(res)
    }
}

/// Mean squared error over cells where `weights` is 1. Cells with weight 0
/// do not influence the value or its gradient.
pub fn masked_mse(tape: &mut Tape, pred: Var, target: &Tensor, weights: &Tensor) -> Result<Var> {
    let n = weights.data().iter().filter(|&&w| w != 0.0).count();
    if n == 0 {
        return Err(Error::Impute("loss mask selects no cells".into()));
    }
    let clean: Vec<f64> = target
        .data()
        .iter()
        .zip(weights.data())
        .map(|(&v, &w)| if w != 0.0 { v } else { 0.0 })
        .collect();
    let tv = tape.constant(Tensor::new(target.shape().to_vec(), clean)?);
    let wv = tape.constant(weights.clone());
    let diff = tape.sub(pred, tv)?;
    let diff = tape.mul(diff, wv)?;
    let sq = tape.mul(diff, diff)?;
    let total = tape.sum(sq)?;
    Ok(tape.scale(total, 1.0 / n as f64)?)
}

/// Generator for dropout-free passes; never drawn from.
pub(crate) fn idle_rng() -> rand_chacha::ChaCha8Rng {
    use rand::SeedableRng;
    rand_chacha::ChaCha8Rng::seed_from_u64(0)
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn small(window_len: usize) -> ImputerModel {
        let cfg = ImputerConfig {
            n_channels: 3,
            window_len,
            ..ImputerConfig::default()
        };
        ImputerModel::new(cfg, &mut ChaCha8Rng::seed_from_u64(4)).unwrap()
    }

    fn rows(t: usize, d: usize, seed: u64) -> Tensor {
        Tensor::randn(&[t, d], 1.0, &mut ChaCha8Rng::seed_from_u64(seed))
    }

    #[test]
    fn single_step_attends_to_itself() {
        let m = small(8);
        let x = rows(1, 16, 1);
        let (out, w) = m.self_attention(0, &x).unwrap();
        assert!(w.data().iter().all(|&v| (v - 1.0).abs() < 1e-15));
        // With one position the output is o(v(x)).
        let attn = &m.layers[0].attn;
        let v = x.matmul(m.store.get(attn.v.weight)).unwrap();
        let vb = m.store.get(attn.v.bias.unwrap()).data();
        let v = Tensor::new(vec![1, 16], v.data().iter().zip(vb).map(|(a, b)| a + b).collect()).unwrap();
        let o = v.matmul(m.store.get(attn.o.weight)).unwrap();
        let ob = m.store.get(attn.o.bias.unwrap()).data();
        for ((a, b), c) in out.data().iter().zip(o.data()).zip(ob) {
            assert!((a - (b + c)).abs() < 1e-12);
        }
    }

    #[test]
    fn identical_rows_give_uniform_weights() {
        let m = small(8);
        let row = rows(1, 16, 2);
        let x = Tensor::new(vec![5, 16], row.data().repeat(5)).unwrap();
        let (_, w) = m.self_attention(0, &x).unwrap();
        assert_eq!(w.shape(), &[4, 5, 5]);
        assert!(w.data().iter().all(|&v| (v - 0.2).abs() < 1e-12));
    }

    #[test]
    fn attention_is_permutation_equivariant() {
        let m = small(8);
        let x = rows(6, 16, 3);
        let perm = [3, 0, 5, 1, 4, 2];
        let px: Vec<f64> = perm.iter().flat_map(|&i| x.data()[i * 16..(i + 1) * 16].to_vec()).collect();
        let (out, _) = m.self_attention(0, &x).unwrap();
        let (pout, _) = m.self_attention(0, &Tensor::new(vec![6, 16], px).unwrap()).unwrap();
        for (k, &i) in perm.iter().enumerate() {
            for j in 0..16 {
                assert!((pout.at2(k, j) - out.at2(i, j)).abs() < 1e-12);
            }
        }
    }

    #[test]
    fn zero_output_projection_returns_bias() {
        let mut m = small(8);
        let (w, b) = m.output_projection();
        m.store_mut().get_mut(w).data_mut().fill(0.0);
        m.store_mut().get_mut(b).data_mut().copy_from_slice(&[0.5, -1.0, 2.0]);
        let values: Vec<f64> = (0..24).map(|i| i as f64 * 0.1).collect();
        let out = m.reconstruct(&values, &[true; 24], 1).unwrap();
        for c in 0..3 {
            assert!(out[c * 8..(c + 1) * 8].iter().all(|&v| v == [0.5, -1.0, 2.0][c]));
        }
    }

    #[test]
    fn parameter_count_matches_formula_and_grows_with_window() {
        let base = small(120);
        assert_eq!(base.count_parameters(), base.config.analytic_parameter_count());
        let longer = small(130);
        assert_eq!(longer.count_parameters() - base.count_parameters(), 16 * 10);
        let ten = ImputerConfig::default();
        assert_eq!(ten.analytic_parameter_count(), 4156);
    }

    #[test]
    fn indicator_marks_hidden_cells() {
        let m = small(2);
        let values = [1.0, 2.0, 3.0, 4.0, 5.0, 6.0];
        let visible = [true, false, true, true, false, true];
        let t = m.encode_input(&values, &visible, 1).unwrap();
        // Time-major rows of [values x3, indicators x3].
        assert_eq!(t.data(), &[1.0, 3.0, 0.0, 0.0, 0.0, 1.0, 0.0, 4.0, 6.0, 1.0, 0.0, 0.0]);
    }

    #[test]
    fn masked_mse_ignores_unweighted_cells() {
        let target = Tensor::new(vec![1, 4], vec![1.0, 2.0, f64::NAN, 4.0]).unwrap();
        let weights = Tensor::new(vec![1, 4], vec![1.0, 0.0, 0.0, 1.0]).unwrap();
        let mut tape = Tape::new();
        let p = tape.leaf(Tensor::new(vec![1, 4], vec![2.0, 100.0, 7.0, 4.0]).unwrap(), true);
        let loss = masked_mse(&mut tape, p, &target, &weights).unwrap();
        assert_eq!(tape.value(loss).item(), 0.5);
        assert!(masked_mse(&mut tape, p, &target, &Tensor::zeros(&[1, 4])).is_err());
        let g = tape.backward(loss).unwrap();
        assert_eq!(g.get(p).unwrap().data(), &[1.0, 0.0, 0.0, 0.0]);
    }
}
