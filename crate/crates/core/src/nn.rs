//! Layers shared by the imputer and the classifier.

use gapfill_tensor::{ParamId, ParamStore, Tape, Tensor, Var};
use rand::{Rng, RngCore};

use crate::error::Result;

/// Affine map over the last axis, `x W (+ b)` with `W: [in, out]`.
#[derive(Debug, Clone)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: Option<ParamId>,
    pub in_features: usize,
    pub out_features: usize,
}

impl Linear {
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        in_features: usize,
        out_features: usize,
        bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let weight = store.add(
            format!("{name}.weight"),
            Tensor::xavier(in_features, out_features, rng),
        )?;
        let bias = if bias {
            Some(store.add(format!("{name}.bias"), Tensor::zeros(&[out_features]))?)
        } else {
            None
        };
        Ok(Self {
            weight,
            bias,
            in_features,
            out_features,
        })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        let weight = lookup(store, &format!("{name}.weight"))?;
        let shape = store.get(weight).shape().to_vec();
        Ok(Self {
            weight,
            bias: store.id_of(&format!("{name}.bias")),
            in_features: shape[0],
            out_features: shape[1],
        })
    }

    pub fn num_params(in_features: usize, out_features: usize, bias: bool) -> usize {
        in_features * out_features + if bias { out_features } else { 0 }
    }

    pub fn forward(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let shape = tape.shape(x).to_vec();
        let rows = shape[..shape.len() - 1].iter().product();
        let flat = if shape.len() == 2 { x } else { tape.reshape(x, &[rows, self.in_features])? };
        let w = tape.param(store, self.weight);
        let mut y = tape.matmul(flat, w)?;
        if let Some(b) = self.bias {
            let b = tape.param(store, b);
            y = tape.add_broadcast(y, b)?;
        }
        if shape.len() == 2 {
            return Ok(y);
        }
        let mut out_shape = shape;
        *out_shape.last_mut().expect("non-empty") = self.out_features;
        Ok(tape.reshape(y, &out_shape)?)
    }
}

pub(crate) fn lookup(store: &ParamStore, name: &str) -> Result<ParamId> {
    store
        .id_of(name)
        .ok_or_else(|| crate::Error::Config(format!("checkpoint lacks parameter `{name}`")))
}

/// Scale and shift pair for layer or batch normalisation.
#[derive(Debug, Clone)]
pub struct NormParams {
    pub gamma: ParamId,
    pub beta: ParamId,
}

impl NormParams {
    pub fn new(store: &mut ParamStore, name: &str, features: usize) -> Result<Self> {
        Ok(Self {
            gamma: store.add(format!("{name}.gamma"), Tensor::full(&[features], 1.0))?,
            beta: store.add(format!("{name}.beta"), Tensor::zeros(&[features]))?,
        })
    }

    pub fn from_store(store: &ParamStore, name: &str) -> Result<Self> {
        Ok(Self {
            gamma: lookup(store, &format!("{name}.gamma"))?,
            beta: lookup(store, &format!("{name}.beta"))?,
        })
    }

    pub fn layer_norm(&self, tape: &mut Tape, store: &ParamStore, x: Var) -> Result<Var> {
        let g = tape.param(store, self.gamma);
        let b = tape.param(store, self.beta);
        Ok(tape.layer_norm(x, g, b)?)
    }
}

/// Multi-head self-attention with `n_heads` heads of width `head_dim`:
/// `Concat(head_1..head_H) W^O`, `head_i = softmax(Q_i K_i^T / sqrt(head_dim)) V_i`.
#[derive(Debug, Clone)]
pub struct MultiHeadAttention {
    pub q: Linear,
    pub k: Linear,
    pub v: Linear,
    pub o: Linear,
    pub n_heads: usize,
    pub head_dim: usize,
}

impl MultiHeadAttention {
    #[allow(clippy::too_many_arguments)]
    pub fn new<R: Rng + ?Sized>(
        store: &mut ParamStore,
        name: &str,
        d_model: usize,
        n_heads: usize,
        head_dim: usize,
        qkv_bias: bool,
        rng: &mut R,
    ) -> Result<Self> {
        let inner = n_heads * head_dim;
        Ok(Self {
            q: Linear::new(store, &format!("{name}.q"), d_model, inner, qkv_bias, rng)?,
            k: Linear::new(store, &format!("{name}.k"), d_model, inner, qkv_bias, rng)?,
            v: Linear::new(store, &format!("{name}.v"), d_model, inner, qkv_bias, rng)?,
            o: Linear::new(store, &format!("{name}.o"), inner, d_model, true, rng)?,
            n_heads,
            head_dim,
        })
    }

    pub fn from_store(store: &ParamStore, name: &str, n_heads: usize) -> Result<Self> {
        let q = Linear::from_store(store, &format!("{name}.q"))?;
        let head_dim = q.out_features / n_heads;
        Ok(Self {
            q,
            k: Linear::from_store(store, &format!("{name}.k"))?,
            v: Linear::from_store(store, &format!("{name}.v"))?,
            o: Linear::from_store(store, &format!("{name}.o"))?,
            n_heads,
            head_dim,
        })
    }

    pub fn num_params(d_model: usize, n_heads: usize, head_dim: usize, qkv_bias: bool) -> usize {
        let inner = n_heads * head_dim;
        3 * Linear::num_params(d_model, inner, qkv_bias) + Linear::num_params(inner, d_model, true)
    }

    fn split_heads(&self, tape: &mut Tape, x: Var, b: usize, t: usize) -> Result<Var> {
        let (h, dh) = (self.n_heads, self.head_dim);
        let x = tape.reshape(x, &[b, t, h, dh])?;
        let x = tape.permute(x, &[0, 2, 1, 3])?;
        Ok(tape.reshape(x, &[b * h, t, dh])?)
    }

    /// `x: [B, T, d]` to `([B, T, d], weights [B * H, T, T])`. Dropout with
    /// rate `p_attn` is applied to the attention weights in training mode.
    pub fn forward(
        &self,
        tape: &mut Tape,
        store: &ParamStore,
        x: Var,
        p_attn: f64,
        training: bool,
        rng: &mut dyn RngCore,
    ) -> Result<(Var, Var)> {
        let s = tape.shape(x).to_vec();
        let (b, t) = (s[0], s[1]);
        let (h, dh) = (self.n_heads, self.head_dim);
        let q = self.q.forward(tape, store, x)?;
        let k = self.k.forward(tape, store, x)?;
        let v = self.v.forward(tape, store, x)?;
        let q = self.split_heads(tape, q, b, t)?;
        let k = self.split_heads(tape, k, b, t)?;
        let v = self.split_heads(tape, v, b, t)?;
        let kt = tape.transpose(k)?;
        let scores = tape.bmm(q, kt)?;
        let scores = tape.scale(scores, 1.0 / (dh as f64).sqrt())?;
        let weights = tape.softmax(scores, 2)?;
        let dropped = tape.dropout(weights, p_attn, training, rng)?;
        let heads = tape.bmm(dropped, v)?;
        let heads = tape.reshape(heads, &[b, h, t, dh])?;
        let heads = tape.permute(heads, &[0, 2, 1, 3])?;
        let concat = tape.reshape(heads, &[b, t, h * dh])?;
        Ok((self.o.forward(tape, store, concat)?, weights))
    }
}
