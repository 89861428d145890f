//! Pre-norm decoder forward pass with a KV cache.

use super::runtime::{GsiRuntime, MapKind};
use super::weights::ModelWeights;
use crate::error::{Error, Result};
use crate::linalg::{axpy, dot, DenseMatrix};

pub const LN_EPS: f64 = 1e-5;

pub fn layer_norm(x: &[f64], gain: &[f64], bias: &[f64]) -> Vec<f64> {
    let n = x.len() as f64;
    let mean = x.iter().sum::<f64>() / n;
    let var = x.iter().map(|v| (v - mean) * (v - mean)).sum::<f64>() / n;
    let inv = 1.0 / (var + LN_EPS).sqrt();
    x.iter()
        .zip(gain)
        .zip(bias)
        .map(|((v, g), b)| (v - mean) * inv * g + b)
        .collect()
}

/// tanh approximation.
#[inline]
pub fn gelu(x: f64) -> f64 {
    const C: f64 = 0.797_884_560_802_865_4; // sqrt(2/pi)
    0.5 * x * (1.0 + (C * (x + 0.044715 * x * x * x)).tanh())
}

/// Inputs to each gated map at one layer for one token.
#[derive(Clone, Debug, Default)]
pub struct LayerCapture {
    /// Layer-norm output feeding the QKV projection.
    pub attn_in: Vec<f64>,
    /// Attention output feeding the output projection.
    pub attn_out: Vec<f64>,
    /// Layer-norm output feeding the MLP up-projection.
    pub mlp_in: Vec<f64>,
    /// GELU activations feeding the down projection.
    pub hidden: Vec<f64>,
}

/// Incremental decoder: one token per [`Decoder::step`], attending over
/// everything fed so far.
pub struct Decoder<'a> {
    weights: &'a ModelWeights,
    runtime: &'a mut GsiRuntime,
    keys: Vec<Vec<Vec<f64>>>,
    values: Vec<Vec<Vec<f64>>>,
    position: usize,
}

impl<'a> Decoder<'a> {
    pub fn new(weights: &'a ModelWeights, runtime: &'a mut GsiRuntime) -> Result<Self> {
        let n = weights.config.n_layers;
        if runtime.n_layers() != n {
            return Err(Error::DimensionMismatch {
                context: "runtime layers vs. model layers",
                expected: n,
                actual: runtime.n_layers(),
            });
        }
        Ok(Self {
            weights,
            runtime,
            keys: vec![Vec::new(); n],
            values: vec![Vec::new(); n],
            position: 0,
        })
    }

    pub fn position(&self) -> usize {
        self.position
    }

    pub fn runtime(&mut self) -> &mut GsiRuntime {
        self.runtime
    }

    /// Feeds one token and returns its next-token logits.
    pub fn step(&mut self, token: u32) -> Result<Vec<f64>> {
        self.step_inner(token, None)
    }

    /// As [`Decoder::step`], also returning every map input per layer.
    pub fn step_captured(&mut self, token: u32) -> Result<(Vec<f64>, Vec<LayerCapture>)> {
        let mut capture = Vec::with_capacity(self.weights.config.n_layers);
        let logits = self.step_inner(token, Some(&mut capture))?;
        Ok((logits, capture))
    }

    fn step_inner(&mut self, token: u32, mut capture: Option<&mut Vec<LayerCapture>>) -> Result<Vec<f64>> {
        let w = self.weights;
        let cfg = &w.config;
        if self.position >= cfg.max_seq {
            return Err(Error::ContextOverflow {
                requested: self.position + 1,
                max_seq: cfg.max_seq,
            });
        }
        if token as usize >= cfg.vocab {
            return Err(Error::TokenOutOfRange {
                token,
                position: self.position,
                vocab: cfg.vocab,
            });
        }
        let d = cfg.d_model;
        let mut h = w.token_embedding.row(token as usize).to_vec();
        if let Some(pos) = &w.position_embedding {
            for (hv, pv) in h.iter_mut().zip(pos.row(self.position)) {
                *hv += pv;
            }
        }

        for (l, lw) in w.layers.iter().enumerate() {
            let a = layer_norm(&h, &lw.ln1_gain, &lw.ln1_bias);
            let qkv = self.runtime.apply(l, MapKind::Qkv, &lw.qkv, &a)?;
            self.keys[l].push(qkv[d..2 * d].to_vec());
            self.values[l].push(qkv[2 * d..].to_vec());
            let attn = attend(&qkv[..d], &self.keys[l], &self.values[l], cfg.n_heads);
            let o = self.runtime.apply(l, MapKind::Out, &lw.out_proj, &attn)?;
            for (hv, ov) in h.iter_mut().zip(&o) {
                *hv += ov;
            }

            let b = layer_norm(&h, &lw.ln2_gain, &lw.ln2_bias);
            let up = self.runtime.apply(l, MapKind::Up, &lw.mlp_up, &b)?;
            let hidden: Vec<f64> = up.iter().map(|&u| gelu(u)).collect();
            let down = self.runtime.apply(l, MapKind::Down, &lw.mlp_down, &hidden)?;
            for (hv, dv) in h.iter_mut().zip(&down) {
                *hv += dv;
            }

            if let Some(c) = capture.as_deref_mut() {
                c.push(LayerCapture {
                    attn_in: a,
                    attn_out: attn,
                    mlp_in: b,
                    hidden,
                });
            }
        }
        self.position += 1;
        let f = layer_norm(&h, &w.final_gain, &w.final_bias);
        w.lm_head.matvec(&f)
    }
}

/// Causal multi-head attention for the newest query over all cached keys.
fn attend(q: &[f64], keys: &[Vec<f64>], values: &[Vec<f64>], n_heads: usize) -> Vec<f64> {
    let d = q.len();
    let hd = d / n_heads;
    let scale = 1.0 / (hd as f64).sqrt();
    let mut out = vec![0.0; d];
    let mut scores = Vec::with_capacity(keys.len());
    for head in 0..n_heads {
        let r = head * hd..(head + 1) * hd;
        scores.clear();
        scores.extend(keys.iter().map(|k| dot(&q[r.clone()], &k[r.clone()]) * scale));
        let max = scores.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let mut sum = 0.0;
        for s in scores.iter_mut() {
            *s = (*s - max).exp();
            sum += *s;
        }
        for (s, v) in scores.iter().zip(values) {
            axpy(s / sum, &v[r.clone()], &mut out[r.clone()]);
        }
    }
    out
}

/// Logits for every position of `tokens` (row `t` predicts token `t + 1`).
pub fn forward(weights: &ModelWeights, runtime: &mut GsiRuntime, tokens: &[u32]) -> Result<DenseMatrix> {
    check_length(weights, tokens.len())?;
    let mut dec = Decoder::new(weights, runtime)?;
    let mut data = Vec::with_capacity(tokens.len() * weights.config.vocab);
    for &t in tokens {
        data.extend(dec.step(t)?);
    }
    Ok(DenseMatrix::from_raw(tokens.len(), weights.config.vocab, data))
}

/// Per-layer activation rows captured during a forward pass.
#[derive(Clone, Debug)]
pub struct LayerActivations {
    pub attn_in: DenseMatrix,
    pub attn_out: DenseMatrix,
    pub mlp_in: DenseMatrix,
    pub hidden: DenseMatrix,
}

impl LayerActivations {
    /// Stacks `other`'s rows below these.
    pub fn append(&mut self, other: &LayerActivations) {
        let cat = |a: &DenseMatrix, b: &DenseMatrix| {
            let mut data = a.data().to_vec();
            data.extend_from_slice(b.data());
            DenseMatrix::from_raw(a.rows() + b.rows(), a.cols(), data)
        };
        self.attn_in = cat(&self.attn_in, &other.attn_in);
        self.attn_out = cat(&self.attn_out, &other.attn_out);
        self.mlp_in = cat(&self.mlp_in, &other.mlp_in);
        self.hidden = cat(&self.hidden, &other.hidden);
    }
}

/// Forward pass that also records the input of every gated map.
pub fn forward_captured(
    weights: &ModelWeights,
    runtime: &mut GsiRuntime,
    tokens: &[u32],
) -> Result<(DenseMatrix, Vec<LayerActivations>)> {
    check_length(weights, tokens.len())?;
    let n_layers = weights.config.n_layers;
    let mut per_layer: Vec<Vec<LayerCapture>> = vec![Vec::with_capacity(tokens.len()); n_layers];
    let mut dec = Decoder::new(weights, runtime)?;
    let mut data = Vec::with_capacity(tokens.len() * weights.config.vocab);
    for &t in tokens {
        let (logits, caps) = dec.step_captured(t)?;
        data.extend(logits);
        for (l, c) in caps.into_iter().enumerate() {
            per_layer[l].push(c);
        }
    }
    let stack = |rows: Vec<&Vec<f64>>| {
        let cols = rows.first().map_or(0, |r| r.len());
        DenseMatrix::from_raw(rows.len(), cols, rows.into_iter().flatten().copied().collect())
    };
    let acts = per_layer
        .iter()
        .map(|caps| LayerActivations {
            attn_in: stack(caps.iter().map(|c| &c.attn_in).collect()),
            attn_out: stack(caps.iter().map(|c| &c.attn_out).collect()),
            mlp_in: stack(caps.iter().map(|c| &c.mlp_in).collect()),
            hidden: stack(caps.iter().map(|c| &c.hidden).collect()),
        })
        .collect();
    Ok((DenseMatrix::from_raw(tokens.len(), weights.config.vocab, data), acts))
}

fn check_length(weights: &ModelWeights, len: usize) -> Result<()> {
    if len == 0 {
        return Err(Error::Empty("token sequence"));
    }
    if len > weights.config.max_seq {
        return Err(Error::ContextOverflow {
            requested: len,
            max_seq: weights.config.max_seq,
        });
    }
    Ok(())
}
