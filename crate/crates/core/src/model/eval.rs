use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use super::decoder::{forward, Decoder};
use super::runtime::{BoundAudit, GsiRuntime, MapKind};
use super::weights::ModelWeights;
use crate::cascade::Stream;
use crate::error::{Error, Result};
use crate::gated::LayerStats;
use crate::linalg::DenseMatrix;

/// Index of the largest entry; ties go to the lowest index.
pub fn argmax(row: &[f64]) -> usize {
    let mut best = 0;
    for (i, v) in row.iter().enumerate().skip(1) {
        if *v > row[best] {
            best = i;
        }
    }
    best
}

fn log_softmax_at(row: &[f64], target: usize) -> f64 {
    let max = row.iter().copied().fold(f64::NEG_INFINITY, f64::max);
    let lse = max + row.iter().map(|v| (v - max).exp()).sum::<f64>().ln();
    row[target] - lse
}

/// `exp` of the mean next-token negative log-likelihood.
pub fn perplexity_from_logits(logits: &DenseMatrix, tokens: &[u32]) -> Result<f64> {
    if tokens.len() < 2 {
        return Err(Error::Empty("perplexity needs at least two tokens"));
    }
    if logits.rows() != tokens.len() {
        return Err(Error::DimensionMismatch {
            context: "logit rows vs. tokens",
            expected: tokens.len(),
            actual: logits.rows(),
        });
    }
    let n = tokens.len() - 1;
    let nll: f64 = (0..n)
        .map(|t| -log_softmax_at(logits.row(t), tokens[t + 1] as usize))
        .sum();
    Ok((nll / n as f64).exp())
}

pub fn perplexity(weights: &ModelWeights, runtime: &mut GsiRuntime, tokens: &[u32]) -> Result<f64> {
    perplexity_from_logits(&forward(weights, runtime, tokens)?, tokens)
}

/// Fraction of positions whose argmax tokens agree.
pub fn top1_agreement(a: &DenseMatrix, b: &DenseMatrix) -> Result<f64> {
    if a.shape() != b.shape() {
        return Err(Error::DimensionMismatch {
            context: "logit matrices for agreement",
            expected: a.rows() * a.cols(),
            actual: b.rows() * b.cols(),
        });
    }
    if a.rows() == 0 {
        return Err(Error::Empty("logit matrix"));
    }
    let same = (0..a.rows()).filter(|&t| argmax(a.row(t)) == argmax(b.row(t))).count();
    Ok(same as f64 / a.rows() as f64)
}

/// Feeds `prompt` and then `n` greedily chosen tokens; returns only the
/// generated tokens.
pub fn greedy_generate(weights: &ModelWeights, runtime: &mut GsiRuntime, prompt: &[u32], n: usize) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    let mut dec = Decoder::new(weights, runtime)?;
    let mut logits = Vec::new();
    for &t in prompt {
        logits = dec.step(t)?;
    }
    let mut out = Vec::with_capacity(n);
    for i in 0..n {
        let next = argmax(&logits) as u32;
        out.push(next);
        if i + 1 < n {
            logits = dec.step(next)?;
        }
    }
    Ok(out)
}

/// Ancestral sampling from the model: feeds `prompt`, then draws `n`
/// tokens from `softmax(logits / temperature)`. Returns prompt and sample.
pub fn sample_sequence(
    weights: &ModelWeights,
    prompt: &[u32],
    n: usize,
    temperature: f64,
    seed: u64,
) -> Result<Vec<u32>> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    if !(temperature > 0.0 && temperature.is_finite()) {
        return Err(Error::InvalidParameter(format!(
            "temperature must be positive, got {temperature}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let mut rt = GsiRuntime::baseline(weights.config.n_layers);
    let mut dec = Decoder::new(weights, &mut rt)?;
    let mut out = prompt.to_vec();
    let mut logits = Vec::new();
    for &t in prompt {
        logits = dec.step(t)?;
    }
    for i in 0..n {
        let max = logits.iter().copied().fold(f64::NEG_INFINITY, f64::max);
        let probs: Vec<f64> = logits.iter().map(|v| ((v - max) / temperature).exp()).collect();
        let total: f64 = probs.iter().sum();
        let mut u = rng.random::<f64>() * total;
        let mut next = probs.len() - 1;
        for (j, p) in probs.iter().enumerate() {
            if u < *p {
                next = j;
                break;
            }
            u -= p;
        }
        out.push(next as u32);
        if i + 1 < n {
            logits = dec.step(next as u32)?;
        }
    }
    Ok(out)
}

/// Fraction of positions at which two generations agree; differing lengths
/// count the tail as disagreement.
pub fn generation_agreement(a: &[u32], b: &[u32]) -> f64 {
    let n = a.len().max(b.len());
    if n == 0 {
        return 1.0;
    }
    a.iter().zip(b).filter(|(x, y)| x == y).count() as f64 / n as f64
}

/// Per-step DGKS acceptances during tracked generation.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct TrackingLog {
    /// `accepted[step]` counts inserts across all layers and streams.
    pub accepted: Vec<usize>,
}

impl TrackingLog {
    pub fn total(&self) -> usize {
        self.accepted.iter().sum()
    }
}

/// Greedy generation that, after every token, streams that token's map
/// inputs into the layer bases (rebuilding images on acceptance).
pub fn greedy_generate_tracked(
    weights: &ModelWeights,
    runtime: &mut GsiRuntime,
    prompt: &[u32],
    n: usize,
    eta: f64,
    k_max: usize,
) -> Result<(Vec<u32>, TrackingLog)> {
    if prompt.is_empty() {
        return Err(Error::Empty("prompt"));
    }
    let d = weights.config.d_model;
    let d_ff = weights.config.d_ff;
    let kh_max = (k_max * d_ff).div_ceil(d).min(d_ff);
    let mut dec = Decoder::new(weights, runtime)?;
    let mut log = TrackingLog::default();
    let mut out = Vec::with_capacity(n);
    let feed = |dec: &mut Decoder, t: u32, log: &mut TrackingLog| -> Result<Vec<f64>> {
        let (logits, caps) = dec.step_captured(t)?;
        let mut accepted = 0;
        for (l, c) in caps.iter().enumerate() {
            for x in [&c.attn_in, &c.mlp_in] {
                accepted += dec.runtime().absorb(weights, l, Stream::Model, x, eta, k_max)? as usize;
            }
            accepted += dec
                .runtime()
                .absorb(weights, l, Stream::Hidden, &c.hidden, eta, kh_max)? as usize;
        }
        log.accepted.push(accepted);
        Ok(logits)
    };
    let mut logits = Vec::new();
    for &t in prompt {
        logits = feed(&mut dec, t, &mut log)?;
    }
    for i in 0..n {
        let next = argmax(&logits) as u32;
        out.push(next);
        if i + 1 < n {
            logits = feed(&mut dec, next, &mut log)?;
        }
    }
    Ok((out, log))
}

/// Dense-model outputs that every gated configuration is compared against.
#[derive(Clone, Debug)]
pub struct Reference {
    pub logits: DenseMatrix,
    pub perplexity: f64,
    pub generation: Vec<u32>,
}

impl Reference {
    pub fn compute(weights: &ModelWeights, eval_tokens: &[u32], prompt: &[u32], gen_tokens: usize) -> Result<Self> {
        let mut rt = GsiRuntime::baseline(weights.config.n_layers);
        let logits = forward(weights, &mut rt, eval_tokens)?;
        let perplexity = perplexity_from_logits(&logits, eval_tokens)?;
        let generation = if gen_tokens > 0 {
            greedy_generate(weights, &mut rt, prompt, gen_tokens)?
        } else {
            Vec::new()
        };
        Ok(Self {
            logits,
            perplexity,
            generation,
        })
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvalReport {
    pub perplexity_baseline: f64,
    pub perplexity: f64,
    pub perplexity_ratio: f64,
    pub top1_agreement: f64,
    pub generation_agreement: f64,
    /// Per-layer fast-path fraction over the evaluation pass.
    pub layer_fast_fraction: Vec<f64>,
    pub fast_fraction: f64,
    pub mean_rho: f64,
    /// Weight elements a dense pass reads over those actually read.
    pub read_speedup: f64,
    pub audit: Option<BoundAudit>,
    pub stats: LayerStats,
    pub layer_stats: Vec<LayerStats>,
}

/// Evaluates `runtime` in its current mode against the dense reference.
/// Gate statistics cover the teacher-forced pass only.
pub fn evaluate(
    weights: &ModelWeights,
    runtime: &mut GsiRuntime,
    reference: &Reference,
    eval_tokens: &[u32],
    prompt: &[u32],
) -> Result<EvalReport> {
    runtime.reset_stats();
    let logits = forward(weights, runtime, eval_tokens)?;
    let perplexity = perplexity_from_logits(&logits, eval_tokens)?;
    let stats = runtime.total_stats();
    let layer_stats: Vec<LayerStats> = (0..runtime.n_layers()).map(|l| runtime.layer_stats(l)).collect();
    let layer_fast_fraction = layer_stats.iter().map(LayerStats::fast_fraction).collect();
    let audit = runtime.audit().cloned();
    let generation = if reference.generation.is_empty() {
        Vec::new()
    } else {
        greedy_generate(weights, runtime, prompt, reference.generation.len())?
    };
    Ok(EvalReport {
        perplexity_baseline: reference.perplexity,
        perplexity,
        perplexity_ratio: perplexity / reference.perplexity,
        top1_agreement: top1_agreement(&reference.logits, &logits)?,
        generation_agreement: generation_agreement(&reference.generation, &generation),
        layer_fast_fraction,
        fast_fraction: stats.fast_fraction(),
        mean_rho: stats.mean_rho(),
        read_speedup: stats.read_speedup(),
        audit,
        stats,
        layer_stats,
    })
}

/// Per-map stats of one layer, in [`MapKind::ALL`] order.
pub fn map_breakdown(runtime: &GsiRuntime, layer: usize) -> Vec<(MapKind, LayerStats)> {
    MapKind::ALL.iter().map(|&m| (m, runtime.map_stats(layer, m))).collect()
}
