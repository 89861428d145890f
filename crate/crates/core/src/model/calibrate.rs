use std::sync::OnceLock;

use serde::{Deserialize, Serialize};

use super::decoder::{forward_captured, LayerActivations};
use super::runtime::{GsiRuntime, LayerBases};
use super::weights::ModelWeights;
use crate::cascade::{inherit_and_correct, rayleigh_ritz, CascadeTrace, LayerOrigin, Stream, TraceEntry};
use crate::error::{Error, Result};
use crate::linalg::DenseMatrix;
use crate::subspace::SubspaceBasis;
use crate::svd::{effective_rank, thin_svd, SingularSpectrum, ThinSvd};

/// Which layer-norm outputs define a layer's shared basis.
#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum BasisSource {
    /// Attention and MLP layer-norm outputs stacked (`2T × d`).
    #[default]
    Stacked,
    /// Attention layer-norm outputs only (`T × d`).
    AttentionInput,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CalibrationOptions {
    /// Working rank of the shared width-`d` basis.
    pub k: usize,
    /// Inherit each layer's basis from the one below instead of running a
    /// full SVD per layer.
    pub cascade: bool,
    /// DGKS acceptance threshold for cascade growth.
    pub eta: f64,
    /// Cascade growth cap before truncation; defaults to `min(2k, d)`.
    pub k_max: Option<usize>,
    pub source: BasisSource,
}

impl CalibrationOptions {
    pub fn new(k: usize) -> Self {
        Self {
            k,
            cascade: false,
            eta: DEFAULT_ETA,
            k_max: None,
            source: BasisSource::Stacked,
        }
    }
}

pub const DEFAULT_ETA: f64 = 0.25;

/// Rank of the hidden-stream basis paired with a width-`d` rank `k`:
/// the same fraction of `d_ff`, capped by the number of calibration rows.
pub fn hidden_rank(k: usize, d: usize, d_ff: usize, rows: usize) -> usize {
    (k * d_ff).div_ceil(d).min(d_ff).min(rows).max(1)
}

/// Captured calibration activations, with lazily computed per-layer SVDs
/// reused across ranks.
#[derive(Debug)]
pub struct CalibrationData {
    tokens: usize,
    d_model: usize,
    d_ff: usize,
    model_rows: Vec<DenseMatrix>,
    hidden_rows: Vec<DenseMatrix>,
    model_svd: Vec<OnceLock<ThinSvd>>,
    hidden_svd: Vec<OnceLock<ThinSvd>>,
}

/// A calibrated runtime plus how its bases were obtained.
#[derive(Clone, Debug)]
pub struct Calibration {
    pub runtime: GsiRuntime,
    pub trace: CascadeTrace,
    pub k: usize,
    pub hidden_k: usize,
}

impl CalibrationData {
    /// Runs the dense model over `tokens` and keeps every gated-map input.
    /// Streams longer than the context window are split into independent
    /// windows of `max_seq` tokens.
    pub fn capture(weights: &ModelWeights, tokens: &[u32], source: BasisSource) -> Result<Self> {
        if tokens.is_empty() {
            return Err(Error::Empty("calibration tokens"));
        }
        let mut rt = GsiRuntime::baseline(weights.config.n_layers);
        let mut acts: Vec<LayerActivations> = Vec::new();
        for window in tokens.chunks(weights.config.max_seq) {
            let (_, chunk) = forward_captured(weights, &mut rt, window)?;
            if acts.is_empty() {
                acts = chunk;
            } else {
                for (a, c) in acts.iter_mut().zip(chunk) {
                    a.append(&c);
                }
            }
        }
        Ok(Self::from_activations(
            &acts,
            source,
            weights.config.d_model,
            weights.config.d_ff,
        ))
    }

    pub fn from_activations(acts: &[LayerActivations], source: BasisSource, d_model: usize, d_ff: usize) -> Self {
        let model_rows: Vec<DenseMatrix> = acts
            .iter()
            .map(|a| match source {
                BasisSource::Stacked => {
                    let mut data = a.attn_in.data().to_vec();
                    data.extend_from_slice(a.mlp_in.data());
                    DenseMatrix::from_raw(a.attn_in.rows() + a.mlp_in.rows(), d_model, data)
                }
                BasisSource::AttentionInput => a.attn_in.clone(),
            })
            .collect();
        let hidden_rows: Vec<DenseMatrix> = acts.iter().map(|a| a.hidden.clone()).collect();
        let n = acts.len();
        Self {
            tokens: acts.first().map_or(0, |a| a.attn_in.rows()),
            d_model,
            d_ff,
            model_rows,
            hidden_rows,
            model_svd: (0..n).map(|_| OnceLock::new()).collect(),
            hidden_svd: (0..n).map(|_| OnceLock::new()).collect(),
        }
    }

    pub fn tokens(&self) -> usize {
        self.tokens
    }

    pub fn n_layers(&self) -> usize {
        self.model_rows.len()
    }

    pub fn rows(&self, layer: usize, stream: Stream) -> &DenseMatrix {
        match stream {
            Stream::Model => &self.model_rows[layer],
            Stream::Hidden => &self.hidden_rows[layer],
        }
    }

    pub fn svd(&self, layer: usize, stream: Stream) -> Result<&ThinSvd> {
        let cell = match stream {
            Stream::Model => &self.model_svd[layer],
            Stream::Hidden => &self.hidden_svd[layer],
        };
        if let Some(s) = cell.get() {
            return Ok(s);
        }
        let s = thin_svd(self.rows(layer, stream))?;
        Ok(cell.get_or_init(|| s))
    }

    pub fn spectrum(&self, layer: usize, stream: Stream) -> Result<SingularSpectrum> {
        Ok(self.svd(layer, stream)?.s.clone())
    }

    /// `exp` of the entropy of the normalised singular values, per layer.
    pub fn effective_ranks(&self, stream: Stream) -> Result<Vec<f64>> {
        (0..self.n_layers())
            .map(|l| effective_rank(&self.spectrum(l, stream)?))
            .collect()
    }

    pub fn hidden_rank(&self, k: usize) -> usize {
        hidden_rank(k, self.d_model, self.d_ff, self.tokens)
    }

    /// Builds per-layer bases and images at the requested rank.
    pub fn calibrate(&self, weights: &ModelWeights, opts: &CalibrationOptions) -> Result<Calibration> {
        let k = opts.k;
        let max = self.tokens.min(self.d_model);
        if k == 0 || k > max {
            return Err(Error::RankOutOfRange {
                k,
                max,
                context: "basis rank vs. calibration tokens and model width",
            });
        }
        if opts.cascade && !(opts.eta > 0.0 && opts.eta < 1.0) {
            return Err(Error::InvalidParameter(format!(
                "eta must lie in (0, 1), got {}",
                opts.eta
            )));
        }
        let kh = self.hidden_rank(k);
        let k_max = opts.k_max.unwrap_or(2 * k).clamp(k, self.d_model);
        let kh_max = (kh * k_max).div_ceil(k).clamp(kh, self.d_ff);

        let mut trace = CascadeTrace::default();
        let mut bases: Vec<LayerBases> = Vec::with_capacity(self.n_layers());
        for l in 0..self.n_layers() {
            let model = self.layer_basis(
                l,
                Stream::Model,
                k,
                k_max,
                opts,
                bases.last().map(|b| &b.model),
                &mut trace,
            )?;
            let hidden = self.layer_basis(
                l,
                Stream::Hidden,
                kh,
                kh_max,
                opts,
                bases.last().map(|b| &b.hidden),
                &mut trace,
            )?;
            bases.push(LayerBases { model, hidden });
        }
        let runtime = GsiRuntime::from_bases(weights, bases)?;
        Ok(Calibration {
            runtime,
            trace,
            k,
            hidden_k: kh,
        })
    }

    #[allow(clippy::too_many_arguments)]
    fn layer_basis(
        &self,
        layer: usize,
        stream: Stream,
        k: usize,
        k_max: usize,
        opts: &CalibrationOptions,
        prev: Option<&SubspaceBasis>,
        trace: &mut CascadeTrace,
    ) -> Result<SubspaceBasis> {
        match prev {
            Some(prev) if opts.cascade => {
                let rows = self.rows(layer, stream);
                let (grown, outcome) = inherit_and_correct(prev, rows, opts.eta, k_max)?;
                let basis = rayleigh_ritz(&grown, rows, k)?;
                trace.entries.push(TraceEntry {
                    layer,
                    stream,
                    origin: LayerOrigin::Inherited,
                    acceptances: outcome.acceptances,
                    grown_rank: grown.rank(),
                    final_rank: basis.rank(),
                    exhausted: outcome.exhausted,
                });
                Ok(basis)
            }
            _ => {
                let basis = SubspaceBasis::from_svd(self.svd(layer, stream)?, k)?;
                trace.entries.push(TraceEntry {
                    layer,
                    stream,
                    origin: LayerOrigin::FullSvd,
                    acceptances: 0,
                    grown_rank: k,
                    final_rank: k,
                    exhausted: false,
                });
                Ok(basis)
            }
        }
    }
}

/// Captures calibration activations and builds a runtime in one call.
pub fn calibrate(weights: &ModelWeights, tokens: &[u32], opts: &CalibrationOptions) -> Result<Calibration> {
    CalibrationData::capture(weights, tokens, opts.source)?.calibrate(weights, opts)
}
