use serde::{Deserialize, Serialize};

use super::weights::{LayerWeights, ModelWeights};
use crate::cascade::Stream;
use crate::error::{Error, Result};
use crate::gated::{cache_image, gated_forward, spectral_norm, CachedImage, ExecutionMode, GateRecord, LayerStats};
use crate::linalg::{norm, sub, DenseMatrix};
use crate::subspace::SubspaceBasis;

/// The four gated linear maps of a layer.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum MapKind {
    Qkv,
    Out,
    Up,
    Down,
}

impl MapKind {
    pub const ALL: [MapKind; 4] = [MapKind::Qkv, MapKind::Out, MapKind::Up, MapKind::Down];

    pub fn index(self) -> usize {
        self as usize
    }

    pub fn name(self) -> &'static str {
        match self {
            Self::Qkv => "qkv",
            Self::Out => "out_proj",
            Self::Up => "mlp_up",
            Self::Down => "mlp_down",
        }
    }

    /// Which layer basis gates this map.
    pub fn stream(self) -> Stream {
        match self {
            Self::Down => Stream::Hidden,
            _ => Stream::Model,
        }
    }

    pub fn weight(self, w: &LayerWeights) -> &DenseMatrix {
        match self {
            Self::Qkv => &w.qkv,
            Self::Out => &w.out_proj,
            Self::Up => &w.mlp_up,
            Self::Down => &w.mlp_down,
        }
    }

    pub fn weight_id(self, layer: usize) -> String {
        format!("layers.{layer}.{}", self.name())
    }
}

/// A layer's bases: one shared by every width-`d` map, one for the
/// width-`d_ff` down projection.
#[derive(Clone, Debug, PartialEq)]
pub struct LayerBases {
    pub model: SubspaceBasis,
    pub hidden: SubspaceBasis,
}

impl LayerBases {
    pub fn get(&self, stream: Stream) -> &SubspaceBasis {
        match stream {
            Stream::Model => &self.model,
            Stream::Hidden => &self.hidden,
        }
    }

    fn get_mut(&mut self, stream: Stream) -> &mut SubspaceBasis {
        match stream {
            Stream::Model => &mut self.model,
            Stream::Hidden => &mut self.hidden,
        }
    }
}

#[derive(Clone, Debug)]
struct LayerState {
    bases: LayerBases,
    images: [CachedImage; 4],
}

/// Fast-path error checks against `‖W‖₂·ε·‖x‖`.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct BoundAudit {
    pub checks: u64,
    pub violations: u64,
    /// Largest observed `‖y − Wx‖ / (‖W‖₂·ε·‖x‖)`.
    pub worst_ratio: f64,
}

#[derive(Clone, Debug)]
struct Auditor {
    norms: Vec<[f64; 4]>,
    audit: BoundAudit,
}

/// Slack on the error bound, covering the power-iteration estimate of `‖W‖₂`
/// and floating-point error in `y` and `Wx`.
pub const BOUND_SLACK: f64 = 1e-6;

/// Per-model inference state: calibrated bases and images, the execution
/// mode, and gate accumulators.
#[derive(Clone, Debug)]
pub struct GsiRuntime {
    mode: ExecutionMode,
    n_layers: usize,
    layers: Vec<LayerState>,
    records: Vec<[Vec<GateRecord>; 4]>,
    auditor: Option<Auditor>,
}

impl GsiRuntime {
    /// Dense execution with no bases at all.
    pub fn baseline(n_layers: usize) -> Self {
        Self {
            mode: ExecutionMode::Baseline,
            n_layers,
            layers: Vec::new(),
            records: vec![Default::default(); n_layers],
            auditor: None,
        }
    }

    /// Builds every cached image from the given bases. Starts in baseline mode.
    pub fn from_bases(weights: &ModelWeights, bases: Vec<LayerBases>) -> Result<Self> {
        let n_layers = weights.layers.len();
        if bases.len() != n_layers {
            return Err(Error::DimensionMismatch {
                context: "bases per layer",
                expected: n_layers,
                actual: bases.len(),
            });
        }
        let layers = bases
            .into_iter()
            .enumerate()
            .map(|(l, b)| {
                let images = build_images(l, &weights.layers[l], &b)?;
                Ok(LayerState { bases: b, images })
            })
            .collect::<Result<_>>()?;
        Ok(Self {
            mode: ExecutionMode::Baseline,
            n_layers,
            layers,
            records: vec![Default::default(); n_layers],
            auditor: None,
        })
    }

    /// Reattaches previously computed images, checking each against its basis.
    pub fn from_parts(weights: &ModelWeights, parts: Vec<(LayerBases, [CachedImage; 4])>) -> Result<Self> {
        let n_layers = weights.layers.len();
        if parts.len() != n_layers {
            return Err(Error::DimensionMismatch {
                context: "stored layers",
                expected: n_layers,
                actual: parts.len(),
            });
        }
        let mut layers = Vec::with_capacity(n_layers);
        for (l, (bases, images)) in parts.into_iter().enumerate() {
            for map in MapKind::ALL {
                let img = &images[map.index()];
                let basis = bases.get(map.stream());
                if img.basis_fingerprint() != basis.fingerprint() {
                    return Err(Error::StaleImage {
                        weight_id: map.weight_id(l),
                        cached: img.basis_fingerprint().to_owned(),
                        current: basis.fingerprint().to_owned(),
                    });
                }
                let w = map.weight(&weights.layers[l]);
                if img.matrix().shape() != (w.rows(), basis.rank()) {
                    return Err(Error::DimensionMismatch {
                        context: "stored image shape",
                        expected: w.rows() * basis.rank(),
                        actual: img.matrix().rows() * img.matrix().cols(),
                    });
                }
            }
            layers.push(LayerState { bases, images });
        }
        Ok(Self {
            mode: ExecutionMode::Baseline,
            n_layers,
            layers,
            records: vec![Default::default(); n_layers],
            auditor: None,
        })
    }

    pub fn mode(&self) -> ExecutionMode {
        self.mode
    }

    pub fn set_mode(&mut self, mode: ExecutionMode) {
        self.mode = mode;
    }

    pub fn with_mode(mut self, mode: ExecutionMode) -> Self {
        self.mode = mode;
        self
    }

    pub fn n_layers(&self) -> usize {
        self.n_layers
    }

    pub fn has_bases(&self) -> bool {
        !self.layers.is_empty()
    }

    pub fn bases(&self, layer: usize) -> Option<&LayerBases> {
        self.layers.get(layer).map(|s| &s.bases)
    }

    pub fn image(&self, layer: usize, map: MapKind) -> Option<&CachedImage> {
        self.layers.get(layer).map(|s| &s.images[map.index()])
    }

    /// Fast-path reads of any cached image since construction.
    pub fn image_reads(&self) -> u64 {
        self.layers
            .iter()
            .flat_map(|s| s.images.iter())
            .map(CachedImage::reads)
            .sum()
    }

    /// Turns on per-token error-bound auditing; computes `‖W‖₂` per map.
    pub fn enable_audit(&mut self, weights: &ModelWeights) {
        let norms = weights
            .layers
            .iter()
            .map(|lw| MapKind::ALL.map(|m| spectral_norm(m.weight(lw), 1e-13)))
            .collect();
        self.auditor = Some(Auditor {
            norms,
            audit: BoundAudit::default(),
        });
    }

    pub fn audit(&self) -> Option<&BoundAudit> {
        self.auditor.as_ref().map(|a| &a.audit)
    }

    pub fn reset_stats(&mut self) {
        self.records.iter_mut().for_each(|r| r.iter_mut().for_each(Vec::clear));
        if let Some(a) = &mut self.auditor {
            a.audit = BoundAudit::default();
        }
    }

    pub fn records(&self, layer: usize, map: MapKind) -> &[GateRecord] {
        &self.records[layer][map.index()]
    }

    pub fn map_stats(&self, layer: usize, map: MapKind) -> LayerStats {
        let mut s = LayerStats::default();
        self.records(layer, map).iter().for_each(|r| s.push(r));
        s
    }

    pub fn layer_stats(&self, layer: usize) -> LayerStats {
        let mut s = LayerStats::default();
        for map in MapKind::ALL {
            s.merge(&self.map_stats(layer, map));
        }
        s
    }

    pub fn total_stats(&self) -> LayerStats {
        let mut s = LayerStats::default();
        for l in 0..self.n_layers {
            s.merge(&self.layer_stats(l));
        }
        s
    }

    pub fn fast_fractions(&self) -> Vec<f64> {
        (0..self.n_layers)
            .map(|l| self.layer_stats(l).fast_fraction())
            .collect()
    }

    /// Applies one map of one layer to one token under the current mode.
    pub fn apply(&mut self, layer: usize, map: MapKind, w: &DenseMatrix, x: &[f64]) -> Result<Vec<f64>> {
        let Some(state) = self.layers.get(layer) else {
            if self.mode == ExecutionMode::Baseline {
                return w.matvec(x);
            }
            return Err(Error::MissingBasis { layer });
        };
        let basis = state.bases.get(map.stream());
        let out = gated_forward(x, w, &state.images[map.index()], basis, self.mode)?;
        if let (Some(aud), true) = (&mut self.auditor, out.record.path.is_fast()) {
            let wx = w.matvec(x)?;
            let err = norm(&sub(&out.y, &wx));
            let xn = norm(x);
            let w_norm = aud.norms[layer][map.index()];
            // static projection has no threshold; its bound uses the token's own rho
            let eps = out.record.threshold.unwrap_or(out.record.rho);
            let bound = w_norm * eps * xn;
            aud.audit.checks += 1;
            if err > bound * (1.0 + BOUND_SLACK) {
                aud.audit.violations += 1;
            }
            if bound > 0.0 {
                aud.audit.worst_ratio = aud.audit.worst_ratio.max(err / bound);
            }
        }
        self.records[layer][map.index()].push(out.record);
        Ok(out.y)
    }

    /// DGKS-inserts `x` into one layer basis; on acceptance every image that
    /// depends on it is rebuilt.
    pub fn absorb(
        &mut self,
        weights: &ModelWeights,
        layer: usize,
        stream: Stream,
        x: &[f64],
        eta: f64,
        k_max: usize,
    ) -> Result<bool> {
        let state = self.layers.get_mut(layer).ok_or(Error::MissingBasis { layer })?;
        let basis = state.bases.get_mut(stream);
        if basis.rank() >= k_max || !basis.insert_dgks(x, eta)? {
            return Ok(false);
        }
        let lw = &weights.layers[layer];
        for map in MapKind::ALL.into_iter().filter(|m| m.stream() == stream) {
            state.images[map.index()] = cache_image(map.weight_id(layer), map.weight(lw), state.bases.get(stream))?;
        }
        Ok(true)
    }

    /// Direct mutable access to a basis without refreshing images. Any
    /// subsequent non-baseline call on the affected maps fails as stale.
    pub fn basis_mut_unrefreshed(&mut self, layer: usize, stream: Stream) -> Option<&mut SubspaceBasis> {
        self.layers.get_mut(layer).map(|s| s.bases.get_mut(stream))
    }
}

fn build_images(layer: usize, lw: &LayerWeights, bases: &LayerBases) -> Result<[CachedImage; 4]> {
    let img = |m: MapKind| cache_image(m.weight_id(layer), m.weight(lw), bases.get(m.stream()));
    Ok([
        img(MapKind::Qkv)?,
        img(MapKind::Out)?,
        img(MapKind::Up)?,
        img(MapKind::Down)?,
    ])
}
