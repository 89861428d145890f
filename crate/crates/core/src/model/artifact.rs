//! Calibrated bases and images on disk.

use std::path::Path;

use serde::{Deserialize, Serialize};

use super::runtime::{GsiRuntime, LayerBases, MapKind};
use super::weights::ModelWeights;
use crate::cascade::{CascadeTrace, Stream};
use crate::container::TensorContainer;
use crate::error::{ContainerError, Error, Result};
use crate::gated::{cache_image, CachedImage};
use crate::subspace::{BasisOrigin, SubspaceBasis};

const KIND: &str = "gsi_runtime";

/// Relative tolerance for a stored image against a recomputed `W·V`.
const IMAGE_TOL: f64 = 1e-9;

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
struct BasisMeta {
    rank: usize,
    origin: BasisOrigin,
    fingerprint: String,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
struct ArtifactMeta {
    kind: String,
    k: usize,
    hidden_k: usize,
    n_layers: usize,
    bases: Vec<[BasisMeta; 2]>,
    trace: CascadeTrace,
}

fn basis_name(layer: usize, stream: Stream) -> String {
    match stream {
        Stream::Model => format!("layers.{layer}.basis.model"),
        Stream::Hidden => format!("layers.{layer}.basis.hidden"),
    }
}

fn image_name(layer: usize, map: MapKind) -> String {
    format!("layers.{layer}.image.{}", map.name())
}

/// A calibrated runtime as stored on disk.
#[derive(Clone, Debug)]
pub struct RuntimeArtifact {
    pub runtime: GsiRuntime,
    pub k: usize,
    pub hidden_k: usize,
    pub trace: CascadeTrace,
}

impl RuntimeArtifact {
    pub fn to_container(&self) -> Result<TensorContainer> {
        let rt = &self.runtime;
        let mut c = TensorContainer::new();
        let mut metas = Vec::with_capacity(rt.n_layers());
        for l in 0..rt.n_layers() {
            let b = rt.bases(l).ok_or(Error::MissingBasis { layer: l })?;
            let meta = |s: Stream| {
                let basis = b.get(s);
                BasisMeta {
                    rank: basis.rank(),
                    origin: basis.origin(),
                    fingerprint: basis.fingerprint().to_owned(),
                }
            };
            metas.push([meta(Stream::Model), meta(Stream::Hidden)]);
            for s in [Stream::Model, Stream::Hidden] {
                c.insert_matrix(basis_name(l, s), &b.get(s).matrix())?;
            }
            for m in MapKind::ALL {
                let img = rt.image(l, m).ok_or(Error::MissingBasis { layer: l })?;
                c.insert_matrix(image_name(l, m), img.matrix())?;
            }
        }
        c.metadata = serde_json::to_value(ArtifactMeta {
            kind: KIND.into(),
            k: self.k,
            hidden_k: self.hidden_k,
            n_layers: rt.n_layers(),
            bases: metas,
            trace: self.trace.clone(),
        })
        .map_err(|e| ContainerError::Manifest(e.to_string()))?;
        Ok(c)
    }

    /// Rebuilds a runtime, rejecting artifacts whose bases, fingerprints or
    /// images do not match each other or `weights`.
    pub fn from_container(c: &TensorContainer, weights: &ModelWeights) -> Result<Self> {
        let meta: ArtifactMeta = serde_json::from_value(c.metadata.clone())
            .map_err(|e| ContainerError::Manifest(format!("runtime metadata: {e}")))?;
        if meta.kind != KIND {
            return Err(ContainerError::Manifest(format!("expected kind `{KIND}`, found `{}`", meta.kind)).into());
        }
        let cfg = &weights.config;
        if meta.n_layers != cfg.n_layers || meta.bases.len() != cfg.n_layers {
            return Err(Error::DimensionMismatch {
                context: "artifact layers vs. model layers",
                expected: cfg.n_layers,
                actual: meta.n_layers,
            });
        }
        let names: Vec<String> = (0..cfg.n_layers)
            .flat_map(|l| {
                [basis_name(l, Stream::Model), basis_name(l, Stream::Hidden)]
                    .into_iter()
                    .chain(MapKind::ALL.map(|m| image_name(l, m)))
            })
            .collect();
        c.expect_names(names.iter().map(String::as_str))?;

        let mut parts = Vec::with_capacity(cfg.n_layers);
        for (l, bm) in meta.bases.iter().enumerate() {
            let load = |s: Stream, m: &BasisMeta| -> Result<SubspaceBasis> {
                let dim = match s {
                    Stream::Model => cfg.d_model,
                    Stream::Hidden => cfg.d_ff,
                };
                let mat = c.matrix(&basis_name(l, s), Some((dim, m.rank)))?;
                let basis = SubspaceBasis::from_matrix(&mat, m.origin)?;
                if basis.fingerprint() != m.fingerprint {
                    return Err(Error::StaleImage {
                        weight_id: basis_name(l, s),
                        cached: m.fingerprint.clone(),
                        current: basis.fingerprint().to_owned(),
                    });
                }
                Ok(basis)
            };
            let bases = LayerBases {
                model: load(Stream::Model, &bm[0])?,
                hidden: load(Stream::Hidden, &bm[1])?,
            };
            let lw = &weights.layers[l];
            let images = MapKind::ALL.map(|m| -> Result<CachedImage> {
                let basis = bases.get(m.stream());
                let w = m.weight(lw);
                let stored = c.matrix(&image_name(l, m), Some((w.rows(), basis.rank())))?;
                let fresh = cache_image(m.weight_id(l), w, basis)?;
                let scale = fresh.matrix().frobenius_norm().max(f64::MIN_POSITIVE);
                if stored.max_abs_diff(fresh.matrix()) > IMAGE_TOL * scale {
                    return Err(Error::StaleImage {
                        weight_id: m.weight_id(l),
                        cached: "stored image".into(),
                        current: "W·V recomputed from the given weights".into(),
                    });
                }
                Ok(CachedImage::from_parts(stored, m.weight_id(l), basis.fingerprint()))
            });
            let [a, b, cc, d] = images;
            parts.push((bases, [a?, b?, cc?, d?]));
        }
        Ok(Self {
            runtime: GsiRuntime::from_parts(weights, parts)?,
            k: meta.k,
            hidden_k: meta.hidden_k,
            trace: meta.trace,
        })
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        Ok(self.to_container()?.write(manifest_path)?)
    }

    pub fn load(manifest_path: &Path, weights: &ModelWeights) -> Result<Self> {
        Self::from_container(&TensorContainer::read(manifest_path)?, weights)
    }
}

/// Loads a stored runtime for `weights`.
pub fn load_artifact(manifest_path: &Path, weights: &ModelWeights) -> Result<RuntimeArtifact> {
    RuntimeArtifact::load(manifest_path, weights)
}

impl From<super::calibrate::Calibration> for RuntimeArtifact {
    fn from(c: super::calibrate::Calibration) -> Self {
        Self {
            runtime: c.runtime,
            k: c.k,
            hidden_k: c.hidden_k,
            trace: c.trace,
        }
    }
}
