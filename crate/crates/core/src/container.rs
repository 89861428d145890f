//! Two-file tensor container: a JSON manifest plus a raw little-endian blob.
//!
//! ```json
//! {
//!   "format": "gsi-tensors",
//!   "version": 1,
//!   "blob": "model.bin",
//!   "alignment": 64,
//!   "tensors": [
//!     { "name": "lm_head", "shape": [64, 32], "dtype": "f64le", "offset": 0, "length": 16384 }
//!   ],
//!   "metadata": {}
//! }
//! ```
//!
//! Offsets are 64-byte aligned; the gaps are zero-filled. Tensors are stored
//! in insertion order, so encoding is deterministic and round-trips bit-exact.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};
use serde_json::Value;

use crate::error::ContainerError;
use crate::linalg::DenseMatrix;

pub const FORMAT: &str = "gsi-tensors";
pub const VERSION: u32 = 1;
pub const ALIGNMENT: u64 = 64;

type Result<T> = std::result::Result<T, ContainerError>;

#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub enum DType {
    F32Le,
    F64Le,
}

impl DType {
    pub fn parse(tag: &str) -> Option<Self> {
        match tag {
            "f32le" => Some(Self::F32Le),
            "f64le" => Some(Self::F64Le),
            _ => None,
        }
    }

    pub fn tag(self) -> &'static str {
        match self {
            Self::F32Le => "f32le",
            Self::F64Le => "f64le",
        }
    }

    pub fn size(self) -> u64 {
        match self {
            Self::F32Le => 4,
            Self::F64Le => 8,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TensorEntry {
    pub name: String,
    pub shape: Vec<usize>,
    pub dtype: String,
    pub offset: u64,
    pub length: u64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct Manifest {
    pub format: String,
    pub version: u32,
    pub blob: String,
    pub alignment: u64,
    pub tensors: Vec<TensorEntry>,
    #[serde(default)]
    pub metadata: Value,
}

impl Manifest {
    /// Parses and structurally validates a manifest; the blob is not consulted.
    pub fn parse(bytes: &[u8]) -> Result<Self> {
        let manifest: Manifest = serde_json::from_slice(bytes).map_err(|e| ContainerError::Manifest(e.to_string()))?;
        manifest.validate()?;
        Ok(manifest)
    }

    pub fn validate(&self) -> Result<()> {
        if self.format != FORMAT {
            return Err(ContainerError::Manifest(format!(
                "format is `{}`, expected `{FORMAT}`",
                self.format
            )));
        }
        if self.version != VERSION {
            return Err(ContainerError::Manifest(format!(
                "unsupported version {}",
                self.version
            )));
        }
        if self.alignment != ALIGNMENT {
            return Err(ContainerError::Manifest(format!(
                "alignment is {}, expected {ALIGNMENT}",
                self.alignment
            )));
        }
        if self.blob.is_empty() || self.blob.contains(['/', '\\']) || self.blob == ".." {
            return Err(ContainerError::Manifest(format!(
                "blob `{}` must be a plain file name next to the manifest",
                self.blob
            )));
        }
        let mut seen = std::collections::HashSet::new();
        for t in &self.tensors {
            if !seen.insert(t.name.as_str()) {
                return Err(ContainerError::Duplicate(t.name.clone()));
            }
            let dtype = DType::parse(&t.dtype).ok_or_else(|| ContainerError::UnknownDtype {
                name: t.name.clone(),
                dtype: t.dtype.clone(),
            })?;
            let expected = t
                .shape
                .iter()
                .try_fold(dtype.size(), |acc, &d| acc.checked_mul(d as u64))
                .ok_or_else(|| ContainerError::Manifest(format!("tensor `{}`: shape overflows", t.name)))?;
            if expected != t.length {
                return Err(ContainerError::ShapeMismatch {
                    name: t.name.clone(),
                    shape: t.shape.clone(),
                    expected,
                    declared: t.length,
                });
            }
            if t.offset % ALIGNMENT != 0 {
                return Err(ContainerError::Misaligned {
                    name: t.name.clone(),
                    offset: t.offset,
                    align: ALIGNMENT,
                });
            }
            if t.offset.checked_add(t.length).is_none() {
                return Err(ContainerError::Manifest(format!(
                    "tensor `{}`: extent overflows",
                    t.name
                )));
            }
        }
        let mut spans: Vec<&TensorEntry> = self.tensors.iter().filter(|t| t.length > 0).collect();
        spans.sort_by_key(|t| t.offset);
        for w in spans.windows(2) {
            if w[0].offset + w[0].length > w[1].offset {
                return Err(ContainerError::Overlap {
                    first: w[0].name.clone(),
                    second: w[1].name.clone(),
                });
            }
        }
        Ok(())
    }
}

#[derive(Clone, Debug, PartialEq)]
pub enum TensorData {
    F32(Vec<f32>),
    F64(Vec<f64>),
}

impl TensorData {
    pub fn dtype(&self) -> DType {
        match self {
            Self::F32(_) => DType::F32Le,
            Self::F64(_) => DType::F64Le,
        }
    }

    pub fn len(&self) -> usize {
        match self {
            Self::F32(v) => v.len(),
            Self::F64(v) => v.len(),
        }
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// Values widened to `f64`.
    pub fn to_f64(&self) -> Vec<f64> {
        match self {
            Self::F32(v) => v.iter().map(|x| *x as f64).collect(),
            Self::F64(v) => v.clone(),
        }
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor {
    pub shape: Vec<usize>,
    pub data: TensorData,
}

/// An ordered set of named tensors plus free-form JSON metadata.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct TensorContainer {
    tensors: Vec<(String, Tensor)>,
    pub metadata: Value,
}

impl TensorContainer {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.get(&name).is_some() {
            return Err(ContainerError::Duplicate(name));
        }
        let count: usize = tensor.shape.iter().product();
        if count != tensor.data.len() {
            return Err(ContainerError::ShapeMismatch {
                name,
                shape: tensor.shape,
                expected: count as u64 * tensor.data.dtype().size(),
                declared: tensor.data.len() as u64 * tensor.data.dtype().size(),
            });
        }
        self.tensors.push((name, tensor));
        Ok(())
    }

    pub fn insert_matrix(&mut self, name: impl Into<String>, m: &DenseMatrix) -> Result<()> {
        self.insert(
            name,
            Tensor {
                shape: vec![m.rows(), m.cols()],
                data: TensorData::F64(m.data().to_vec()),
            },
        )
    }

    pub fn insert_vector(&mut self, name: impl Into<String>, v: &[f64]) -> Result<()> {
        self.insert(
            name,
            Tensor {
                shape: vec![v.len()],
                data: TensorData::F64(v.to_vec()),
            },
        )
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.iter().find(|(n, _)| n == name).map(|(_, t)| t)
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.iter().map(|(n, _)| n.as_str())
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    fn require(&self, name: &str) -> Result<&Tensor> {
        self.get(name)
            .ok_or_else(|| ContainerError::MissingTensor(name.to_owned()))
    }

    /// Rank-2 tensor as a matrix; `expected` pins the shape when given.
    pub fn matrix(&self, name: &str, expected: Option<(usize, usize)>) -> Result<DenseMatrix> {
        let t = self.require(name)?;
        let shape = match (t.shape.as_slice(), expected) {
            (&[r, c], Some((er, ec))) if (r, c) == (er, ec) => (r, c),
            (&[r, c], None) => (r, c),
            (_, exp) => {
                return Err(ContainerError::UnexpectedShape {
                    name: name.to_owned(),
                    expected: exp.map_or_else(|| vec![0, 0], |(r, c)| vec![r, c]),
                    actual: t.shape.clone(),
                })
            }
        };
        DenseMatrix::new(shape.0, shape.1, t.data.to_f64())
            .map_err(|_| ContainerError::NonFinite { name: name.to_owned() })
    }

    pub fn vector(&self, name: &str, expected_len: usize) -> Result<Vec<f64>> {
        let t = self.require(name)?;
        if t.shape != [expected_len] {
            return Err(ContainerError::UnexpectedShape {
                name: name.to_owned(),
                expected: vec![expected_len],
                actual: t.shape.clone(),
            });
        }
        let v = t.data.to_f64();
        if v.iter().any(|x| !x.is_finite()) {
            return Err(ContainerError::NonFinite { name: name.to_owned() });
        }
        Ok(v)
    }

    /// Checks that the container holds exactly `expected` tensors, naming the
    /// first one that is missing or unexpected.
    pub fn expect_names<'a>(&self, expected: impl IntoIterator<Item = &'a str>) -> Result<()> {
        let expected: Vec<&str> = expected.into_iter().collect();
        if let Some(missing) = expected.iter().find(|n| self.get(n).is_none()) {
            return Err(ContainerError::TensorCount {
                declared: self.len(),
                actual: expected.len(),
                name: (*missing).to_owned(),
            });
        }
        if let Some(extra) = self.names().find(|n| !expected.contains(n)) {
            return Err(ContainerError::TensorCount {
                declared: self.len(),
                actual: expected.len(),
                name: extra.to_owned(),
            });
        }
        Ok(())
    }

    /// Serializes to `(manifest JSON, blob bytes)`.
    pub fn encode(&self, blob_name: &str) -> Result<(String, Vec<u8>)> {
        let mut blob = Vec::new();
        let mut entries = Vec::with_capacity(self.tensors.len());
        for (name, t) in &self.tensors {
            let pad = (ALIGNMENT - blob.len() as u64 % ALIGNMENT) % ALIGNMENT;
            blob.resize(blob.len() + pad as usize, 0);
            let offset = blob.len() as u64;
            match &t.data {
                TensorData::F32(v) => v.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes())),
                TensorData::F64(v) => v.iter().for_each(|x| blob.extend_from_slice(&x.to_le_bytes())),
            }
            entries.push(TensorEntry {
                name: name.clone(),
                shape: t.shape.clone(),
                dtype: t.data.dtype().tag().to_owned(),
                offset,
                length: blob.len() as u64 - offset,
            });
        }
        let manifest = Manifest {
            format: FORMAT.to_owned(),
            version: VERSION,
            blob: blob_name.to_owned(),
            alignment: ALIGNMENT,
            tensors: entries,
            metadata: self.metadata.clone(),
        };
        let mut json = serde_json::to_string_pretty(&manifest).map_err(|e| ContainerError::Manifest(e.to_string()))?;
        json.push('\n');
        Ok((json, blob))
    }

    /// Decodes a manifest and its blob.
    pub fn decode(manifest_bytes: &[u8], blob: &[u8]) -> Result<Self> {
        let manifest = Manifest::parse(manifest_bytes)?;
        Self::from_manifest(&manifest, blob)
    }

    pub fn from_manifest(manifest: &Manifest, blob: &[u8]) -> Result<Self> {
        let mut out = Self {
            tensors: Vec::with_capacity(manifest.tensors.len()),
            metadata: manifest.metadata.clone(),
        };
        for t in &manifest.tensors {
            let end = t.offset + t.length;
            if end > blob.len() as u64 {
                return Err(ContainerError::Truncated {
                    name: t.name.clone(),
                    start: t.offset,
                    end,
                    blob_len: blob.len() as u64,
                });
            }
            let bytes = &blob[t.offset as usize..end as usize];
            let data = match DType::parse(&t.dtype).expect("validated") {
                DType::F32Le => TensorData::F32(
                    bytes
                        .chunks_exact(4)
                        .map(|c| f32::from_le_bytes(c.try_into().expect("4 bytes")))
                        .collect(),
                ),
                DType::F64Le => TensorData::F64(
                    bytes
                        .chunks_exact(8)
                        .map(|c| f64::from_le_bytes(c.try_into().expect("8 bytes")))
                        .collect(),
                ),
            };
            out.tensors.push((
                t.name.clone(),
                Tensor {
                    shape: t.shape.clone(),
                    data,
                },
            ));
        }
        Ok(out)
    }

    /// Writes `<manifest_path>` and a sibling blob named after it with a `.bin` extension.
    pub fn write(&self, manifest_path: &Path) -> Result<()> {
        let blob_path = manifest_path.with_extension("bin");
        let blob_name = blob_path
            .file_name()
            .and_then(|n| n.to_str())
            .ok_or_else(|| ContainerError::Manifest(format!("bad manifest path {}", manifest_path.display())))?
            .to_owned();
        let (json, blob) = self.encode(&blob_name)?;
        if let Some(parent) = manifest_path.parent().filter(|p| !p.as_os_str().is_empty()) {
            fs::create_dir_all(parent).map_err(|e| io_err(parent, e))?;
        }
        fs::write(&blob_path, blob).map_err(|e| io_err(&blob_path, e))?;
        fs::write(manifest_path, json).map_err(|e| io_err(manifest_path, e))?;
        Ok(())
    }

    pub fn read(manifest_path: &Path) -> Result<Self> {
        let bytes = fs::read(manifest_path).map_err(|e| io_err(manifest_path, e))?;
        let manifest = Manifest::parse(&bytes)?;
        let blob_path = manifest_path.with_file_name(&manifest.blob);
        let blob = fs::read(&blob_path).map_err(|e| io_err(&blob_path, e))?;
        Self::from_manifest(&manifest, &blob)
    }
}

fn io_err(path: &Path, source: std::io::Error) -> ContainerError {
    ContainerError::Io {
        path: PathBuf::from(path),
        source,
    }
}
