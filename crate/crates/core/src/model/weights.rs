//! Model parameters, seeded initializers and container I/O.
//!
//! Initializers draw from `ChaCha8Rng::seed_from_u64(seed)` in a fixed
//! order, so the same seed produces the same bits on every platform.

use std::path::Path;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use serde_json::json;

use super::config::{ModelConfig, Positional};
use crate::container::TensorContainer;
use crate::error::{ContainerError, Error, Result};
use crate::linalg::{axpy, dot, norm, DenseMatrix};

#[derive(Clone, Debug, PartialEq)]
pub struct LayerWeights {
    pub ln1_gain: Vec<f64>,
    pub ln1_bias: Vec<f64>,
    /// Fused `3d × d` query/key/value projection.
    pub qkv: DenseMatrix,
    pub out_proj: DenseMatrix,
    pub ln2_gain: Vec<f64>,
    pub ln2_bias: Vec<f64>,
    /// `d_ff × d`
    pub mlp_up: DenseMatrix,
    /// `d × d_ff`
    pub mlp_down: DenseMatrix,
}

#[derive(Clone, Debug, PartialEq)]
pub struct ModelWeights {
    pub config: ModelConfig,
    /// `vocab × d`
    pub token_embedding: DenseMatrix,
    /// `max_seq × d`, present only with learned positions.
    pub position_embedding: Option<DenseMatrix>,
    pub layers: Vec<LayerWeights>,
    pub final_gain: Vec<f64>,
    pub final_bias: Vec<f64>,
    /// `vocab × d`, untied from the embedding.
    pub lm_head: DenseMatrix,
}

fn normal_vec(rng: &mut ChaCha8Rng, n: usize, mean: f64, scale: f64) -> Vec<f64> {
    (0..n)
        .map(|_| mean + scale * rng.sample::<f64, _>(StandardNormal))
        .collect()
}

/// Dense random model with fan-in scaled projections and slightly perturbed
/// layer norms.
pub fn init_random(config: &ModelConfig, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let (d, f) = (config.d_model, config.d_ff);
    let token_embedding = DenseMatrix::random_normal(config.vocab, d, 1.0, &mut rng);
    let position_embedding = match config.positional {
        Positional::Learned => Some(DenseMatrix::random_normal(config.max_seq, d, 0.5, &mut rng)),
        Positional::None => None,
    };
    let in_scale = 1.0 / (d as f64).sqrt();
    let down_scale = 1.0 / (f as f64).sqrt();
    let layers = (0..config.n_layers)
        .map(|_| LayerWeights {
            ln1_gain: normal_vec(&mut rng, d, 1.0, 0.1),
            ln1_bias: normal_vec(&mut rng, d, 0.0, 0.1),
            qkv: DenseMatrix::random_normal(3 * d, d, in_scale, &mut rng),
            out_proj: DenseMatrix::random_normal(d, d, in_scale, &mut rng),
            ln2_gain: normal_vec(&mut rng, d, 1.0, 0.1),
            ln2_bias: normal_vec(&mut rng, d, 0.0, 0.1),
            mlp_up: DenseMatrix::random_normal(f, d, in_scale, &mut rng),
            mlp_down: DenseMatrix::random_normal(d, f, down_scale, &mut rng),
        })
        .collect();
    let final_gain = normal_vec(&mut rng, d, 1.0, 0.1);
    let final_bias = normal_vec(&mut rng, d, 0.0, 0.1);
    let lm_head = DenseMatrix::random_normal(config.vocab, d, 2.0 * in_scale, &mut rng);
    Ok(ModelWeights {
        config: *config,
        token_embedding,
        position_embedding,
        layers,
        final_gain,
        final_bias,
        lm_head,
    })
}

/// A model whose every linear-map input lives in a fixed low-dimensional
/// subspace by construction.
///
/// The residual stream is confined to a random `rank`-dimensional subspace
/// `S` orthogonal to the all-ones vector, so mean-centering in layer norm
/// keeps it in `S`; layer norms have a uniform gain and no bias. Every
/// projection that writes to the residual stream maps into `S`, and the
/// MLP up-projection feeds only `rank` hidden units, so its hidden
/// activations live in a `rank`-dimensional coordinate subspace.
pub fn init_planted(config: &ModelConfig, rank: usize, seed: u64) -> Result<ModelWeights> {
    config.validate()?;
    let (d, f) = (config.d_model, config.d_ff);
    if rank == 0 || rank >= d || rank > f {
        return Err(Error::InvalidConfig(format!(
            "planted rank {rank} must lie in 1..{d} and not exceed d_ff {f}"
        )));
    }
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let q = centered_orthonormal(d, rank, &mut rng);
    let qt = q.transpose();
    let hidden_units: Vec<usize> = {
        let mut idx: Vec<usize> = (0..f).collect();
        for i in 0..rank {
            let j = rng.random_range(i..f);
            idx.swap(i, j);
        }
        let mut chosen = idx[..rank].to_vec();
        chosen.sort_unstable();
        chosen
    };
    let select = DenseMatrix::from_fn(f, rank, |i, j| if hidden_units[j] == i { 1.0 } else { 0.0 });

    let in_subspace = |rng: &mut ChaCha8Rng, scale: f64| -> DenseMatrix {
        let a = DenseMatrix::random_normal(rank, rank, scale, rng);
        q.matmul(&a).and_then(|qa| qa.matmul(&qt)).expect("conformant")
    };
    let embed = |rng: &mut ChaCha8Rng, rows: usize, scale: f64| -> DenseMatrix {
        DenseMatrix::random_normal(rows, rank, scale, rng)
            .matmul(&qt)
            .expect("conformant")
    };

    let token_embedding = embed(&mut rng, config.vocab, 1.0);
    let position_embedding = match config.positional {
        Positional::Learned => Some(embed(&mut rng, config.max_seq, 0.5)),
        Positional::None => None,
    };
    // LN outputs have per-coordinate unit variance, so ‖x‖ ≈ √d and the
    // subspace coordinates carry norm ≈ √d.
    let s = 1.0 / (d as f64).sqrt();
    let layers = (0..config.n_layers)
        .map(|_| {
            let mut qkv_rows = Vec::with_capacity(3 * d);
            for _ in 0..3 {
                let block = in_subspace(&mut rng, s * (d as f64 / rank as f64).sqrt());
                qkv_rows.extend((0..d).map(|i| block.row(i).to_vec()));
            }
            let up_core = DenseMatrix::random_normal(rank, rank, 2.0 * s * (d as f64 / rank as f64).sqrt(), &mut rng);
            let down_core = DenseMatrix::random_normal(rank, rank, 1.0 / (rank as f64).sqrt(), &mut rng);
            LayerWeights {
                ln1_gain: vec![1.0; d],
                ln1_bias: vec![0.0; d],
                qkv: DenseMatrix::from_rows(&qkv_rows).expect("finite"),
                out_proj: in_subspace(&mut rng, 1.0 / (rank as f64).sqrt()),
                ln2_gain: vec![1.0; d],
                ln2_bias: vec![0.0; d],
                mlp_up: select.matmul(&up_core).and_then(|m| m.matmul(&qt)).expect("conformant"),
                mlp_down: q
                    .matmul(&down_core)
                    .and_then(|m| m.matmul(&select.transpose()))
                    .expect("conformant"),
            }
        })
        .collect();
    let lm_head = embed(&mut rng, config.vocab, 3.0 * s);
    Ok(ModelWeights {
        config: *config,
        token_embedding,
        position_embedding,
        layers,
        final_gain: vec![1.0; d],
        final_bias: vec![0.0; d],
        lm_head,
    })
}

/// Orthonormal `d × k` basis of a random subspace orthogonal to `1`.
fn centered_orthonormal(d: usize, k: usize, rng: &mut ChaCha8Rng) -> DenseMatrix {
    let ones = vec![1.0 / (d as f64).sqrt(); d];
    let mut cols: Vec<Vec<f64>> = Vec::with_capacity(k);
    while cols.len() < k {
        let mut v = normal_vec(rng, d, 0.0, 1.0);
        for _ in 0..2 {
            let h = dot(&ones, &v);
            axpy(-h, &ones, &mut v);
            for c in &cols {
                let h = dot(c, &v);
                axpy(-h, c, &mut v);
            }
        }
        let n = norm(&v);
        if n > 1e-8 {
            v.iter_mut().for_each(|x| *x /= n);
            cols.push(v);
        }
    }
    DenseMatrix::from_columns(d, &cols)
}

impl ModelWeights {
    pub fn tensor_names(config: &ModelConfig) -> Vec<String> {
        let mut names = vec!["token_embedding".to_owned()];
        if config.positional == Positional::Learned {
            names.push("position_embedding".to_owned());
        }
        for l in 0..config.n_layers {
            for part in [
                "ln1.gain", "ln1.bias", "qkv", "out_proj", "ln2.gain", "ln2.bias", "mlp_up", "mlp_down",
            ] {
                names.push(format!("layers.{l}.{part}"));
            }
        }
        names.extend(["final.gain", "final.bias", "lm_head"].map(String::from));
        names
    }

    pub fn to_container(&self) -> Result<TensorContainer> {
        let mut c = TensorContainer::new();
        c.metadata = json!({ "kind": "model_weights", "config": self.config });
        c.insert_matrix("token_embedding", &self.token_embedding)?;
        if let Some(p) = &self.position_embedding {
            c.insert_matrix("position_embedding", p)?;
        }
        for (l, w) in self.layers.iter().enumerate() {
            c.insert_vector(format!("layers.{l}.ln1.gain"), &w.ln1_gain)?;
            c.insert_vector(format!("layers.{l}.ln1.bias"), &w.ln1_bias)?;
            c.insert_matrix(format!("layers.{l}.qkv"), &w.qkv)?;
            c.insert_matrix(format!("layers.{l}.out_proj"), &w.out_proj)?;
            c.insert_vector(format!("layers.{l}.ln2.gain"), &w.ln2_gain)?;
            c.insert_vector(format!("layers.{l}.ln2.bias"), &w.ln2_bias)?;
            c.insert_matrix(format!("layers.{l}.mlp_up"), &w.mlp_up)?;
            c.insert_matrix(format!("layers.{l}.mlp_down"), &w.mlp_down)?;
        }
        c.insert_vector("final.gain", &self.final_gain)?;
        c.insert_vector("final.bias", &self.final_bias)?;
        c.insert_matrix("lm_head", &self.lm_head)?;
        Ok(c)
    }

    pub fn from_container(c: &TensorContainer) -> Result<Self> {
        let config: ModelConfig = c
            .metadata
            .get("config")
            .cloned()
            .ok_or_else(|| ContainerError::Manifest("metadata has no model `config`".into()))
            .and_then(|v| {
                serde_json::from_value(v).map_err(|e| ContainerError::Manifest(format!("model config: {e}")))
            })?;
        config.validate()?;
        // each layer stores eight tensors; reject before listing names for an absurd depth
        if config.n_layers.saturating_mul(8) > c.len() {
            return Err(ContainerError::Manifest(format!(
                "config declares {} layers but the container holds only {} tensors",
                config.n_layers,
                c.len()
            ))
            .into());
        }
        let names = Self::tensor_names(&config);
        c.expect_names(names.iter().map(String::as_str))?;
        let (d, f, v) = (config.d_model, config.d_ff, config.vocab);
        let layers = (0..config.n_layers)
            .map(|l| {
                Ok(LayerWeights {
                    ln1_gain: c.vector(&format!("layers.{l}.ln1.gain"), d)?,
                    ln1_bias: c.vector(&format!("layers.{l}.ln1.bias"), d)?,
                    qkv: c.matrix(&format!("layers.{l}.qkv"), Some((3 * d, d)))?,
                    out_proj: c.matrix(&format!("layers.{l}.out_proj"), Some((d, d)))?,
                    ln2_gain: c.vector(&format!("layers.{l}.ln2.gain"), d)?,
                    ln2_bias: c.vector(&format!("layers.{l}.ln2.bias"), d)?,
                    mlp_up: c.matrix(&format!("layers.{l}.mlp_up"), Some((f, d)))?,
                    mlp_down: c.matrix(&format!("layers.{l}.mlp_down"), Some((d, f)))?,
                })
            })
            .collect::<std::result::Result<Vec<_>, ContainerError>>()?;
        Ok(Self {
            config,
            token_embedding: c.matrix("token_embedding", Some((v, d)))?,
            position_embedding: match config.positional {
                Positional::Learned => Some(c.matrix("position_embedding", Some((config.max_seq, d)))?),
                Positional::None => None,
            },
            layers,
            final_gain: c.vector("final.gain", d)?,
            final_bias: c.vector("final.bias", d)?,
            lm_head: c.matrix("lm_head", Some((v, d)))?,
        })
    }

    pub fn save(&self, manifest_path: &Path) -> Result<()> {
        Ok(self.to_container()?.write(manifest_path)?)
    }

    /// Loads weights from a tensor container manifest.
    pub fn load(manifest_path: &Path) -> Result<Self> {
        Self::from_container(&TensorContainer::read(manifest_path)?)
    }
}

pub fn load_weights(manifest_path: &Path) -> Result<ModelWeights> {
    ModelWeights::load(manifest_path)
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 2,
            d_ff: 32,
            vocab: 20,
            max_seq: 24,
            positional: Positional::Learned,
        }
    }

    #[test]
    fn same_seed_same_weights() {
        assert_eq!(init_random(&cfg(), 9).unwrap(), init_random(&cfg(), 9).unwrap());
        assert_ne!(init_random(&cfg(), 9).unwrap(), init_random(&cfg(), 10).unwrap());
        assert_eq!(init_planted(&cfg(), 4, 9).unwrap(), init_planted(&cfg(), 4, 9).unwrap());
    }

    #[test]
    fn save_load_bit_exact() {
        let dir = tempfile::tempdir().unwrap();
        for positional in [Positional::Learned, Positional::None] {
            let w = init_random(&ModelConfig { positional, ..cfg() }, 3).unwrap();
            let path = dir.path().join("w.json");
            w.save(&path).unwrap();
            assert_eq!(load_weights(&path).unwrap(), w);
        }
    }

    #[test]
    fn load_rejects_missing_tensor_by_name() {
        let w = init_random(&cfg(), 3).unwrap();
        let full = w.to_container().unwrap();
        let mut partial = TensorContainer::new();
        partial.metadata = full.metadata.clone();
        for name in full.names().filter(|n| *n != "layers.1.mlp_up") {
            partial.insert(name, full.get(name).unwrap().clone()).unwrap();
        }
        let err = ModelWeights::from_container(&partial).unwrap_err();
        assert!(err.to_string().contains("layers.1.mlp_up"), "{err}");
    }

    #[test]
    fn planted_subspace_is_centered() {
        let w = init_planted(&cfg(), 4, 1).unwrap();
        for v in 0..cfg().vocab {
            let row = w.token_embedding.row(v);
            assert!(row.iter().sum::<f64>().abs() < 1e-12);
        }
        assert!(init_planted(&cfg(), 16, 1).is_err());
    }
}
