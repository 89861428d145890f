use serde::{Deserialize, Serialize};

use crate::cost::{GatedMapShape, ModelShapes};
use crate::error::{Error, Result};

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Positional {
    /// Learned absolute position embeddings added to the token embedding.
    #[default]
    Learned,
    /// No positional signal beyond the causal mask.
    None,
}

/// Shape of a pre-norm, GPT-2-style decoder.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelConfig {
    pub d_model: usize,
    pub n_layers: usize,
    pub n_heads: usize,
    pub d_ff: usize,
    pub vocab: usize,
    pub max_seq: usize,
    #[serde(default)]
    pub positional: Positional,
}

impl ModelConfig {
    pub fn validate(&self) -> Result<()> {
        let counts = [
            ("d_model", self.d_model),
            ("n_layers", self.n_layers),
            ("n_heads", self.n_heads),
            ("d_ff", self.d_ff),
            ("vocab", self.vocab),
            ("max_seq", self.max_seq),
        ];
        if let Some((name, _)) = counts.iter().find(|(_, v)| *v == 0) {
            return Err(Error::InvalidConfig(format!("{name} must be at least 1")));
        }
        if !self.d_model.is_multiple_of(self.n_heads) {
            return Err(Error::InvalidConfig(format!(
                "d_model {} is not divisible by n_heads {}",
                self.d_model, self.n_heads
            )));
        }
        let (d, f) = (self.d_model, self.d_ff);
        let products = [
            d.checked_mul(3).and_then(|q| q.checked_mul(d)),
            d.checked_mul(f),
            d.checked_mul(self.vocab),
            d.checked_mul(self.max_seq),
        ];
        if products.iter().any(Option::is_none) {
            return Err(Error::InvalidConfig("weight matrix sizes overflow".into()));
        }
        Ok(())
    }

    pub fn head_dim(&self) -> usize {
        self.d_model / self.n_heads
    }

    /// Gated-map shapes for the cost model at basis ranks `k` (width `d`)
    /// and `hidden_k` (width `d_ff`).
    pub fn shapes(&self, k: usize, hidden_k: usize) -> ModelShapes {
        let (d, f) = (self.d_model, self.d_ff);
        let map = |name: &str, d_out, d_in, rank| GatedMapShape {
            name: name.to_owned(),
            d_out,
            d_in,
            rank,
        };
        ModelShapes::uniform(
            d,
            self.vocab,
            self.n_layers,
            vec![
                map("qkv", 3 * d, d, k),
                map("out_proj", d, d, k),
                map("mlp_up", f, d, k),
                map("mlp_down", d, f, hidden_k),
            ],
        )
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn cfg() -> ModelConfig {
        ModelConfig {
            d_model: 16,
            n_layers: 2,
            n_heads: 4,
            d_ff: 64,
            vocab: 32,
            max_seq: 64,
            positional: Positional::Learned,
        }
    }

    #[test]
    fn validation() {
        assert!(cfg().validate().is_ok());
        assert!(ModelConfig { n_heads: 3, ..cfg() }.validate().is_err());
        assert!(ModelConfig { vocab: 0, ..cfg() }.validate().is_err());
        assert_eq!(cfg().head_dim(), 4);
    }
}
