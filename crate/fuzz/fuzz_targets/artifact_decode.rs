#![no_main]

use std::sync::OnceLock;

use gsi_core::container::TensorContainer;
use gsi_core::model::{init_random, ModelConfig, ModelWeights, Positional, RuntimeArtifact};
use libfuzzer_sys::fuzz_target;

// The seeds were calibrated against exactly this model.
fn weights() -> &'static ModelWeights {
    static W: OnceLock<ModelWeights> = OnceLock::new();
    W.get_or_init(|| {
        let cfg = ModelConfig {
            d_model: 8,
            n_layers: 1,
            n_heads: 2,
            d_ff: 16,
            vocab: 16,
            max_seq: 8,
            positional: Positional::Learned,
        };
        init_random(&cfg, 1).unwrap()
    })
}

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (manifest, blob) = (&data[..split], data.get(split + 1..).unwrap_or(&[]));
    let Ok(c) = TensorContainer::decode(manifest, blob) else {
        return;
    };
    let _ = RuntimeArtifact::from_container(&c, weights());
});
