#![no_main]

use gsi_core::container::TensorContainer;
use gsi_core::model::ModelWeights;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (manifest, blob) = (&data[..split], data.get(split + 1..).unwrap_or(&[]));
    let Ok(c) = TensorContainer::decode(manifest, blob) else {
        return;
    };
    let _ = ModelWeights::from_container(&c);
});
