#![no_main]

use gsi_core::container::TensorContainer;
use libfuzzer_sys::fuzz_target;

// Input layout: manifest JSON, one NUL byte, then the blob.
fuzz_target!(|data: &[u8]| {
    let split = data.iter().position(|&b| b == 0).unwrap_or(data.len());
    let (manifest, blob) = (&data[..split], data.get(split + 1..).unwrap_or(&[]));
    let Ok(c) = TensorContainer::decode(manifest, blob) else {
        return;
    };
    let (json, bytes) = c.encode("fuzz.bin").expect("re-encode a decoded container");
    let back = TensorContainer::decode(json.as_bytes(), &bytes).expect("decode own encoding");
    assert_eq!(back.names().collect::<Vec<_>>(), c.names().collect::<Vec<_>>());
    for name in c.names() {
        let (a, b) = (c.get(name).unwrap(), back.get(name).unwrap());
        assert_eq!(a.shape, b.shape);
        let bits = |t: &gsi_core::container::Tensor| t.data.to_f64().iter().map(|x| x.to_bits()).collect::<Vec<_>>();
        assert_eq!(bits(a), bits(b), "{name}");
    }
});
