#![no_main]

use gsi_core::container::Manifest;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(m) = Manifest::parse(data) {
        // anything that parses must also pass its own validation again
        m.validate().expect("parsed manifest failed validation");
    }
});
