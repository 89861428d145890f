#![no_main]

use gsi_core::corpus::parse_corpus;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    if let Ok(seqs) = parse_corpus(text) {
        assert!(seqs.iter().all(|s| !s.is_empty()));
    }
});
