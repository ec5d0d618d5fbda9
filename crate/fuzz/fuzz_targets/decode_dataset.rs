#![no_main]

use libfuzzer_sys::fuzz_target;
use sscsr_core::dataio::{decode_dataset, encode_dataset};

fuzz_target!(|data: &[u8]| {
    if let Ok(ds) = decode_dataset(data) {
        let again = encode_dataset(&ds).expect("decoded dataset re-encodes");
        assert_eq!(decode_dataset(&again).expect("re-encoded dataset decodes"), ds);
    }
});
