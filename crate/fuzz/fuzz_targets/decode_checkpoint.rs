#![no_main]

use libfuzzer_sys::fuzz_target;
use sscsr_core::netcore::{decode_checkpoint, encode_checkpoint};

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        let again = encode_checkpoint(&ckpt).expect("decoded checkpoint re-encodes");
        decode_checkpoint(&again).expect("re-encoded checkpoint decodes");
    }
});
