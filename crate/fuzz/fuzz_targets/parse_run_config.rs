#![no_main]

use libfuzzer_sys::fuzz_target;
use sscsr_core::config::parse_run_config;

fuzz_target!(|data: &[u8]| {
    if let Ok(text) = std::str::from_utf8(data) {
        if let Ok(config) = parse_run_config(text) {
            let again = parse_run_config(&config.to_json().expect("config serializes")).expect("config re-parses");
            assert_eq!(again, config);
        }
    }
});
