#![no_main]

use libfuzzer_sys::fuzz_target;
use mrt_joint::ingest;

fuzz_target!(|text: &str| {
    if let Some(t) = ingest::parse_timestamp(text) {
        assert!(t.is_finite(), "{text:?} -> {t}");
    }
});
