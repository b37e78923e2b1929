#![no_main]

use libfuzzer_sys::fuzz_target;
use mrt_joint::ingest;

fuzz_target!(|text: &str| {
    let _ = ingest::parse_treatments(text);
});
