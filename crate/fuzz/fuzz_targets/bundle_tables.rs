#![no_main]

use libfuzzer_sys::fuzz_target;
use mrt_joint::bundle;

fuzz_target!(|text: &str| {
    let _ = bundle::parse_observations(text);
    let _ = bundle::parse_subjects(text);
    let _ = bundle::parse_times(text, "events.csv");
});
