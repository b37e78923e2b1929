#![no_main]

use libfuzzer_sys::fuzz_target;
use mrt_joint::bundle;

// Four tables separated by NUL bytes: observations, events, treatments, subjects.
fuzz_target!(|data: &[u8]| {
    let Ok(text) = std::str::from_utf8(data) else { return };
    let parts: Vec<&str> = text.splitn(4, '\0').collect();
    let [obs, ev, trt, sub] = parts[..] else { return };
    let Ok(d) = bundle::parse_bundle(obs, ev, trt, sub) else { return };
    d.validate().expect("parsed bundle must validate");
    let back = bundle::parse_bundle(
        &bundle::observations_csv(&d).unwrap(),
        &bundle::events_csv(&d).unwrap(),
        &bundle::treatments_csv(&d).unwrap(),
        &bundle::subjects_csv(&d).unwrap(),
    )
    .expect("written bundle must parse");
    assert_eq!(back, d);
});
