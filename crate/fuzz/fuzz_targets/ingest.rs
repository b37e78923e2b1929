#![no_main]

use libfuzzer_sys::fuzz_target;
use mrt_joint::{bundle, ingest};

// EMA, treatment and optional start tables separated by NUL bytes.
fuzz_target!(|text: &str| {
    let parts: Vec<&str> = text.splitn(3, '\0').collect();
    let (ema, trt, starts) = match parts[..] {
        [e, t] => (e, t, None),
        [e, t, s] => (e, t, Some(s)),
        _ => return,
    };
    let Ok(out) = ingest::ingest(ema, trt, starts) else { return };
    let d = &out.dataset;
    d.validate().expect("curated data must validate");
    let back = bundle::parse_bundle(
        &bundle::observations_csv(d).unwrap(),
        &bundle::events_csv(d).unwrap(),
        &bundle::treatments_csv(d).unwrap(),
        &bundle::subjects_csv(d).unwrap(),
    )
    .expect("curated bundle must parse");
    assert_eq!(&back, d);
    let _ = ingest::exclusions_csv(&out);
    let _ = ingest::flags_csv(&out);
});
