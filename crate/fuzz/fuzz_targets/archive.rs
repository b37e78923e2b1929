#![no_main]

use libfuzzer_sys::fuzz_target;
use mrt_joint::archive;

// First byte picks the latent dimension, the rest is CSV.
fuzz_target!(|data: &[u8]| {
    let Some((&p, rest)) = data.split_first() else { return };
    let Ok(text) = std::str::from_utf8(rest) else { return };
    let names: Vec<String> = ["theta[1,1]", "rho[1,2]", "tau[1]"].iter().map(|s| s.to_string()).collect();
    let _ = archive::parse_samples(text, &names);
    if let Ok(rows) = archive::parse_latent(text, 1 + p as usize % 4) {
        assert!(rows.iter().all(|r| r.3.len() == 1 + p as usize % 4));
    }
});
