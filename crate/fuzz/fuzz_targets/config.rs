#![no_main]

use libfuzzer_sys::fuzz_target;
use mrt_joint::model::ModelConfig;
use mrt_joint::ppc::PpcConfig;
use mrt_joint::sampler::SamplerConfig;
use mrt_joint::selection::IcConfig;
use mrt_joint::simulate::SimConfig;
use serde::de::DeserializeOwned;
use serde::Serialize;

fn stable<T: Serialize + DeserializeOwned>(v: &T) {
    let json = serde_json::to_string(v).unwrap();
    let again: T = serde_json::from_str(&json).unwrap();
    assert_eq!(serde_json::to_string(&again).unwrap(), json);
}

// First byte picks the config type, the rest is JSON.
fuzz_target!(|data: &[u8]| {
    let Some((&kind, json)) = data.split_first() else { return };
    match kind % 5 {
        0 => {
            if let Ok(c) = serde_json::from_slice::<SimConfig>(json) {
                let _ = c.validate();
                stable(&c);
            }
        }
        1 => {
            if let Ok(c) = serde_json::from_slice::<SamplerConfig>(json) {
                let _ = c.validate();
                stable(&c);
            }
        }
        2 => {
            if let Ok(c) = serde_json::from_slice::<IcConfig>(json) {
                let _ = c.validate();
                stable(&c);
            }
        }
        3 => {
            if let Ok(c) = serde_json::from_slice::<PpcConfig>(json) {
                stable(&c);
            }
        }
        _ => {
            if let Ok(c) = serde_json::from_slice::<ModelConfig>(json) {
                let _ = c.validate();
                stable(&c);
            }
        }
    }
});
