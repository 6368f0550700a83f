#![no_main]

use libfuzzer_sys::fuzz_target;
use tkgc_core::model::ModelConfig;
use tkgc_core::train::TrainConfig;

fuzz_target!(|data: &[u8]| {
    if let Ok(config) = serde_json::from_slice::<TrainConfig>(data) {
        let _ = config.validate();
    }
    if let Ok(config) = serde_json::from_slice::<ModelConfig>(data) {
        let _ = config.validate();
    }
});
