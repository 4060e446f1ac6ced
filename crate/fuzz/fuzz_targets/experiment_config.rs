#![no_main]
use alarmsift::harness::ExperimentConfig;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(cfg) = ExperimentConfig::from_json(data) {
        let bytes = serde_json::to_vec(&cfg).expect("config serializes");
        ExperimentConfig::from_json(&bytes).expect("serialized config must parse");
    }
});
