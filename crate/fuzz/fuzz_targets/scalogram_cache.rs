#![no_main]
use alarmsift::scalogram::decode_cache;
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(values) = decode_cache(data) {
        assert_eq!(values.len() * 4, data.len());
        assert!(values.iter().all(|v| (0.0..=1.0).contains(v)));
    }
});
