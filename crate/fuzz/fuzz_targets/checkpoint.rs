#![no_main]
use alarmsift::net::{decode_checkpoint, reduced_config, Model};
use libfuzzer_sys::fuzz_target;

fuzz_target!(|data: &[u8]| {
    if let Ok(ckpt) = decode_checkpoint(data) {
        for (_, shape, values) in &ckpt.groups {
            assert_eq!(shape.iter().product::<usize>(), values.len());
        }
        let _ = Model::from_checkpoint(reduced_config(), &ckpt);
    }
});
