//! Regenerates the checked-in fuzz corpus seeds.
//!
//! `cargo run -p alarmsift --example fuzz_seeds -- fuzz/corpus`

use std::fs;
use std::path::{Path, PathBuf};

use alarmsift::harness::ExperimentConfig;
use alarmsift::net::{encode_checkpoint, reduced_config, Model};
use alarmsift::records::{encode_signal, synth_dataset, RecordHeader, SynthSpec};
use alarmsift::scalogram::{encode_cache, ScalogramBuilder};

fn put(root: &Path, target: &str, name: &str, bytes: &[u8]) {
    let dir = root.join(target);
    fs::create_dir_all(&dir).unwrap();
    fs::write(dir.join(name), bytes).unwrap();
}

fn main() {
    let root = PathBuf::from(std::env::args().nth(1).unwrap_or_else(|| "fuzz/corpus".into()));
    let spec = SynthSpec {
        seconds: 0.24,
        ..SynthSpec::new(2, 0.5)
    };
    let records = synth_dataset(&spec, 1).unwrap();

    for (i, r) in records.iter().enumerate() {
        let header = RecordHeader::of(r);
        put(&root, "record_header", &format!("valid_{i}.json"), &serde_json::to_vec_pretty(&header).unwrap());
        // Signal target input: channel count minus one, u16 LE sample count, blob.
        let mut sig = vec![(r.channels().len() - 1) as u8];
        sig.extend_from_slice(&(r.len() as u16).to_le_bytes());
        sig.extend_from_slice(&encode_signal(r));
        put(&root, "signal_decode", &format!("valid_{i}.bin"), &sig);
    }
    put(&root, "record_header", "dup_channel.json", br#"{"record_id":"x","alarm_type":"ASYSTOLE","label":true,"fs":250.0,"channels":["ECG_II","ECG_II"],"n_samples":4}"#);
    put(&root, "signal_decode", "short.bin", &[1, 2, 0, 0, 0, 128, 63]);

    let wave: Vec<f64> = (0..2500).map(|i| (i as f64 * 0.05).sin()).collect();
    let s = ScalogramBuilder::default().build(&wave).unwrap();
    put(&root, "scalogram_cache", "valid.f32", &encode_cache(&s));
    put(&root, "scalogram_cache", "truncated.f32", &encode_cache(&s)[..100]);

    let model = Model::new(reduced_config()).unwrap();
    let ckpt = encode_checkpoint(&model);
    put(&root, "checkpoint", "reduced.ckpt", &ckpt);
    put(&root, "checkpoint", "header_only.ckpt", &ckpt[..12]);

    put(&root, "experiment_config", "default.json", &serde_json::to_vec_pretty(&ExperimentConfig::default()).unwrap());
    put(&root, "experiment_config", "linear.json", br#"{"experiment":"features_linear","folds":3,"seed":7}"#);
    put(&root, "experiment_config", "baseline.json", br#"{"experiment":"temporal","baseline":"static","bootstrap_iters":200}"#);
}
