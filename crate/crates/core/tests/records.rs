use alarmsift::records::{
    class_weights, filter_four_channel, load_dataset, synth_dataset, write_dataset, AlarmType, ChannelKind, Record, SynthSpec,
};

/// Retained (true, false) counts per alarm type after four-channel filtering.
const RETAINED: [(AlarmType, usize, usize); 5] = [
    (AlarmType::VfibFlutter, 60, 203),
    (AlarmType::Asystole, 12, 73),
    (AlarmType::Tachycardia, 56, 6),
    (AlarmType::Bradycardia, 25, 31),
    (AlarmType::Vfib, 5, 27),
];

fn tiny_record(id: usize, alarm: AlarmType, label: bool, channels: &[ChannelKind]) -> Record {
    let samples = channels.iter().map(|_| vec![0.0f32; 4]).collect();
    Record::new(format!("r{id:04}"), alarm, label, 250.0, channels.to_vec(), samples).unwrap()
}

#[test]
fn four_channel_filter_reproduces_dataset_composition() {
    let mut records = Vec::new();
    for &(alarm, n_true, n_false) in &RETAINED {
        for i in 0..n_true + n_false {
            records.push(tiny_record(records.len(), alarm, i < n_true, &ChannelKind::CANONICAL));
        }
    }
    // 252 incomplete records, 92 of them true, so the full set is 250/750.
    let partial = [ChannelKind::EcgII, ChannelKind::Pleth];
    for i in 0..252 {
        let alarm = AlarmType::ALL[i % AlarmType::ALL.len()];
        records.push(tiny_record(records.len(), alarm, i < 92, &partial[..1 + i % 2]));
    }
    let out = filter_four_channel(&records);
    assert_eq!(out.before.total, 750);
    assert_eq!(out.after.total, 498);
    assert_eq!((out.before.true_ratio * 1000.0).round() / 1000.0, 0.333);
    assert_eq!((out.after.true_ratio * 1000.0).round() / 1000.0, 0.317);
    for &(alarm, n_true, n_false) in &RETAINED {
        let c = out.after.counts[&alarm];
        assert_eq!((c.n_true, c.n_false), (n_true, n_false), "{alarm:?}");
    }
    let labels: Vec<bool> = out.retained.iter().map(Record::label).collect();
    let w = class_weights(&labels).unwrap();
    assert_eq!(((w.w_true * 1000.0).round(), (w.w_false * 1000.0).round()), (1576.0, 732.0));
}

fn rms(r: &Record) -> f64 {
    let (sum, n) = r
        .samples()
        .iter()
        .flatten()
        .fold((0.0, 0usize), |(s, n), &v| (s + f64::from(v) * f64::from(v), n + 1));
    (sum / n as f64).sqrt()
}

#[test]
fn families_have_equal_window_energy() {
    let records = synth_dataset(&SynthSpec::new(1000, 0.5), 2024).unwrap();
    let mean_rms = |label: bool| {
        let v: Vec<f64> = records.iter().filter(|r| r.label() == label).map(rms).collect();
        v.iter().sum::<f64>() / v.len() as f64
    };
    let (t, f) = (mean_rms(true), mean_rms(false));
    let rel = (t - f).abs() / ((t + f) / 2.0);
    assert!(rel < 0.01, "true {t}, false {f}, relative gap {rel}");
}

#[test]
fn synthetic_dataset_survives_disk() {
    let spec = SynthSpec {
        seconds: 2.4,
        ..SynthSpec::new(12, 0.5)
    };
    let records = synth_dataset(&spec, 5).unwrap();
    let dir = tempfile::tempdir().unwrap();
    write_dataset(&records, dir.path()).unwrap();
    assert_eq!(load_dataset(dir.path()).unwrap(), records);
}
