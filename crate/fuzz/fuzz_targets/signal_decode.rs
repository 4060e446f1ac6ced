#![no_main]
use alarmsift::records::{decode_signal, AlarmType, ChannelKind, RecordHeader};
use libfuzzer_sys::fuzz_target;

// Input: channel count minus one (mod 4), u16 LE sample count, then the signal blob.
fuzz_target!(|data: &[u8]| {
    if data.len() < 3 {
        return;
    }
    let n_channels = (data[0] as usize % 4) + 1;
    let n_samples = u16::from_le_bytes([data[1], data[2]]) as usize;
    let header = RecordHeader {
        record_id: "fuzz".into(),
        alarm_type: AlarmType::Asystole,
        label: false,
        fs: 250.0,
        channels: ChannelKind::CANONICAL[..n_channels].to_vec(),
        n_samples,
    };
    if let Ok(rows) = decode_signal(&header, &data[3..]) {
        assert_eq!(rows.len(), n_channels);
        assert!(rows.iter().all(|r| r.len() == n_samples && r.iter().all(|v| v.is_finite())));
        let bytes: Vec<u8> = rows.iter().flatten().flat_map(|v| v.to_le_bytes()).collect();
        assert_eq!(bytes, &data[3..]);
    }
});
