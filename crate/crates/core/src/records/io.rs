//! On-disk record layout: `<id>/header.json` plus `<id>/signal.f32`, the
//! latter holding little-endian `f32` values, channel-major.

use std::fs;
use std::path::Path;

use serde::{Deserialize, Serialize};

use super::{AlarmType, ChannelKind, Record};
use crate::{Error, Result};

pub const HEADER_FILE: &str = "header.json";
pub const SIGNAL_FILE: &str = "signal.f32";

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RecordHeader {
    pub record_id: String,
    pub alarm_type: AlarmType,
    pub label: bool,
    pub fs: f64,
    pub channels: Vec<ChannelKind>,
    pub n_samples: usize,
}

impl RecordHeader {
    pub fn of(record: &Record) -> Self {
        RecordHeader {
            record_id: record.record_id().to_owned(),
            alarm_type: record.alarm_type(),
            label: record.label(),
            fs: record.fs(),
            channels: record.channels().to_vec(),
            n_samples: record.len(),
        }
    }
}

/// Parses and sanity-checks a header. Does not look at the signal file.
pub fn parse_header(bytes: &[u8]) -> Result<RecordHeader> {
    let header: RecordHeader =
        serde_json::from_slice(bytes).map_err(|e| Error::Header(e.to_string()))?;
    if header.record_id.is_empty() {
        return Err(Error::Header("empty record_id".into()));
    }
    if !(header.fs.is_finite() && header.fs > 0.0) {
        return Err(Error::Header(format!("fs {} must be > 0", header.fs)));
    }
    if header.channels.is_empty() {
        return Err(Error::Header("no channels".into()));
    }
    for (i, c) in header.channels.iter().enumerate() {
        if header.channels[..i].contains(c) {
            return Err(Error::Header(format!("duplicate channel {c}")));
        }
    }
    if header.n_samples == 0 {
        return Err(Error::Header("n_samples must be > 0".into()));
    }
    if header
        .channels
        .len()
        .checked_mul(header.n_samples)
        .and_then(|v| v.checked_mul(4))
        .is_none()
    {
        return Err(Error::Header("n_samples overflows".into()));
    }
    Ok(header)
}

/// Decodes a channel-major `f32` blob against its header.
pub fn decode_signal(header: &RecordHeader, bytes: &[u8]) -> Result<Vec<Vec<f32>>> {
    let n = header.n_samples;
    let declared = header.channels.len();
    let expected = declared
        .checked_mul(n)
        .ok_or_else(|| Error::Header("n_samples overflows".into()))?;
    if !bytes.len().is_multiple_of(4) {
        return Err(Error::SampleCountMismatch {
            expected,
            found: bytes.len() / 4,
        });
    }
    let found = bytes.len() / 4;
    if found != expected {
        if n > 0 && found.is_multiple_of(n) {
            return Err(Error::ChannelCountMismatch {
                declared,
                found: found / n,
            });
        }
        return Err(Error::SampleCountMismatch { expected, found });
    }
    let mut rows = Vec::with_capacity(declared);
    for (ch, block) in bytes.chunks_exact(4 * n).enumerate() {
        let row: Vec<f32> = block
            .chunks_exact(4)
            .map(|b| f32::from_le_bytes([b[0], b[1], b[2], b[3]]))
            .collect();
        if let Some(index) = row.iter().position(|v| !v.is_finite()) {
            return Err(Error::NonFiniteSample { channel: ch, index });
        }
        rows.push(row);
    }
    Ok(rows)
}

pub fn encode_signal(record: &Record) -> Vec<u8> {
    let mut out = Vec::with_capacity(record.channels().len() * record.len() * 4);
    for row in record.samples() {
        for v in row {
            out.extend_from_slice(&v.to_le_bytes());
        }
    }
    out
}

/// Loads a record from its directory.
pub fn load_record(dir: impl AsRef<Path>) -> Result<Record> {
    let dir = dir.as_ref();
    let header_path = dir.join(HEADER_FILE);
    let header_bytes = fs::read(&header_path).map_err(|e| Error::io(&header_path, e))?;
    let header = parse_header(&header_bytes)?;
    let signal_path = dir.join(SIGNAL_FILE);
    let signal_bytes = fs::read(&signal_path).map_err(|e| Error::io(&signal_path, e))?;
    let samples = decode_signal(&header, &signal_bytes)?;
    Record::new(
        header.record_id,
        header.alarm_type,
        header.label,
        header.fs,
        header.channels,
        samples,
    )
}

/// Writes `record` into `dir` (created if missing).
pub fn write_record(record: &Record, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))?;
    let header = serde_json::to_vec_pretty(&RecordHeader::of(record))?;
    let header_path = dir.join(HEADER_FILE);
    fs::write(&header_path, header).map_err(|e| Error::io(&header_path, e))?;
    let signal_path = dir.join(SIGNAL_FILE);
    fs::write(&signal_path, encode_signal(record)).map_err(|e| Error::io(&signal_path, e))
}

fn check_dir_name(id: &str) -> Result<()> {
    if id == "." || id == ".." || id.contains(['/', '\\']) {
        return Err(Error::InvalidRecord(format!(
            "record id {id:?} is not usable as a directory name"
        )));
    }
    Ok(())
}

/// Writes each record to `root/<record_id>/`.
pub fn write_dataset(records: &[Record], root: impl AsRef<Path>) -> Result<()> {
    let root = root.as_ref();
    for r in records {
        check_dir_name(r.record_id())?;
        write_record(r, root.join(r.record_id()))?;
    }
    Ok(())
}

/// Loads every record directory under `root`, sorted by directory name.
pub fn load_dataset(root: impl AsRef<Path>) -> Result<Vec<Record>> {
    let root = root.as_ref();
    let mut dirs = Vec::new();
    for entry in fs::read_dir(root).map_err(|e| Error::io(root, e))? {
        let entry = entry.map_err(|e| Error::io(root, e))?;
        let path = entry.path();
        if path.join(HEADER_FILE).is_file() {
            dirs.push(path);
        }
    }
    dirs.sort();
    dirs.iter().map(load_record).collect()
}
