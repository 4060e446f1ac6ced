//! Record data model, dataset filtering and class weighting.
//!
//! A [`Record`] is one alarm event: a fixed-rate multi-channel waveform plus
//! the alarm type and the annotator's true/false verdict. Samples are kept as
//! `f32`, the on-disk precision, so a write/load cycle is bit-exact.

mod io;
mod synth;

use std::collections::BTreeMap;
use std::fmt;

use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use io::{
    decode_signal, encode_signal, load_dataset, load_record, parse_header, write_dataset,
    write_record, RecordHeader, HEADER_FILE, SIGNAL_FILE,
};
pub use synth::{synth_dataset, synth_ecg, synth_record, SynthSpec, SynthTruth};

/// Arrhythmia category that triggered the alarm.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum AlarmType {
    #[serde(rename = "VFIB_FLUTTER")]
    VfibFlutter,
    #[serde(rename = "ASYSTOLE")]
    Asystole,
    #[serde(rename = "TACHYCARDIA")]
    Tachycardia,
    #[serde(rename = "BRADYCARDIA")]
    Bradycardia,
    #[serde(rename = "VFIB")]
    Vfib,
}

impl AlarmType {
    pub const ALL: [AlarmType; 5] = [
        AlarmType::VfibFlutter,
        AlarmType::Asystole,
        AlarmType::Tachycardia,
        AlarmType::Bradycardia,
        AlarmType::Vfib,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            AlarmType::VfibFlutter => "VFIB_FLUTTER",
            AlarmType::Asystole => "ASYSTOLE",
            AlarmType::Tachycardia => "TACHYCARDIA",
            AlarmType::Bradycardia => "BRADYCARDIA",
            AlarmType::Vfib => "VFIB",
        }
    }
}

impl fmt::Display for AlarmType {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// Signal channel kind. [`ChannelKind::CANONICAL`] is the order used everywhere
/// a full four-channel tensor is assembled.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub enum ChannelKind {
    #[serde(rename = "ECG_II")]
    EcgII,
    #[serde(rename = "ECG_V")]
    EcgV,
    #[serde(rename = "PLETH")]
    Pleth,
    #[serde(rename = "RESP")]
    Resp,
}

impl ChannelKind {
    pub const CANONICAL: [ChannelKind; 4] = [
        ChannelKind::EcgII,
        ChannelKind::EcgV,
        ChannelKind::Pleth,
        ChannelKind::Resp,
    ];

    pub fn as_str(self) -> &'static str {
        match self {
            ChannelKind::EcgII => "ECG_II",
            ChannelKind::EcgV => "ECG_V",
            ChannelKind::Pleth => "PLETH",
            ChannelKind::Resp => "RESP",
        }
    }

    /// Lower-case identifier used in file names and feature names.
    pub fn slug(self) -> &'static str {
        match self {
            ChannelKind::EcgII => "ecg_ii",
            ChannelKind::EcgV => "ecg_v",
            ChannelKind::Pleth => "pleth",
            ChannelKind::Resp => "resp",
        }
    }

    pub fn from_slug(s: &str) -> Option<ChannelKind> {
        ChannelKind::CANONICAL
            .into_iter()
            .find(|c| c.slug() == s || c.as_str() == s)
    }
}

impl fmt::Display for ChannelKind {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.write_str(self.as_str())
    }
}

/// One alarm event. Construct through [`Record::new`], which enforces the
/// invariants: `fs > 0`, unique channels, equal-length finite rows.
#[derive(Debug, Clone, PartialEq)]
pub struct Record {
    record_id: String,
    alarm_type: AlarmType,
    label: bool,
    fs: f64,
    channels: Vec<ChannelKind>,
    samples: Vec<Vec<f32>>,
}

impl Record {
    pub fn new(
        record_id: impl Into<String>,
        alarm_type: AlarmType,
        label: bool,
        fs: f64,
        channels: Vec<ChannelKind>,
        samples: Vec<Vec<f32>>,
    ) -> Result<Self> {
        let record_id = record_id.into();
        if record_id.is_empty() {
            return Err(Error::InvalidRecord("empty record id".into()));
        }
        if !(fs.is_finite() && fs > 0.0) {
            return Err(Error::InvalidRecord(format!("sampling rate {fs} must be > 0")));
        }
        if channels.is_empty() {
            return Err(Error::InvalidRecord("record has no channels".into()));
        }
        for (i, c) in channels.iter().enumerate() {
            if channels[..i].contains(c) {
                return Err(Error::InvalidRecord(format!("duplicate channel {c}")));
            }
        }
        if samples.len() != channels.len() {
            return Err(Error::ChannelCountMismatch {
                declared: channels.len(),
                found: samples.len(),
            });
        }
        let n = samples[0].len();
        if n == 0 {
            return Err(Error::InvalidRecord("record has no samples".into()));
        }
        for (ch, row) in samples.iter().enumerate() {
            if row.len() != n {
                return Err(Error::InvalidRecord(format!(
                    "channel {ch} has {} samples, channel 0 has {n}",
                    row.len()
                )));
            }
            if let Some(index) = row.iter().position(|v| !v.is_finite()) {
                return Err(Error::NonFiniteSample { channel: ch, index });
            }
        }
        Ok(Record {
            record_id,
            alarm_type,
            label,
            fs,
            channels,
            samples,
        })
    }

    pub fn record_id(&self) -> &str {
        &self.record_id
    }

    pub fn alarm_type(&self) -> AlarmType {
        self.alarm_type
    }

    pub fn label(&self) -> bool {
        self.label
    }

    pub fn fs(&self) -> f64 {
        self.fs
    }

    pub fn channels(&self) -> &[ChannelKind] {
        &self.channels
    }

    pub fn samples(&self) -> &[Vec<f32>] {
        &self.samples
    }

    /// Samples per channel.
    pub fn len(&self) -> usize {
        self.samples[0].len()
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn channel(&self, kind: ChannelKind) -> Option<&[f32]> {
        self.channels
            .iter()
            .position(|&c| c == kind)
            .map(|i| self.samples[i].as_slice())
    }

    /// Channel widened to `f64` for processing.
    pub fn channel_f64(&self, kind: ChannelKind) -> Option<Vec<f64>> {
        self.channel(kind)
            .map(|row| row.iter().map(|&v| f64::from(v)).collect())
    }

    pub fn has_all_channels(&self) -> bool {
        ChannelKind::CANONICAL
            .iter()
            .all(|c| self.channels.contains(c))
    }

    /// Copy of the record restricted to samples `range` of every channel.
    pub(crate) fn slice(&self, start: usize, end: usize) -> Record {
        Record {
            record_id: self.record_id.clone(),
            alarm_type: self.alarm_type,
            label: self.label,
            fs: self.fs,
            channels: self.channels.clone(),
            samples: self.samples.iter().map(|r| r[start..end].to_vec()).collect(),
        }
    }

    /// Same signal with a different label; used by shuffled-label controls.
    pub fn with_label(&self, label: bool) -> Record {
        Record {
            label,
            ..self.clone()
        }
    }
}

/// Returns the last `seconds · fs` samples of every channel.
pub fn tail_window(record: &Record, seconds: f64) -> Result<Record> {
    if !(seconds.is_finite() && seconds > 0.0) {
        return Err(Error::InvalidArgument(format!(
            "window length {seconds} s must be positive"
        )));
    }
    let need = (seconds * record.fs).round() as usize;
    let have = record.len();
    if need == 0 || need > have {
        return Err(Error::WindowTooLong {
            id: record.record_id.clone(),
            have,
            need,
        });
    }
    Ok(record.slice(have - need, have))
}

#[derive(Debug, Clone, Copy, Default, PartialEq, Eq, Serialize, Deserialize)]
pub struct ClassCounts {
    pub n_true: usize,
    pub n_false: usize,
}

impl ClassCounts {
    pub fn total(&self) -> usize {
        self.n_true + self.n_false
    }
}

/// Per-(alarm type, label) composition of a dataset.
#[derive(Debug, Clone, Default, PartialEq, Serialize, Deserialize)]
pub struct DatasetSummary {
    pub counts: BTreeMap<AlarmType, ClassCounts>,
    pub total: usize,
    pub true_ratio: f64,
}

impl DatasetSummary {
    pub fn from_pairs(pairs: impl IntoIterator<Item = (AlarmType, bool)>) -> Self {
        let mut counts: BTreeMap<AlarmType, ClassCounts> = BTreeMap::new();
        let mut total = 0;
        let mut n_true = 0;
        for (alarm, label) in pairs {
            let entry = counts.entry(alarm).or_default();
            if label {
                entry.n_true += 1;
                n_true += 1;
            } else {
                entry.n_false += 1;
            }
            total += 1;
        }
        let true_ratio = if total == 0 {
            0.0
        } else {
            n_true as f64 / total as f64
        };
        DatasetSummary {
            counts,
            total,
            true_ratio,
        }
    }

    pub fn of(records: &[Record]) -> Self {
        Self::from_pairs(records.iter().map(|r| (r.alarm_type, r.label)))
    }

    pub fn n_true(&self) -> usize {
        self.counts.values().map(|c| c.n_true).sum()
    }
}

#[derive(Debug, Clone)]
pub struct FilterOutcome {
    pub retained: Vec<Record>,
    pub before: DatasetSummary,
    pub after: DatasetSummary,
}

/// Keeps the records carrying all four channel kinds.
pub fn filter_four_channel(records: &[Record]) -> FilterOutcome {
    let retained: Vec<Record> = records
        .iter()
        .filter(|r| r.has_all_channels())
        .cloned()
        .collect();
    FilterOutcome {
        before: DatasetSummary::of(records),
        after: DatasetSummary::of(&retained),
        retained,
    }
}

/// Inverse-frequency class weights, `w_c = N / (2 · N_c)`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ClassWeights {
    pub w_true: f64,
    pub w_false: f64,
}

impl ClassWeights {
    pub fn weight(&self, label: bool) -> f64 {
        if label {
            self.w_true
        } else {
            self.w_false
        }
    }
}

pub fn class_weights(labels: &[bool]) -> Result<ClassWeights> {
    let n = labels.len();
    let n_true = labels.iter().filter(|&&l| l).count();
    let n_false = n - n_true;
    if n_true == 0 || n_false == 0 {
        return Err(Error::SingleClass);
    }
    Ok(ClassWeights {
        w_true: n as f64 / (2.0 * n_true as f64),
        w_false: n as f64 / (2.0 * n_false as f64),
    })
}
