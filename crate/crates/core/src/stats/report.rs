//! Per-alarm breakdown, error lists and the run report document.

use serde::{Deserialize, Serialize};

use super::{auc, BootstrapCI, Confusion, DelongResult, MetricsReport};
use crate::records::AlarmType;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AlarmRow {
    #[serde(rename = "type")]
    pub alarm_type: AlarmType,
    pub n: usize,
    /// Absent when the type has a single class.
    pub auc: Option<f64>,
    pub accuracy: f64,
    #[serde(default)]
    pub single_class: bool,
}

/// One row per alarm type present, in type order. Accuracy at 0.5.
pub fn per_alarm_report(probs: &[f64], labels: &[bool], types: &[AlarmType]) -> Vec<AlarmRow> {
    AlarmType::ALL
        .iter()
        .filter_map(|&t| {
            let idx: Vec<usize> = (0..types.len()).filter(|&i| types[i] == t).collect();
            if idx.is_empty() {
                return None;
            }
            let p: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
            let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
            let correct = p.iter().zip(&l).filter(|(&p, &l)| (p >= 0.5) == l).count();
            let a = auc(&p, &l).ok();
            Some(AlarmRow {
                alarm_type: t,
                n: idx.len(),
                auc: a,
                accuracy: correct as f64 / idx.len() as f64,
                single_class: a.is_none(),
            })
        })
        .collect()
}

#[derive(Debug, Clone, PartialEq, Default, Serialize, Deserialize)]
pub struct ErrorReport {
    #[serde(rename = "fn")]
    pub false_negatives: Vec<String>,
    #[serde(rename = "fp")]
    pub false_positives: Vec<String>,
    pub high_confidence: Vec<String>,
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub per_alarm: Vec<AlarmRow>,
}

impl ErrorReport {
    pub fn total_errors(&self) -> usize {
        self.false_negatives.len() + self.false_positives.len()
    }
}

/// False negatives are true alarms with `p < 0.5`, false positives are false
/// alarms with `p >= 0.5`; an error is high-confidence when
/// `max(p, 1 - p) > confidence_threshold`.
pub fn error_report(ids: &[String], probs: &[f64], labels: &[bool], confidence_threshold: f64) -> ErrorReport {
    let mut r = ErrorReport::default();
    for ((id, &p), &l) in ids.iter().zip(probs).zip(labels) {
        let wrong = match (l, p >= 0.5) {
            (true, false) => {
                r.false_negatives.push(id.clone());
                true
            }
            (false, true) => {
                r.false_positives.push(id.clone());
                true
            }
            _ => false,
        };
        if wrong && p.max(1.0 - p) > confidence_threshold {
            r.high_confidence.push(id.clone());
        }
    }
    r
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldAuc {
    pub fold: usize,
    pub auc: f64,
}

/// The per-run report. Field order is the serialization order.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Report {
    pub run_id: String,
    pub config: serde_json::Value,
    pub folds: Vec<FoldAuc>,
    pub mean_auc: f64,
    /// Population standard deviation over folds.
    pub std_auc: f64,
    pub ci95: [f64; 2],
    pub confusion: Confusion,
    pub metrics: MetricsReport,
    pub per_alarm: Vec<AlarmRow>,
    pub errors: ErrorReport,
    pub delong: Option<DelongResult>,
    pub bootstrap: Option<BootstrapCI>,
    pub seed: u64,
    pub experiment: String,
    pub sample_std_auc: f64,
    /// AUC of the concatenated out-of-fold predictions.
    pub pooled_auc: f64,
    pub split_lineage: String,
}
