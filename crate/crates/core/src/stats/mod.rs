//! Evaluation statistics: AUC, clinical metrics, stratified splits, the
//! DeLong paired test, bootstrap intervals and error reports.

mod delong;
mod report;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::{Error, Result};

pub use delong::{bootstrap_auc_diff, delong_test, normal_two_sided_p, BootstrapCI, DelongResult};
pub use report::{error_report, per_alarm_report, AlarmRow, ErrorReport, FoldAuc, Report};

/// z value for a two-sided 95% normal interval.
pub const Z95: f64 = 1.96;

fn check_scores(scores: &[f64], labels: &[bool]) -> Result<(usize, usize)> {
    if scores.len() != labels.len() {
        return Err(Error::ShapeMismatch(format!(
            "{} scores vs {} labels",
            scores.len(),
            labels.len()
        )));
    }
    if scores.iter().any(|s| s.is_nan()) {
        return Err(Error::InvalidArgument("NaN score".into()));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let neg = labels.len() - pos;
    if pos == 0 || neg == 0 {
        return Err(Error::SingleClass);
    }
    Ok((pos, neg))
}

/// 1-based midranks of `values`; tied values share the mean of their ranks.
pub(crate) fn midranks(values: &[f64]) -> Vec<f64> {
    let mut order: Vec<usize> = (0..values.len()).collect();
    order.sort_by(|&a, &b| values[a].total_cmp(&values[b]));
    let mut ranks = vec![0.0; values.len()];
    let mut i = 0;
    while i < order.len() {
        let mut j = i;
        while j + 1 < order.len() && values[order[j + 1]] == values[order[i]] {
            j += 1;
        }
        // Ranks i+1..=j+1 averaged.
        let r = (i + j + 2) as f64 / 2.0;
        for &k in &order[i..=j] {
            ranks[k] = r;
        }
        i = j + 1;
    }
    ranks
}

/// Mann–Whitney AUC; a positive/negative tie counts one half.
pub fn auc(scores: &[f64], labels: &[bool]) -> Result<f64> {
    let (pos, neg) = check_scores(scores, labels)?;
    let ranks = midranks(scores);
    let rank_sum: f64 = ranks.iter().zip(labels).filter(|(_, &l)| l).map(|(r, _)| r).sum();
    let u = rank_sum - (pos * (pos + 1)) as f64 / 2.0;
    Ok(u / (pos as f64 * neg as f64))
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Default, Serialize, Deserialize)]
pub struct Confusion {
    pub tp: usize,
    pub tn: usize,
    pub fp: usize,
    #[serde(rename = "fn")]
    pub fn_: usize,
}

impl Confusion {
    /// Counts at `threshold`: predicted true when `p >= threshold`.
    pub fn from_probs(probs: &[f64], labels: &[bool], threshold: f64) -> Confusion {
        let mut c = Confusion::default();
        for (&p, &l) in probs.iter().zip(labels) {
            match (l, p >= threshold) {
                (true, true) => c.tp += 1,
                (true, false) => c.fn_ += 1,
                (false, true) => c.fp += 1,
                (false, false) => c.tn += 1,
            }
        }
        c
    }

    pub fn positives(&self) -> usize {
        self.tp + self.fn_
    }

    pub fn negatives(&self) -> usize {
        self.tn + self.fp
    }

    pub fn total(&self) -> usize {
        self.positives() + self.negatives()
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct MetricsReport {
    pub sensitivity: f64,
    pub specificity: f64,
    pub precision: f64,
    pub f1: f64,
    pub npv: f64,
    pub accuracy: f64,
    pub auc: Option<f64>,
    /// Metrics whose denominator was zero and were set to 0.
    #[serde(default, skip_serializing_if = "Vec::is_empty")]
    pub degenerate: Vec<String>,
}

/// Closed-form clinical metrics. Zero denominators give 0 and a flag.
pub fn confusion_metrics(c: &Confusion) -> MetricsReport {
    let mut degenerate = Vec::new();
    let mut ratio = |name: &str, num: usize, den: usize| {
        if den == 0 {
            degenerate.push(name.to_owned());
            0.0
        } else {
            num as f64 / den as f64
        }
    };
    let sensitivity = ratio("sensitivity", c.tp, c.tp + c.fn_);
    let specificity = ratio("specificity", c.tn, c.tn + c.fp);
    let precision = ratio("precision", c.tp, c.tp + c.fp);
    let npv = ratio("npv", c.tn, c.tn + c.fn_);
    let accuracy = ratio("accuracy", c.tp + c.tn, c.total());
    let f1 = if precision + sensitivity > 0.0 {
        2.0 * precision * sensitivity / (precision + sensitivity)
    } else {
        degenerate.push("f1".to_owned());
        0.0
    };
    MetricsReport {
        sensitivity,
        specificity,
        precision,
        f1,
        npv,
        accuracy,
        auc: None,
        degenerate,
    }
}

#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct FoldAssignment {
    pub k: usize,
    pub seed: u64,
    /// Fold index of each record, in input order.
    pub folds: Vec<usize>,
}

impl FoldAssignment {
    pub fn members(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] == fold).collect()
    }

    pub fn complement(&self, fold: usize) -> Vec<usize> {
        (0..self.folds.len()).filter(|&i| self.folds[i] != fold).collect()
    }

    pub fn by_record<'a>(&self, ids: impl IntoIterator<Item = &'a str>) -> std::collections::BTreeMap<String, usize> {
        ids.into_iter().map(str::to_owned).zip(self.folds.iter().copied()).collect()
    }
}

fn class_indices(labels: &[bool], seed: u64) -> [Vec<usize>; 2] {
    [true, false].map(|class| {
        let mut idx: Vec<usize> = (0..labels.len()).filter(|&i| labels[i] == class).collect();
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        rng.set_stream(u64::from(class) + 1);
        idx.shuffle(&mut rng);
        idx
    })
}

/// Seeded shuffle within each class, then round-robin dealing with one
/// counter running across both classes.
pub fn stratified_kfold(labels: &[bool], k: usize, seed: u64) -> Result<FoldAssignment> {
    if k < 2 {
        return Err(Error::InvalidArgument(format!("k = {k}, need k >= 2")));
    }
    let pos = labels.iter().filter(|&&l| l).count();
    let smallest = pos.min(labels.len() - pos);
    if smallest < k {
        return Err(Error::InvalidArgument(format!(
            "k = {k} too large: smallest class has {smallest} records"
        )));
    }
    let mut folds = vec![0; labels.len()];
    let mut counter = 0;
    for class in class_indices(labels, seed) {
        for i in class {
            folds[i] = counter % k;
            counter += 1;
        }
    }
    Ok(FoldAssignment { k, seed, folds })
}

/// Stratified split into parts with the given fractions. Each class is
/// shuffled and cut in order; the last part takes the remainder.
pub fn stratified_split(labels: &[bool], fractions: &[f64], seed: u64) -> Result<Vec<Vec<usize>>> {
    if fractions.is_empty() || fractions.iter().any(|f| !(0.0..=1.0).contains(f)) {
        return Err(Error::InvalidArgument("split fractions must lie in [0, 1]".into()));
    }
    let total: f64 = fractions.iter().sum();
    if (total - 1.0).abs() > 1e-9 {
        return Err(Error::InvalidArgument(format!("split fractions sum to {total}")));
    }
    let mut parts = vec![Vec::new(); fractions.len()];
    for class in class_indices(labels, seed) {
        let n = class.len();
        let mut start = 0;
        let mut acc = 0.0;
        for (p, f) in fractions.iter().enumerate() {
            acc += f;
            let end = if p + 1 == fractions.len() {
                n
            } else {
                ((acc * n as f64).round() as usize).min(n)
            };
            parts[p].extend_from_slice(&class[start..end.max(start)]);
            start = end.max(start);
        }
    }
    for p in &mut parts {
        p.sort_unstable();
    }
    Ok(parts)
}

/// Summary of per-fold AUCs. `std` is the population standard deviation and
/// `ci95` is `mean ± 1.96·std`; the sample deviation is kept for reference.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldSummary {
    pub mean: f64,
    pub std: f64,
    pub sample_std: f64,
    pub ci95: [f64; 2],
}

pub fn fold_summary(aucs: &[f64]) -> Result<FoldSummary> {
    if aucs.is_empty() {
        return Err(Error::InvalidArgument("no fold AUCs".into()));
    }
    let k = aucs.len() as f64;
    let mean = aucs.iter().sum::<f64>() / k;
    let ss = aucs.iter().map(|a| (a - mean) * (a - mean)).sum::<f64>();
    let std = (ss / k).sqrt();
    let sample_std = if aucs.len() > 1 { (ss / (k - 1.0)).sqrt() } else { 0.0 };
    Ok(FoldSummary {
        mean,
        std,
        sample_std,
        ci95: [mean - Z95 * std, mean + Z95 * std],
    })
}

/// Linear-interpolated quantile of sorted data, `q` in [0, 1].
pub(crate) fn quantile_sorted(sorted: &[f64], q: f64) -> f64 {
    let pos = q * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    sorted[lo] + (pos - lo as f64) * (sorted[hi] - sorted[lo])
}
