//! Run directories and the CSV/JSON plot data derived from them.
//!
//! A k-fold run directory holds `report.json`, `histories.json`,
//! `folds.json` and `predictions.csv`. Sweep and ablation runs write
//! `sweep.json` and `ablation.json`. [`emit_report`] reads whatever is
//! present and writes plot data under `plots/`.

use std::fs;
use std::path::{Path, PathBuf};

use serde::{Deserialize, Serialize};

use super::{AblationTable, FoldHistory, RunOutput, SweepTable};
use crate::stats::{auc, fold_summary, FoldAssignment, Report};
use crate::{Error, Result};

pub const REPORT_FILE: &str = "report.json";
pub const HISTORY_FILE: &str = "histories.json";
pub const FOLDS_FILE: &str = "folds.json";
pub const PREDICTIONS_FILE: &str = "predictions.csv";
pub const SWEEP_FILE: &str = "sweep.json";
pub const ABLATION_FILE: &str = "ablation.json";
pub const PLOTS_DIR: &str = "plots";

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ReportFormat {
    Json,
    Csv,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
struct PredictionRow {
    record_id: String,
    label: bool,
    fold: usize,
    p_true: f64,
    p_baseline: Option<f64>,
}

fn write_bytes(path: &Path, bytes: &[u8]) -> Result<()> {
    fs::write(path, bytes).map_err(|e| Error::io(path, e))
}

fn write_json<T: Serialize>(path: &Path, value: &T) -> Result<()> {
    let mut bytes = serde_json::to_vec_pretty(value)?;
    bytes.push(b'\n');
    write_bytes(path, &bytes)
}

fn read_json<T: for<'de> Deserialize<'de>>(path: &Path) -> Result<T> {
    let bytes = fs::read(path).map_err(|e| Error::io(path, e))?;
    Ok(serde_json::from_slice(&bytes)?)
}

fn create_dir(dir: &Path) -> Result<()> {
    fs::create_dir_all(dir).map_err(|e| Error::io(dir, e))
}

/// Writes the k-fold run directory.
pub fn write_run(out: &RunOutput, dir: impl AsRef<Path>) -> Result<()> {
    let dir = dir.as_ref();
    create_dir(dir)?;
    write_json(&dir.join(REPORT_FILE), &out.report)?;
    write_json(&dir.join(HISTORY_FILE), &out.histories)?;
    write_json(&dir.join(FOLDS_FILE), &out.assignment)?;
    let mut w = csv::Writer::from_writer(Vec::new());
    for i in 0..out.oof.len() {
        w.serialize(PredictionRow {
            record_id: out.record_ids[i].clone(),
            label: out.labels[i],
            fold: out.assignment.folds[i],
            p_true: out.oof[i],
            p_baseline: out.baseline_oof.as_ref().map(|b| b[i]),
        })?;
    }
    let bytes = w.into_inner().map_err(|e| Error::io(dir.join(PREDICTIONS_FILE), e.into_error()))?;
    write_bytes(&dir.join(PREDICTIONS_FILE), &bytes)
}

pub fn write_sweep(table: &SweepTable, dir: impl AsRef<Path>) -> Result<()> {
    create_dir(dir.as_ref())?;
    write_json(&dir.as_ref().join(SWEEP_FILE), table)
}

pub fn write_ablation(table: &AblationTable, dir: impl AsRef<Path>) -> Result<()> {
    create_dir(dir.as_ref())?;
    write_json(&dir.as_ref().join(ABLATION_FILE), table)
}

/// Everything [`emit_report`] could find in a run directory.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunSummary {
    #[serde(skip_serializing_if = "Option::is_none")]
    pub report: Option<Report>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub sweep: Option<SweepTable>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub ablation: Option<AblationTable>,
}

struct KfoldRun {
    report: Report,
    histories: Vec<FoldHistory>,
    predictions: Vec<PredictionRow>,
}

fn load_kfold(dir: &Path) -> Result<Option<KfoldRun>> {
    let report_path = dir.join(REPORT_FILE);
    if !report_path.exists() {
        return Ok(None);
    }
    let missing = |f: &str| Error::IncompleteRun(format!("{} has {REPORT_FILE} but no {f}", dir.display()));
    for f in [HISTORY_FILE, FOLDS_FILE, PREDICTIONS_FILE] {
        if !dir.join(f).exists() {
            return Err(missing(f));
        }
    }
    let report: Report = read_json(&report_path)?;
    let histories: Vec<FoldHistory> = read_json(&dir.join(HISTORY_FILE))?;
    let _: FoldAssignment = read_json(&dir.join(FOLDS_FILE))?;
    let path = dir.join(PREDICTIONS_FILE);
    let bytes = fs::read(&path).map_err(|e| Error::io(&path, e))?;
    let predictions = csv::Reader::from_reader(bytes.as_slice())
        .deserialize()
        .collect::<std::result::Result<Vec<PredictionRow>, _>>()?;
    if predictions.len() != report.confusion.total() {
        return Err(Error::IncompleteRun(format!(
            "{PREDICTIONS_FILE} has {} rows, report covers {}",
            predictions.len(),
            report.confusion.total()
        )));
    }
    Ok(Some(KfoldRun {
        report,
        histories,
        predictions,
    }))
}

fn load_optional<T: for<'de> Deserialize<'de>>(path: PathBuf) -> Result<Option<T>> {
    if path.exists() {
        read_json(&path).map(Some)
    } else {
        Ok(None)
    }
}

fn csv_bytes<T: Serialize>(rows: &[T]) -> Result<Vec<u8>> {
    let mut w = csv::Writer::from_writer(Vec::new());
    for r in rows {
        w.serialize(r)?;
    }
    w.into_inner().map_err(|e| Error::io(PLOTS_DIR, e.into_error()))
}

#[derive(Serialize)]
struct ComparisonRow<'a> {
    experiment: &'a str,
    mean_auc: f64,
    std_auc: f64,
    ci_lo: Option<f64>,
    ci_hi: Option<f64>,
    pooled_auc: f64,
}

#[derive(Serialize)]
struct FoldRow<'a> {
    experiment: &'a str,
    fold: usize,
    auc: f64,
}

#[derive(Serialize)]
struct AblationCsvRow<'a> {
    grid: &'a str,
    condition: &'a str,
    description: &'a str,
    mean_auc: f64,
    std_auc: f64,
}

#[derive(Serialize)]
struct AlarmCsvRow<'a> {
    alarm_type: &'a str,
    n: usize,
    auc: Option<f64>,
    accuracy: f64,
    single_class: bool,
}

#[derive(Serialize)]
struct ErrorCsvRow<'a> {
    category: &'a str,
    record_id: &'a str,
}

#[derive(Serialize)]
struct CurveRow {
    fold: usize,
    epoch: usize,
    train_loss: f64,
    val_auc: f64,
    max_grad_norm: f64,
}

#[derive(Serialize)]
struct WinnerCsvRow<'a> {
    parameter: &'a str,
    values_tested: String,
    winner: f64,
    val_auc: f64,
}

/// Writes plot data for a completed run directory into `plots/` and returns
/// the files written, in a fixed order.
pub fn emit_report(dir: impl AsRef<Path>, format: ReportFormat) -> Result<Vec<PathBuf>> {
    let dir = dir.as_ref();
    if !dir.is_dir() {
        return Err(Error::IncompleteRun(format!("{} is not a directory", dir.display())));
    }
    let kfold = load_kfold(dir)?;
    let sweep: Option<SweepTable> = load_optional(dir.join(SWEEP_FILE))?;
    let ablation: Option<AblationTable> = load_optional(dir.join(ABLATION_FILE))?;
    if kfold.is_none() && sweep.is_none() && ablation.is_none() {
        return Err(Error::IncompleteRun(format!(
            "{} holds no {REPORT_FILE}, {SWEEP_FILE} or {ABLATION_FILE}",
            dir.display()
        )));
    }
    let plots = dir.join(PLOTS_DIR);
    create_dir(&plots)?;
    let mut written = Vec::new();
    let mut put = |name: &str, bytes: Vec<u8>| -> Result<()> {
        let p = plots.join(name);
        write_bytes(&p, &bytes)?;
        written.push(p);
        Ok(())
    };

    if format == ReportFormat::Json {
        let summary = RunSummary {
            report: kfold.map(|k| k.report),
            sweep,
            ablation,
        };
        let mut bytes = serde_json::to_vec_pretty(&summary)?;
        bytes.push(b'\n');
        put("summary.json", bytes)?;
        return Ok(written);
    }

    if let Some(k) = &kfold {
        let r = &k.report;
        let mut comparison = vec![ComparisonRow {
            experiment: &r.experiment,
            mean_auc: r.mean_auc,
            std_auc: r.std_auc,
            ci_lo: Some(r.ci95[0]),
            ci_hi: Some(r.ci95[1]),
            pooled_auc: r.pooled_auc,
        }];
        let mut folds: Vec<FoldRow> = r
            .folds
            .iter()
            .map(|f| FoldRow {
                experiment: &r.experiment,
                fold: f.fold,
                auc: f.auc,
            })
            .collect();
        let baseline_name = r.config["baseline"].as_str().unwrap_or("baseline").to_owned();
        let has_baseline = k.predictions.iter().all(|p| p.p_baseline.is_some()) && !k.predictions.is_empty();
        let mut baseline_folds = Vec::new();
        if has_baseline {
            let probs: Vec<f64> = k.predictions.iter().map(|p| p.p_baseline.expect("checked")).collect();
            let labels: Vec<bool> = k.predictions.iter().map(|p| p.label).collect();
            for f in 0..r.folds.len() {
                let idx: Vec<usize> = (0..probs.len()).filter(|&i| k.predictions[i].fold == f).collect();
                let p: Vec<f64> = idx.iter().map(|&i| probs[i]).collect();
                let l: Vec<bool> = idx.iter().map(|&i| labels[i]).collect();
                baseline_folds.push(auc(&p, &l)?);
            }
            let s = fold_summary(&baseline_folds)?;
            comparison.insert(
                0,
                ComparisonRow {
                    experiment: &baseline_name,
                    mean_auc: s.mean,
                    std_auc: s.std,
                    ci_lo: Some(s.ci95[0]),
                    ci_hi: Some(s.ci95[1]),
                    pooled_auc: auc(&probs, &labels)?,
                },
            );
            folds.extend(baseline_folds.iter().enumerate().map(|(fold, &auc)| FoldRow {
                experiment: &baseline_name,
                fold,
                auc,
            }));
        }
        put("experiment_comparison.csv", csv_bytes(&comparison)?)?;
        put("per_fold.csv", csv_bytes(&folds)?)?;
        let alarms: Vec<AlarmCsvRow> = r
            .per_alarm
            .iter()
            .map(|a| AlarmCsvRow {
                alarm_type: a.alarm_type.as_str(),
                n: a.n,
                auc: a.auc,
                accuracy: a.accuracy,
                single_class: a.single_class,
            })
            .collect();
        put("per_alarm.csv", csv_bytes(&alarms)?)?;
        let e = &r.errors;
        let errors: Vec<ErrorCsvRow> = [
            ("false_negative", &e.false_negatives),
            ("false_positive", &e.false_positives),
            ("high_confidence", &e.high_confidence),
        ]
        .into_iter()
        .flat_map(|(category, ids)| ids.iter().map(move |id| ErrorCsvRow { category, record_id: id }))
        .collect();
        put("error_breakdown.csv", csv_bytes(&errors)?)?;
        let curve: Vec<CurveRow> = k
            .histories
            .iter()
            .flat_map(|h| {
                (0..h.history.epochs_run).map(move |e| CurveRow {
                    fold: h.fold,
                    epoch: e + 1,
                    train_loss: h.history.train_loss[e],
                    val_auc: h.history.val_auc[e],
                    max_grad_norm: h.history.max_grad_norm[e],
                })
            })
            .collect();
        put("training_curve.csv", csv_bytes(&curve)?)?;
    }

    if let Some(a) = &ablation {
        let rows: Vec<AblationCsvRow> = a
            .chunk_rows
            .iter()
            .map(|r| ("chunks", r))
            .chain(a.channel_rows.iter().map(|r| ("channels", r)))
            .map(|(grid, r)| AblationCsvRow {
                grid,
                condition: &r.condition,
                description: &r.description,
                mean_auc: r.mean_auc,
                std_auc: r.std_auc,
            })
            .collect();
        put("ablation.csv", csv_bytes(&rows)?)?;
    }

    if let Some(s) = &sweep {
        let rows: Vec<WinnerCsvRow> = s
            .winners
            .iter()
            .map(|w| WinnerCsvRow {
                parameter: &w.axis,
                values_tested: w.values_tested.iter().map(|v| v.to_string()).collect::<Vec<_>>().join(" "),
                winner: w.winner,
                val_auc: w.val_auc,
            })
            .collect();
        put("sweep_winners.csv", csv_bytes(&rows)?)?;
    }
    Ok(written)
}

#[cfg(test)]
mod tests {
    use super::super::testing::tiny_setup;
    use super::super::{run_on, Experiment, ExperimentConfig};
    use super::*;

    fn tiny_run() -> (tempfile::TempDir, RunOutput) {
        let (data, cfg) = tiny_setup(30, 11);
        let cfg = ExperimentConfig {
            baseline: Some(Experiment::FeaturesLinear),
            ..cfg
        };
        let out = run_on(&data, &cfg).unwrap();
        let dir = tempfile::tempdir().unwrap();
        write_run(&out, dir.path()).unwrap();
        (dir, out)
    }

    fn read_all(paths: &[PathBuf]) -> Vec<Vec<u8>> {
        paths.iter().map(|p| fs::read(p).unwrap()).collect()
    }

    #[test]
    fn csv_emission_is_stable() {
        let (dir, out) = tiny_run();
        let a = emit_report(dir.path(), ReportFormat::Csv).unwrap();
        let first = read_all(&a);
        let b = emit_report(dir.path(), ReportFormat::Csv).unwrap();
        assert_eq!(a, b);
        assert_eq!(first, read_all(&b));
        let names: Vec<String> = a.iter().map(|p| p.file_name().unwrap().to_string_lossy().into_owned()).collect();
        assert_eq!(
            names,
            ["experiment_comparison.csv", "per_fold.csv", "per_alarm.csv", "error_breakdown.csv", "training_curve.csv"]
        );
        let curve = String::from_utf8(fs::read(dir.path().join("plots/training_curve.csv")).unwrap()).unwrap();
        let epochs: usize = out.histories.iter().map(|h| h.history.epochs_run).sum();
        assert_eq!(curve.lines().count(), epochs + 1);
        let comparison = String::from_utf8(first[0].clone()).unwrap();
        assert_eq!(comparison.lines().count(), 3);
        assert!(comparison.lines().nth(1).unwrap().starts_with("features_linear,"));
    }

    #[test]
    fn json_summary_round_trips_the_report() {
        let (dir, out) = tiny_run();
        let files = emit_report(dir.path(), ReportFormat::Json).unwrap();
        let summary: RunSummary = read_json(&files[0]).unwrap();
        assert_eq!(summary.report.unwrap(), out.report);
        assert_eq!(read_all(&files), read_all(&emit_report(dir.path(), ReportFormat::Json).unwrap()));
    }

    #[test]
    fn incomplete_directories_are_rejected() {
        let empty = tempfile::tempdir().unwrap();
        assert!(matches!(emit_report(empty.path(), ReportFormat::Csv), Err(Error::IncompleteRun(_))));
        let (dir, _) = tiny_run();
        fs::remove_file(dir.path().join(PREDICTIONS_FILE)).unwrap();
        assert!(matches!(emit_report(dir.path(), ReportFormat::Csv), Err(Error::IncompleteRun(_))));
        assert!(matches!(
            emit_report(empty.path().join("nope"), ReportFormat::Json),
            Err(Error::IncompleteRun(_))
        ));
    }
}
