//! Experiment orchestration: configuration, k-fold runs for the four
//! experiment modes, the holdout protocol, sweeps, ablations and report
//! emission.

mod emit;
mod sweep;

use std::collections::{BTreeSet, HashMap};
use std::path::PathBuf;
use std::sync::{Arc, Mutex};

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::features::{extract_features, extract_with_beats, LinearClassifier, LinearConfig, PanTompkinsParams, PerAlarmClassifier};
use crate::net::{train, ModelConfig, TrainHistory};
use crate::records::{load_dataset, ChannelKind, Record};
use crate::scalogram::{log_scales, MorletParams, ScalogramBuilder};
use crate::stats::{
    auc, bootstrap_auc_diff, confusion_metrics, delong_test, error_report, fold_summary, per_alarm_report,
    stratified_kfold, stratified_split, Confusion, FoldAssignment, FoldAuc, Report,
};
use crate::temporal::{build_sequence, ChunkSequence};
use crate::{Error, Result};

pub use emit::{
    emit_report, write_ablation, write_run, write_sweep, ReportFormat, RunSummary, ABLATION_FILE, FOLDS_FILE, HISTORY_FILE,
    PLOTS_DIR, PREDICTIONS_FILE, REPORT_FILE, SWEEP_FILE,
};
pub use sweep::{
    ablate, holdout_with_model, run_holdout, sweep, AblationRow, AblationSpec, AblationTable, HoldoutResult, SweepRun, SweepSpec, SweepTable,
    WinnerRow, HOLDOUT_FRACTIONS,
};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Experiment {
    /// One chunk, no recurrence.
    Static,
    FeaturesLinear,
    PerAlarm,
    Temporal,
}

impl Experiment {
    pub fn as_str(self) -> &'static str {
        match self {
            Experiment::Static => "static",
            Experiment::FeaturesLinear => "features_linear",
            Experiment::PerAlarm => "per_alarm",
            Experiment::Temporal => "temporal",
        }
    }

    pub fn is_neural(self) -> bool {
        matches!(self, Experiment::Static | Experiment::Temporal)
    }
}

/// Largest scalogram side accepted from a config.
pub const MAX_SCALOGRAM_SIDE: usize = 1024;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ScalogramConfig {
    pub rows: usize,
    pub cols: usize,
    pub s_min: f64,
    pub s_max: f64,
    pub omega0: f64,
}

impl Default for ScalogramConfig {
    fn default() -> Self {
        ScalogramConfig {
            rows: 64,
            cols: 64,
            s_min: 1.0,
            s_max: 128.0,
            omega0: 6.0,
        }
    }
}

impl ScalogramConfig {
    pub fn builder(&self) -> Result<ScalogramBuilder> {
        let grid = log_scales(self.rows, self.s_min, self.s_max)?;
        Ok(ScalogramBuilder::new(grid, MorletParams::new(self.omega0)?).with_cols(self.cols))
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct ExperimentConfig {
    pub experiment: Experiment,
    pub model: ModelConfig,
    pub linear: LinearConfig,
    pub scalogram: ScalogramConfig,
    pub pan_tompkins: PanTompkinsParams,
    pub data_dir: Option<PathBuf>,
    pub out_dir: Option<PathBuf>,
    pub folds: usize,
    /// Master seed; overrides `model.seed`.
    pub seed: u64,
    /// Fraction of each training fold held back for early stopping.
    pub val_fraction: f64,
    /// When set, the baseline is run on the same folds and compared with
    /// DeLong (baseline first) and a bootstrap of `AUC_baseline − AUC_main`.
    pub baseline: Option<Experiment>,
    pub bootstrap_iters: usize,
    pub confidence_threshold: f64,
    pub run_id: Option<String>,
}

impl Default for ExperimentConfig {
    fn default() -> Self {
        ExperimentConfig {
            experiment: Experiment::Temporal,
            model: ModelConfig::default(),
            linear: LinearConfig::default(),
            scalogram: ScalogramConfig::default(),
            pan_tompkins: PanTompkinsParams::default(),
            data_dir: None,
            out_dir: None,
            folds: 5,
            seed: 42,
            val_fraction: 0.15,
            baseline: None,
            bootstrap_iters: 1000,
            confidence_threshold: 0.8,
            run_id: None,
        }
    }
}

impl ExperimentConfig {
    /// Parses and validates a JSON config.
    pub fn from_json(bytes: &[u8]) -> Result<ExperimentConfig> {
        let cfg: ExperimentConfig = serde_json::from_slice(bytes).map_err(|e| Error::InvalidArgument(format!("config: {e}")))?;
        cfg.validate()?;
        Ok(cfg)
    }

    pub fn validate(&self) -> Result<()> {
        let bad = |m: String| Err(Error::InvalidArgument(m));
        if self.folds < 2 {
            return bad(format!("folds = {}, need >= 2", self.folds));
        }
        if !(self.val_fraction > 0.0 && self.val_fraction < 1.0) {
            return bad(format!("val_fraction {} outside (0, 1)", self.val_fraction));
        }
        if !(0.5..1.0).contains(&self.confidence_threshold) {
            return bad(format!("confidence_threshold {} outside [0.5, 1)", self.confidence_threshold));
        }
        if self.baseline.is_some() && self.bootstrap_iters == 0 {
            return bad("bootstrap_iters must be > 0".into());
        }
        if self.baseline == Some(self.experiment) {
            return bad("baseline equals the main experiment".into());
        }
        self.effective_model(self.experiment).validate()?;
        if self.experiment.is_neural() || self.baseline.is_some_and(Experiment::is_neural) {
            let s = &self.scalogram;
            if !(2..=MAX_SCALOGRAM_SIDE).contains(&s.rows) || !(1..=MAX_SCALOGRAM_SIDE).contains(&s.cols) {
                return bad(format!("scalogram {}×{} outside 2..={MAX_SCALOGRAM_SIDE}", s.rows, s.cols));
            }
            if s.rows != self.model.input_size || s.cols != self.model.input_size {
                return bad(format!(
                    "scalogram {}×{} does not match model input_size {}",
                    s.rows, s.cols, self.model.input_size
                ));
            }
            s.builder()?;
        }
        Ok(())
    }

    /// Model config actually trained for `experiment`: master seed applied,
    /// static mode forced to one chunk.
    pub fn effective_model(&self, experiment: Experiment) -> ModelConfig {
        let mut m = self.model.clone();
        m.seed = self.seed;
        if experiment == Experiment::Static {
            m.n_chunks = 1;
        }
        m
    }

    pub fn run_id(&self) -> String {
        self.run_id
            .clone()
            .unwrap_or_else(|| format!("{}-k{}-seed{}", self.experiment.as_str(), self.folds, self.seed))
    }
}

type SeqKey = (usize, Vec<ChannelKind>);

/// Records plus memoized derived inputs (chunk sequences, feature rows).
pub struct Dataset {
    records: Vec<Record>,
    scalogram: ScalogramConfig,
    builder: Arc<ScalogramBuilder>,
    pan_tompkins: PanTompkinsParams,
    sequences: Mutex<HashMap<SeqKey, Arc<Vec<ChunkSequence>>>>,
    features: Mutex<HashMap<bool, Arc<Vec<Vec<f64>>>>>,
}

impl Dataset {
    pub fn new(records: Vec<Record>, cfg: &ExperimentConfig) -> Result<Dataset> {
        if records.is_empty() {
            return Err(Error::InvalidArgument("empty dataset".into()));
        }
        let mut seen = BTreeSet::new();
        for r in &records {
            if !seen.insert(r.record_id()) {
                return Err(Error::InvalidArgument(format!("duplicate record id {}", r.record_id())));
            }
        }
        Ok(Dataset {
            records,
            scalogram: cfg.scalogram.clone(),
            builder: Arc::new(cfg.scalogram.builder()?),
            pan_tompkins: cfg.pan_tompkins.clone(),
            sequences: Mutex::new(HashMap::new()),
            features: Mutex::new(HashMap::new()),
        })
    }

    pub fn load(cfg: &ExperimentConfig) -> Result<Dataset> {
        let dir = cfg
            .data_dir
            .as_ref()
            .ok_or_else(|| Error::InvalidArgument("no data directory given".into()))?;
        Dataset::new(load_dataset(dir)?, cfg)
    }

    pub fn records(&self) -> &[Record] {
        &self.records
    }

    pub fn labels(&self) -> Vec<bool> {
        self.records.iter().map(Record::label).collect()
    }

    pub fn ids(&self) -> Vec<String> {
        self.records.iter().map(|r| r.record_id().to_owned()).collect()
    }

    /// Same records with different labels, sharing nothing else.
    pub fn relabeled(&self, labels: &[bool]) -> Result<Dataset> {
        if labels.len() != self.records.len() {
            return Err(Error::ShapeMismatch("label count".into()));
        }
        let records = self.records.iter().zip(labels).map(|(r, &l)| r.with_label(l)).collect();
        let seqs = self
            .sequences
            .lock()
            .expect("sequence cache")
            .iter()
            .map(|(k, v)| {
                let relabeled: Vec<ChunkSequence> = v.iter().zip(labels).map(|(s, &l)| s.with_label(l)).collect();
                (k.clone(), Arc::new(relabeled))
            })
            .collect();
        Ok(Dataset {
            records,
            scalogram: self.scalogram.clone(),
            builder: self.builder.clone(),
            pan_tompkins: self.pan_tompkins.clone(),
            sequences: Mutex::new(seqs),
            features: Mutex::new(self.features.lock().expect("feature cache").clone()),
        })
    }

    /// Rejects configs whose input settings differ from the ones this
    /// dataset's caches were built with.
    pub fn check_config(&self, cfg: &ExperimentConfig) -> Result<()> {
        if cfg.scalogram != self.scalogram || cfg.pan_tompkins != self.pan_tompkins {
            return Err(Error::InvalidArgument(
                "scalogram or beat-detector settings differ from the dataset's".into(),
            ));
        }
        Ok(())
    }

    /// Chunk sequences for a chunk count and channel subset.
    pub fn sequences(&self, n_chunks: usize, channels: &[ChannelKind]) -> Result<Arc<Vec<ChunkSequence>>> {
        let key = (n_chunks, channels.to_vec());
        if let Some(s) = self.sequences.lock().expect("sequence cache").get(&key) {
            return Ok(s.clone());
        }
        let full_key = (n_chunks, ChannelKind::CANONICAL.to_vec());
        let cached_full = self.sequences.lock().expect("sequence cache").get(&full_key).cloned();
        let built: Vec<ChunkSequence> = match cached_full {
            Some(full) if channels.iter().all(|c| ChannelKind::CANONICAL.contains(c)) => {
                let keep: Vec<usize> = channels
                    .iter()
                    .map(|c| ChannelKind::CANONICAL.iter().position(|k| k == c).expect("canonical"))
                    .collect();
                full.iter().map(|s| s.select_channels(&keep)).collect()
            }
            _ => self
                .records
                .par_iter()
                .map(|r| build_sequence(r, n_chunks, channels, &self.builder))
                .collect::<Result<_>>()?,
        };
        let built = Arc::new(built);
        self.sequences.lock().expect("sequence cache").insert(key, built.clone());
        Ok(built)
    }

    /// Catalogue rows, optionally extended with beat features.
    pub fn features(&self, with_beats: bool) -> Result<Arc<Vec<Vec<f64>>>> {
        if let Some(f) = self.features.lock().expect("feature cache").get(&with_beats) {
            return Ok(f.clone());
        }
        let rows: Vec<Vec<f64>> = self
            .records
            .par_iter()
            .map(|r| {
                if with_beats {
                    extract_with_beats(r, &self.pan_tompkins)
                } else {
                    extract_features(r).map(|f| f.values)
                }
            })
            .collect::<Result<_>>()?;
        let rows = Arc::new(rows);
        self.features.lock().expect("feature cache").insert(with_beats, rows.clone());
        Ok(rows)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FoldHistory {
    pub fold: usize,
    pub history: TrainHistory,
}

/// Everything a k-fold run produces.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct RunOutput {
    pub report: Report,
    pub assignment: FoldAssignment,
    /// Out-of-fold `p_true` per record, in dataset order.
    pub oof: Vec<f64>,
    pub baseline_oof: Option<Vec<f64>>,
    pub histories: Vec<FoldHistory>,
    pub record_ids: Vec<String>,
    pub labels: Vec<bool>,
}

fn assert_disjoint(data: &Dataset, train: &[usize], eval: &[usize]) -> Result<()> {
    let ids: BTreeSet<&str> = train.iter().map(|&i| data.records[i].record_id()).collect();
    if let Some(&i) = eval.iter().find(|&&i| ids.contains(data.records[i].record_id())) {
        return Err(Error::Leakage(format!(
            "record {} is in both training and evaluation sets",
            data.records[i].record_id()
        )));
    }
    Ok(())
}

fn pick<T: Clone>(v: &[T], idx: &[usize]) -> Vec<T> {
    idx.iter().map(|&i| v[i].clone()).collect()
}

/// Scores `eval` after fitting on `train_all` with the given mode.
/// Returns `p_true` per eval record and, for neural modes, the history.
fn fit_and_score(
    data: &Dataset,
    cfg: &ExperimentConfig,
    experiment: Experiment,
    train_all: &[usize],
    eval: &[usize],
    split_seed: u64,
) -> Result<(Vec<f64>, Option<TrainHistory>)> {
    assert_disjoint(data, train_all, eval)?;
    let labels = data.labels();
    match experiment {
        Experiment::Static | Experiment::Temporal => {
            let model_cfg = cfg.effective_model(experiment);
            let seqs = data.sequences(model_cfg.n_chunks, &model_cfg.channels)?;
            let inner_labels = pick(&labels, train_all);
            let parts = stratified_split(&inner_labels, &[1.0 - cfg.val_fraction, cfg.val_fraction], split_seed)?;
            let train_idx = pick(train_all, &parts[0]);
            let val_idx = pick(train_all, &parts[1]);
            assert_disjoint(data, &train_idx, &val_idx)?;
            let (model, history) = train(&seqs, &train_idx, &val_idx, &model_cfg)?;
            Ok((model.predict(&pick(&seqs, eval))?, Some(history)))
        }
        Experiment::FeaturesLinear => {
            let x = data.features(false)?;
            let m = LinearClassifier::fit(&pick(&x, train_all), &pick(&labels, train_all), &cfg.linear)?;
            Ok((eval.iter().map(|&i| m.predict_proba(&x[i])).collect(), None))
        }
        Experiment::PerAlarm => {
            let x = data.features(true)?;
            let types: Vec<_> = data.records.iter().map(Record::alarm_type).collect();
            let m = PerAlarmClassifier::fit(
                &pick(&x, train_all),
                &pick(&labels, train_all),
                &pick(&types, train_all),
                &cfg.linear,
            )?;
            Ok((eval.iter().map(|&i| m.predict_proba(&x[i], types[i])).collect(), None))
        }
    }
}

/// Out-of-fold probabilities for one experiment mode.
fn kfold_scores(
    data: &Dataset,
    cfg: &ExperimentConfig,
    experiment: Experiment,
    assignment: &FoldAssignment,
) -> Result<(Vec<f64>, Vec<f64>, Vec<FoldHistory>)> {
    let labels = data.labels();
    let mut oof = vec![f64::NAN; labels.len()];
    let mut fold_aucs = Vec::with_capacity(assignment.k);
    let mut histories = Vec::new();
    for fold in 0..assignment.k {
        let eval = assignment.members(fold);
        let train_all = assignment.complement(fold);
        let (probs, history) = fit_and_score(data, cfg, experiment, &train_all, &eval, cfg.seed.wrapping_add(fold as u64 + 1))?;
        for (&i, &p) in eval.iter().zip(&probs) {
            oof[i] = p;
        }
        fold_aucs.push(auc(&probs, &pick(&labels, &eval))?);
        if let Some(history) = history {
            histories.push(FoldHistory { fold, history });
        }
    }
    Ok((oof, fold_aucs, histories))
}

/// Stratified k-fold evaluation of `cfg.experiment` on an in-memory dataset.
pub fn run_on(data: &Dataset, cfg: &ExperimentConfig) -> Result<RunOutput> {
    cfg.validate()?;
    data.check_config(cfg)?;
    let labels = data.labels();
    let ids = data.ids();
    let assignment = stratified_kfold(&labels, cfg.folds, cfg.seed)?;
    let (oof, fold_aucs, histories) = kfold_scores(data, cfg, cfg.experiment, &assignment)?;
    let summary = fold_summary(&fold_aucs)?;
    let pooled_auc = auc(&oof, &labels)?;
    let confusion = Confusion::from_probs(&oof, &labels, 0.5);
    let mut metrics = confusion_metrics(&confusion);
    metrics.auc = Some(pooled_auc);
    let types: Vec<_> = data.records.iter().map(Record::alarm_type).collect();
    let per_alarm = per_alarm_report(&oof, &labels, &types);
    let errors = error_report(&ids, &oof, &labels, cfg.confidence_threshold);

    let (baseline_oof, delong, bootstrap) = match cfg.baseline {
        Some(b) => {
            let (base, _, _) = kfold_scores(data, cfg, b, &assignment)?;
            let d = delong_test(&base, &oof, &labels)?;
            let ci = bootstrap_auc_diff(&base, &oof, &labels, cfg.bootstrap_iters, cfg.seed)?;
            (Some(base), Some(d), Some(ci))
        }
        None => (None, None, None),
    };

    let mut recorded = cfg.clone();
    recorded.model = cfg.effective_model(cfg.experiment);
    let report = Report {
        run_id: cfg.run_id(),
        config: serde_json::to_value(&recorded)?,
        folds: fold_aucs.iter().enumerate().map(|(fold, &auc)| FoldAuc { fold, auc }).collect(),
        mean_auc: summary.mean,
        std_auc: summary.std,
        ci95: summary.ci95,
        confusion,
        metrics,
        per_alarm,
        errors,
        delong,
        bootstrap,
        seed: cfg.seed,
        experiment: cfg.experiment.as_str().to_owned(),
        sample_std_auc: summary.sample_std,
        pooled_auc,
        split_lineage: lineage(cfg),
    };
    Ok(RunOutput {
        report,
        assignment,
        oof,
        baseline_oof,
        histories,
        record_ids: ids,
        labels,
    })
}

fn lineage(cfg: &ExperimentConfig) -> String {
    let mut s = format!(
        "stratified {}-fold assignment (seed {}), computed once and shared by every mode in this run; \
         folds[].auc is the held-out-fold AUC, pooled_auc is the AUC of the concatenated out-of-fold predictions",
        cfg.folds, cfg.seed
    );
    if cfg.experiment.is_neural() {
        s.push_str(&format!(
            "; each training fold is split {:.0}/{:.0} stratified (seed {} + fold + 1) for early stopping on validation AUC",
            100.0 * (1.0 - cfg.val_fraction),
            100.0 * cfg.val_fraction,
            cfg.seed
        ));
    }
    s
}

/// Loads `cfg.data_dir`, runs the k-fold evaluation and, when `cfg.out_dir`
/// is set, writes the run directory.
pub fn run_experiment(cfg: &ExperimentConfig) -> Result<RunOutput> {
    let data = Dataset::load(cfg)?;
    let out = run_on(&data, cfg)?;
    if let Some(dir) = &cfg.out_dir {
        write_run(&out, dir)?;
    }
    Ok(out)
}

#[cfg(test)]
pub(crate) mod testing {
    use super::*;
    use crate::records::{synth_dataset, SynthSpec};

    /// Short synthetic records and a matching tiny model.
    pub fn tiny_setup(n: usize, seed: u64) -> (Dataset, ExperimentConfig) {
        let spec = SynthSpec {
            seconds: 12.0,
            ..SynthSpec::new(n, 0.4)
        };
        let records = synth_dataset(&spec, seed).unwrap();
        let cfg = ExperimentConfig {
            model: ModelConfig {
                embed_dim: 8,
                conv_channels: [2, 4],
                lstm_hidden: 4,
                head_hidden: 4,
                input_size: 8,
                max_epochs: 2,
                batch_size: 8,
                ..ModelConfig::default()
            },
            scalogram: ScalogramConfig {
                rows: 8,
                cols: 8,
                s_min: 1.0,
                s_max: 32.0,
                omega0: 6.0,
            },
            folds: 3,
            bootstrap_iters: 50,
            ..ExperimentConfig::default()
        };
        let data = Dataset::new(records, &cfg).unwrap();
        (data, cfg)
    }
}

#[cfg(test)]
mod tests {
    use super::testing::tiny_setup;
    use super::*;

    #[test]
    fn temporal_run_is_deterministic() {
        let (data, cfg) = tiny_setup(30, 1);
        let a = run_on(&data, &cfg).unwrap();
        let b = run_on(&data, &cfg).unwrap();
        assert_eq!(
            serde_json::to_string(&a.report).unwrap(),
            serde_json::to_string(&b.report).unwrap()
        );
        assert_eq!(a.report.folds.len(), 3);
        assert_eq!(a.histories.len(), 3);
        assert!(a.oof.iter().all(|p| (0.0..=1.0).contains(p)));
        assert_eq!(a.report.confusion.total(), 30);
        assert_eq!(a.report.seed, 42);
        assert_eq!(a.report.config["model"]["seed"], 42);
    }

    #[test]
    fn every_mode_runs_with_a_baseline() {
        let (data, cfg) = tiny_setup(30, 2);
        for (exp, base) in [
            (Experiment::Static, Some(Experiment::FeaturesLinear)),
            (Experiment::FeaturesLinear, None),
            (Experiment::PerAlarm, Some(Experiment::FeaturesLinear)),
        ] {
            let cfg = ExperimentConfig {
                experiment: exp,
                baseline: base,
                ..cfg.clone()
            };
            let out = run_on(&data, &cfg).unwrap();
            assert_eq!(out.report.delong.is_some(), base.is_some());
            assert_eq!(out.report.bootstrap.is_some(), base.is_some());
            if exp == Experiment::Static {
                assert_eq!(out.report.config["model"]["n_chunks"], 1);
            }
        }
    }

    #[test]
    fn leakage_is_detected() {
        let (data, _) = tiny_setup(6, 3);
        assert!(matches!(assert_disjoint(&data, &[0, 1, 2], &[2, 3]), Err(Error::Leakage(_))));
        assert!(assert_disjoint(&data, &[0, 1, 2], &[3, 4, 5]).is_ok());
    }

    #[test]
    fn config_validation_and_parsing() {
        let cfg = ExperimentConfig::from_json(br#"{"experiment": "features_linear", "folds": 3}"#).unwrap();
        assert_eq!(cfg.experiment, Experiment::FeaturesLinear);
        assert_eq!(cfg.seed, 42);
        assert!(ExperimentConfig::from_json(br#"{"folds": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"unknown": 1}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"scalogram": {"rows": 32}}"#).is_err());
        assert!(ExperimentConfig::from_json(br#"{"experiment": "temporal", "baseline": "temporal"}"#).is_err());
    }

    #[test]
    fn sequence_cache_projects_channels() {
        let (data, cfg) = tiny_setup(4, 4);
        let full = data.sequences(6, &ChannelKind::CANONICAL).unwrap();
        let sub = data.sequences(6, &[ChannelKind::EcgII, ChannelKind::EcgV]).unwrap();
        let builder = cfg.scalogram.builder().unwrap();
        let direct = build_sequence(&data.records()[0], 6, &[ChannelKind::EcgII, ChannelKind::EcgV], &builder).unwrap();
        assert_eq!(sub[0], direct);
        assert_eq!(full[0].select_channels(&[0, 1]), direct);
    }
}
