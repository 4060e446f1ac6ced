//! Holdout protocol, one-axis-at-a-time sweep and the ablation grids.

use std::collections::BTreeMap;

use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use super::{fit_and_score, pick, run_on, Dataset, Experiment, ExperimentConfig};
use crate::net::{Model, TrainHistory};
use crate::records::ChannelKind;
use crate::stats::{auc, fold_summary, stratified_split};
use crate::{Error, Result};

/// Fractions of the train/validation/test holdout split.
pub const HOLDOUT_FRACTIONS: [f64; 3] = [0.70, 0.15, 0.15];

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct HoldoutResult {
    pub experiment: Experiment,
    pub split_seed: u64,
    pub seed: u64,
    pub train: Vec<usize>,
    pub val: Vec<usize>,
    pub test: Vec<usize>,
    /// Best validation AUC (neural) or validation AUC of the fitted model.
    pub val_auc: f64,
    pub test_auc: f64,
    pub test_probs: Vec<f64>,
    pub history: Option<TrainHistory>,
}

/// Stratified 70/15/15 split with `split_seed`; trains on the first part,
/// selects on the second and reports AUC on the third.
pub fn run_holdout(data: &Dataset, cfg: &ExperimentConfig, split_seed: u64) -> Result<HoldoutResult> {
    holdout_with_model(data, cfg, split_seed).map(|(h, _)| h)
}

/// [`run_holdout`], also returning the selected network for neural modes.
pub fn holdout_with_model(data: &Dataset, cfg: &ExperimentConfig, split_seed: u64) -> Result<(HoldoutResult, Option<Model>)> {
    cfg.validate()?;
    data.check_config(cfg)?;
    let labels = data.labels();
    let parts = stratified_split(&labels, &HOLDOUT_FRACTIONS, split_seed)?;
    let (train, val, test) = (parts[0].clone(), parts[1].clone(), parts[2].clone());
    let mut model = None;
    let (val_auc, test_probs, history) = if cfg.experiment.is_neural() {
        let model_cfg = cfg.effective_model(cfg.experiment);
        super::assert_disjoint(data, &train, &val)?;
        super::assert_disjoint(data, &train, &test)?;
        super::assert_disjoint(data, &val, &test)?;
        let seqs = data.sequences(model_cfg.n_chunks, &model_cfg.channels)?;
        let (m, history) = crate::net::train(&seqs, &train, &val, &model_cfg)?;
        let probs = m.predict(&pick(&seqs, &test))?;
        model = Some(m);
        (history.best_val_auc, probs, Some(history))
    } else {
        let (val_probs, _) = fit_and_score(data, cfg, cfg.experiment, &train, &val, split_seed)?;
        let (probs, _) = fit_and_score(data, cfg, cfg.experiment, &train, &test, split_seed)?;
        (auc(&val_probs, &pick(&labels, &val))?, probs, None)
    };
    let test_auc = auc(&test_probs, &pick(&labels, &test))?;
    let result = HoldoutResult {
        experiment: cfg.experiment,
        split_seed,
        seed: cfg.seed,
        train,
        val,
        test,
        val_auc,
        test_auc,
        test_probs,
        history,
    };
    Ok((result, model))
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct SweepSpec {
    pub lstm_hidden: Vec<usize>,
    pub dropout: Vec<f64>,
    pub learning_rate: Vec<f64>,
    pub repeats: usize,
}

impl Default for SweepSpec {
    fn default() -> Self {
        SweepSpec {
            lstm_hidden: vec![64, 128, 256, 512],
            dropout: vec![0.2, 0.3, 0.4, 0.5],
            learning_rate: vec![1e-2, 1e-3, 1e-4, 1e-5],
            repeats: 4,
        }
    }
}

impl SweepSpec {
    pub fn n_runs(&self) -> usize {
        (self.lstm_hidden.len() + self.dropout.len() + self.learning_rate.len()) * self.repeats
    }

    /// `(axis, value, config)` per sweep cell, axes in fixed order.
    fn cells(&self, base: &ExperimentConfig) -> Vec<(&'static str, f64, ExperimentConfig)> {
        let mut out = Vec::new();
        for &h in &self.lstm_hidden {
            let mut c = base.clone();
            c.model.lstm_hidden = h;
            out.push(("lstm_hidden", h as f64, c));
        }
        for &d in &self.dropout {
            let mut c = base.clone();
            c.model.dropout = d;
            out.push(("dropout", d, c));
        }
        for &lr in &self.learning_rate {
            let mut c = base.clone();
            c.model.learning_rate = lr;
            out.push(("learning_rate", lr, c));
        }
        out
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepRun {
    pub axis: String,
    pub value: f64,
    pub repeat: usize,
    pub seed: u64,
    pub val_auc: f64,
    pub test_auc: f64,
    pub best_epoch: Option<usize>,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct WinnerRow {
    pub axis: String,
    pub values_tested: Vec<f64>,
    pub winner: f64,
    /// Mean best-validation AUC of the winner across repeats.
    pub val_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SweepTable {
    pub split_seed: u64,
    pub n_runs: usize,
    pub runs: Vec<SweepRun>,
    pub winners: Vec<WinnerRow>,
}

/// Runs every sweep cell `repeats` times on one fixed holdout split
/// (seed `base.seed`); repeat `r` trains with seed `base.seed + r`.
pub fn sweep(data: &Dataset, spec: &SweepSpec, base: &ExperimentConfig) -> Result<SweepTable> {
    if spec.repeats == 0 {
        return Err(Error::InvalidArgument("sweep needs at least one repeat".into()));
    }
    if !base.experiment.is_neural() {
        return Err(Error::InvalidArgument("the sweep varies network hyperparameters".into()));
    }
    let cells = spec.cells(base);
    let jobs: Vec<(usize, usize)> = (0..cells.len()).flat_map(|c| (0..spec.repeats).map(move |r| (c, r))).collect();
    let runs: Vec<SweepRun> = jobs
        .par_iter()
        .map(|&(c, r)| {
            let (axis, value, cfg) = &cells[c];
            let mut cfg = cfg.clone();
            cfg.seed = base.seed.wrapping_add(r as u64);
            let h = run_holdout(data, &cfg, base.seed)?;
            Ok(SweepRun {
                axis: (*axis).to_owned(),
                value: *value,
                repeat: r,
                seed: cfg.seed,
                val_auc: h.val_auc,
                test_auc: h.test_auc,
                best_epoch: h.history.map(|h| h.best_epoch),
            })
        })
        .collect::<Result<_>>()?;

    let mut winners = Vec::new();
    for axis in ["lstm_hidden", "dropout", "learning_rate"] {
        let values: Vec<f64> = cells.iter().filter(|c| c.0 == axis).map(|c| c.1).collect();
        if values.is_empty() {
            continue;
        }
        let mut best: Option<(f64, f64)> = None;
        for &v in &values {
            let aucs: Vec<f64> = runs.iter().filter(|r| r.axis == axis && r.value == v).map(|r| r.val_auc).collect();
            let mean = aucs.iter().sum::<f64>() / aucs.len() as f64;
            if best.is_none_or(|(_, m)| mean > m) {
                best = Some((v, mean));
            }
        }
        let (winner, val_auc) = best.expect("non-empty axis");
        winners.push(WinnerRow {
            axis: axis.to_owned(),
            values_tested: values,
            winner,
            val_auc,
        });
    }
    Ok(SweepTable {
        split_seed: base.seed,
        n_runs: runs.len(),
        runs,
        winners,
    })
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct AblationSpec {
    /// Chunk counts, evaluated with all four channels.
    pub chunks: Vec<usize>,
    /// Channel counts as prefixes of the canonical order, with six chunks.
    pub channels: Vec<usize>,
    pub folds: usize,
}

impl Default for AblationSpec {
    fn default() -> Self {
        AblationSpec {
            chunks: vec![1, 2, 3, 6],
            channels: vec![1, 2, 4],
            folds: 3,
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationRow {
    pub condition: String,
    pub description: String,
    pub n_chunks: usize,
    pub channels: Vec<ChannelKind>,
    pub fold_aucs: Vec<f64>,
    pub mean_auc: f64,
    /// Population standard deviation over the folds.
    pub std_auc: f64,
    pub sample_std_auc: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct AblationTable {
    pub folds: usize,
    pub seed: u64,
    pub chunk_rows: Vec<AblationRow>,
    pub channel_rows: Vec<AblationRow>,
}

fn chunk_description(n: usize, seconds: f64) -> String {
    if n == 1 {
        "static, no LSTM".to_owned()
    } else {
        format!("{n} × {}s chunks", (seconds / n as f64).round())
    }
}

/// k-fold evaluation of the temporal model over the chunk grid (four
/// channels) and the channel grid (six chunks).
pub fn ablate(data: &Dataset, spec: &AblationSpec, base: &ExperimentConfig) -> Result<AblationTable> {
    let seconds = data
        .records()
        .first()
        .map(|r| r.len() as f64 / r.fs())
        .unwrap_or_default();
    let mut cells: Vec<(usize, usize)> = spec.chunks.iter().map(|&c| (c, 4)).collect();
    cells.extend(spec.channels.iter().map(|&ch| (6, ch)));
    for &(_, ch) in &cells {
        if ch == 0 || ch > ChannelKind::CANONICAL.len() {
            return Err(Error::InvalidArgument(format!("channel count {ch}")));
        }
    }
    let mut unique = cells.clone();
    unique.sort_unstable();
    unique.dedup();
    let results: BTreeMap<(usize, usize), (Vec<f64>, Vec<ChannelKind>)> = unique
        .par_iter()
        .map(|&(chunks, ch)| {
            let mut cfg = base.clone();
            cfg.experiment = Experiment::Temporal;
            cfg.baseline = None;
            cfg.folds = spec.folds;
            cfg.model.n_chunks = chunks;
            cfg.model.channels = ChannelKind::CANONICAL[..ch].to_vec();
            let out = run_on(data, &cfg)?;
            let aucs = out.report.folds.iter().map(|f| f.auc).collect();
            Ok(((chunks, ch), (aucs, cfg.model.channels)))
        })
        .collect::<Result<_>>()?;
    let row = |chunks: usize, ch: usize, condition: String, description: String| -> Result<AblationRow> {
        let (aucs, channels) = &results[&(chunks, ch)];
        let s = fold_summary(aucs)?;
        Ok(AblationRow {
            condition,
            description,
            n_chunks: chunks,
            channels: channels.clone(),
            fold_aucs: aucs.clone(),
            mean_auc: s.mean,
            std_auc: s.std,
            sample_std_auc: s.sample_std,
        })
    };
    let chunk_rows = spec
        .chunks
        .iter()
        .map(|&c| row(c, 4, format!("chunks={c}"), chunk_description(c, seconds)))
        .collect::<Result<_>>()?;
    let channel_rows = spec
        .channels
        .iter()
        .map(|&ch| {
            let names: Vec<&str> = ChannelKind::CANONICAL[..ch].iter().map(|k| k.as_str()).collect();
            row(6, ch, format!("channels={ch}"), names.join(" + "))
        })
        .collect::<Result<_>>()?;
    Ok(AblationTable {
        folds: spec.folds,
        seed: base.seed,
        chunk_rows,
        channel_rows,
    })
}

#[cfg(test)]
mod tests {
    use super::super::testing::tiny_setup;
    use super::*;

    #[test]
    fn run_counts() {
        assert_eq!(SweepSpec::default().n_runs(), 48);
        assert_eq!(SweepSpec { repeats: 1, ..SweepSpec::default() }.n_runs(), 12);
    }

    #[test]
    fn small_sweep_counts_runs_and_picks_winners() {
        let (data, base) = tiny_setup(40, 5);
        let spec = SweepSpec {
            lstm_hidden: vec![2, 4],
            dropout: vec![0.0],
            learning_rate: vec![1e-2, 1e-3],
            repeats: 2,
        };
        let t = sweep(&data, &spec, &base).unwrap();
        assert_eq!(t.n_runs, spec.n_runs());
        assert_eq!(t.runs.len(), 10);
        assert_eq!(t.winners.len(), 3);
        for w in &t.winners {
            let best = w
                .values_tested
                .iter()
                .map(|&v| {
                    let a: Vec<f64> = t.runs.iter().filter(|r| r.axis == w.axis && r.value == v).map(|r| r.val_auc).collect();
                    a.iter().sum::<f64>() / a.len() as f64
                })
                .fold(f64::NEG_INFINITY, f64::max);
            assert_eq!(w.val_auc, best);
        }
        assert_eq!(t.runs[1].seed, base.seed + 1);
    }

    #[test]
    fn holdout_parts_are_disjoint_and_cover() {
        let (data, base) = tiny_setup(40, 6);
        for experiment in [Experiment::Temporal, Experiment::FeaturesLinear] {
            let cfg = ExperimentConfig { experiment, ..base.clone() };
            let h = run_holdout(&data, &cfg, 9).unwrap();
            let mut all: Vec<usize> = h.train.iter().chain(&h.val).chain(&h.test).copied().collect();
            all.sort_unstable();
            assert_eq!(all, (0..40).collect::<Vec<_>>());
            assert_eq!(h.test_probs.len(), h.test.len());
        }
    }

    #[test]
    fn ablation_shape_and_static_cross_check() {
        let (data, base) = tiny_setup(30, 7);
        let spec = AblationSpec {
            chunks: vec![1, 2],
            channels: vec![1, 2],
            folds: 3,
        };
        let t = ablate(&data, &spec, &base).unwrap();
        assert_eq!(t.chunk_rows.len(), 2);
        assert_eq!(t.channel_rows.len(), 2);
        assert!(t.chunk_rows.iter().chain(&t.channel_rows).all(|r| r.fold_aucs.len() == 3));
        let stat = run_on(
            &data,
            &ExperimentConfig {
                experiment: Experiment::Static,
                folds: 3,
                ..base.clone()
            },
        )
        .unwrap();
        assert_eq!(t.chunk_rows[0].mean_auc, stat.report.mean_auc);
        assert_eq!(t.channel_rows[1].channels, vec![ChannelKind::EcgII, ChannelKind::EcgV]);
    }
}
