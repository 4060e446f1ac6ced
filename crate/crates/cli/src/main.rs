use std::fs;
use std::path::{Path, PathBuf};
use std::process::ExitCode;

use alarmsift::features::{extract_features, features_csv};
use alarmsift::harness::{
    ablate, emit_report, holdout_with_model, run_on, sweep, write_ablation, write_run, write_sweep, AblationSpec, Dataset,
    ExperimentConfig, ReportFormat, SweepSpec,
};
use alarmsift::net::save_model;
use alarmsift::records::{load_dataset, synth_dataset, write_dataset, SynthSpec};
use alarmsift::scalogram::write_cache;
use alarmsift::temporal::{chunk_scalograms, split_chunks};
use alarmsift::{Error, Result};
use clap::{Args, Parser, Subcommand, ValueEnum};

#[derive(Parser)]
#[command(name = "alarmsift", version, about = "True/false ICU arrhythmia alarm classification")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Args, Clone)]
struct Common {
    /// Experiment config (JSON); defaults apply when omitted.
    #[arg(long)]
    config: Option<PathBuf>,
    /// Dataset root: one directory per record.
    #[arg(long)]
    data: Option<PathBuf>,
    #[arg(long)]
    seed: Option<u64>,
    /// Output directory.
    #[arg(long)]
    out: PathBuf,
}

#[derive(Clone, Copy, ValueEnum)]
enum Format {
    Json,
    Csv,
}

#[derive(Subcommand)]
enum Command {
    /// Write an onset-coded synthetic dataset.
    Synth {
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 240)]
        n: usize,
        #[arg(long, default_value_t = 0.317)]
        true_ratio: f64,
        #[arg(long, default_value_t = 42)]
        seed: u64,
    },
    /// Cache per-chunk scalograms for every record.
    Scalogram {
        #[command(flatten)]
        common: Common,
        #[arg(long, default_value_t = 6)]
        chunks: usize,
    },
    /// Write the feature catalogue for every record as CSV.
    Features {
        #[arg(long)]
        data: PathBuf,
        /// Output CSV file.
        #[arg(long)]
        out: PathBuf,
    },
    /// Train once on a stratified 70/15/15 split and save the network.
    Train(Common),
    /// Stratified k-fold evaluation.
    Run(Common),
    /// One-axis-at-a-time hyperparameter sweep on the holdout split.
    Sweep {
        #[command(flatten)]
        common: Common,
        /// Sweep spec (JSON); the default grids apply when omitted.
        #[arg(long)]
        spec: Option<PathBuf>,
        #[arg(long)]
        repeats: Option<usize>,
    },
    /// Chunk-count and channel-count ablation grids.
    Ablate {
        #[command(flatten)]
        common: Common,
        #[arg(long)]
        folds: Option<usize>,
    },
    /// Emit plot data for a run directory.
    Report {
        /// Run directory.
        #[arg(long)]
        out: PathBuf,
        #[arg(long, value_enum, default_value = "csv")]
        format: Format,
    },
}

fn read(path: &Path) -> Result<Vec<u8>> {
    fs::read(path).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn write(path: &Path, bytes: &[u8]) -> Result<()> {
    if let Some(parent) = path.parent().filter(|p| !p.as_os_str().is_empty()) {
        fs::create_dir_all(parent).map_err(|source| Error::Io {
            path: parent.to_owned(),
            source,
        })?;
    }
    fs::write(path, bytes).map_err(|source| Error::Io {
        path: path.to_owned(),
        source,
    })
}

fn load_config(common: &Common) -> Result<ExperimentConfig> {
    let mut cfg = match &common.config {
        Some(p) => ExperimentConfig::from_json(&read(p)?)?,
        None => ExperimentConfig::default(),
    };
    if let Some(d) = &common.data {
        cfg.data_dir = Some(d.clone());
    }
    if let Some(s) = common.seed {
        cfg.seed = s;
    }
    cfg.out_dir = Some(common.out.clone());
    cfg.validate()?;
    Ok(cfg)
}

fn print_json(value: &serde_json::Value) -> Result<()> {
    println!("{}", serde_json::to_string_pretty(value)?);
    Ok(())
}

fn run(cli: Cli) -> Result<()> {
    match cli.command {
        Command::Synth { out, n, true_ratio, seed } => {
            let records = synth_dataset(&SynthSpec::new(n, true_ratio), seed)?;
            write_dataset(&records, &out)?;
            let n_true = records.iter().filter(|r| r.label()).count();
            print_json(&serde_json::json!({ "records": records.len(), "true": n_true, "out": out }))
        }
        Command::Scalogram { common, chunks } => {
            let cfg = load_config(&common)?;
            let data = Dataset::load(&cfg)?;
            let builder = cfg.scalogram.builder()?;
            let mut files = 0;
            for r in data.records() {
                let dir = common.out.join(r.record_id());
                for (k, fragment) in split_chunks(r, chunks)?.iter().enumerate() {
                    for s in chunk_scalograms(fragment, k, &cfg.model.channels, &builder)? {
                        write_cache(&dir, &s, s.channel.expect("channel set by chunk_scalograms"))?;
                        files += 1;
                    }
                }
            }
            print_json(&serde_json::json!({ "records": data.records().len(), "files": files }))
        }
        Command::Features { data, out } => {
            let records = load_dataset(&data)?;
            let rows = records
                .iter()
                .map(|r| Ok((r, extract_features(r)?)))
                .collect::<Result<Vec<_>>>()?;
            write(&out, features_csv(&rows).as_bytes())?;
            print_json(&serde_json::json!({ "records": rows.len(), "out": out }))
        }
        Command::Train(common) => {
            let cfg = load_config(&common)?;
            let data = Dataset::load(&cfg)?;
            let (result, model) = holdout_with_model(&data, &cfg, cfg.seed)?;
            if let Some(m) = &model {
                save_model(m, common.out.join("model"))?;
            }
            let mut bytes = serde_json::to_vec_pretty(&result)?;
            bytes.push(b'\n');
            write(&common.out.join("holdout.json"), &bytes)?;
            print_json(&serde_json::json!({
                "experiment": result.experiment,
                "val_auc": result.val_auc,
                "test_auc": result.test_auc,
                "seed": result.seed,
            }))
        }
        Command::Run(common) => {
            let cfg = load_config(&common)?;
            let data = Dataset::load(&cfg)?;
            let out = run_on(&data, &cfg)?;
            write_run(&out, &common.out)?;
            let r = &out.report;
            print_json(&serde_json::json!({
                "run_id": r.run_id,
                "mean_auc": r.mean_auc,
                "std_auc": r.std_auc,
                "ci95": r.ci95,
                "pooled_auc": r.pooled_auc,
                "seed": r.seed,
            }))
        }
        Command::Sweep { common, spec, repeats } => {
            let cfg = load_config(&common)?;
            let mut spec: SweepSpec = match spec {
                Some(p) => serde_json::from_slice(&read(&p)?)?,
                None => SweepSpec::default(),
            };
            if let Some(r) = repeats {
                spec.repeats = r;
            }
            let data = Dataset::load(&cfg)?;
            let table = sweep(&data, &spec, &cfg)?;
            write_sweep(&table, &common.out)?;
            print_json(&serde_json::json!({ "runs": table.n_runs, "winners": table.winners }))
        }
        Command::Ablate { common, folds } => {
            let cfg = load_config(&common)?;
            let mut spec = AblationSpec::default();
            if let Some(f) = folds {
                spec.folds = f;
            }
            let data = Dataset::load(&cfg)?;
            let table = ablate(&data, &spec, &cfg)?;
            write_ablation(&table, &common.out)?;
            print_json(&serde_json::to_value(&table)?)
        }
        Command::Report { out, format } => {
            let format = match format {
                Format::Json => ReportFormat::Json,
                Format::Csv => ReportFormat::Csv,
            };
            let files = emit_report(&out, format)?;
            print_json(&serde_json::json!({ "files": files }))
        }
    }
}

fn main() -> ExitCode {
    match run(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("{}", serde_json::json!({ "error": e.kind(), "message": e.to_string() }));
            ExitCode::FAILURE
        }
    }
}
