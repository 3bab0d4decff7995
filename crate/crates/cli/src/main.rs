//! Command-line pipeline: synthesize or prepare a dataset, split it,
//! train the experiment matrix, evaluate checkpoints, aggregate reports.

mod plot;

use std::path::{Path, PathBuf};
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use ausculta::checkpoint::{load_checkpoint, load_checkpoint_meta, save_checkpoint};
use ausculta::ingest::{build_manifest, duration_stats, summarize_reports, write_reports, HeuristicScreener};
use ausculta::manifest::{read_manifest, write_manifest_allow_empty};
use ausculta::metrics::MetricsReport;
use ausculta::model::ExperimentModel;
use ausculta::report::{aggregate, instance_count_table, render_table, scan_reports, scan_roc_curves};
use ausculta::synth::{generate_and_ingest, SynthSpec};
use ausculta::training::dataset::Dataset;
use ausculta::training::experiment::{evaluate_trial, run_experiment, ExperimentConfig, TrialResult};
use ausculta::training::split::{split_folds, FoldSplit};
use ausculta::training::{score_subjects, TrainOutcome};
use ausculta::{Error, Real, Result};

const SEED_ENV: &str = "AUSCULTA_SEED";

#[derive(Parser)]
#[command(
    name = "ausculta",
    version,
    about = "Multi-instance body-sound classification pipeline"
)]
struct Cli {
    /// Global seed override (has priority over AUSCULTA_SEED and configs)
    #[arg(long, global = true)]
    seed: Option<u64>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic dataset tree plus its curated manifest
    Synth {
        /// SynthSpec JSON file; defaults to the built-in desk-scale spec
        #[arg(long)]
        spec: Option<PathBuf>,
        /// Output directory for the dataset tree
        #[arg(long)]
        out: PathBuf,
        /// Where to write the manifest (default: <out>/manifest.jsonl)
        #[arg(long)]
        manifest: Option<PathBuf>,
    },
    /// Screen a dataset tree and build the curated manifest
    Prepare {
        /// Dataset root: <root>/<subject>/<instance>.wav + metadata.json
        #[arg(long)]
        root: PathBuf,
        #[arg(long)]
        out_manifest: PathBuf,
        /// Screening report JSON (default: alongside the manifest)
        #[arg(long)]
        report: Option<PathBuf>,
        /// Silence-trim threshold in dB below peak
        #[arg(long, default_value_t = 60.0)]
        trim_db: f64,
        /// Screener implementation (only "heuristic" ships)
        #[arg(long, default_value = "heuristic")]
        screener: String,
    },
    /// Draw the fixed test fold and the cross-validation folds
    Split {
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        out: PathBuf,
        #[arg(long, default_value_t = 0.2)]
        test_fraction: f64,
        #[arg(long, default_value_t = 5)]
        folds: usize,
    },
    /// Train one trial (or all trials) of an experiment
    Train {
        /// Experiment config JSON
        #[arg(long)]
        config: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// 1-based trial index; omit to run every trial
        #[arg(long)]
        trial: Option<usize>,
        /// Run trials concurrently
        #[arg(long)]
        parallel_trials: bool,
        #[arg(long)]
        out_dir: PathBuf,
    },
    /// Evaluate a checkpoint on the fixed test fold
    Evaluate {
        #[arg(long)]
        checkpoint: PathBuf,
        #[arg(long)]
        manifest: PathBuf,
        #[arg(long)]
        split: PathBuf,
        /// Trial whose validation fold supplies the threshold
        #[arg(long)]
        trial: usize,
        /// Report JSON output
        #[arg(long)]
        out: PathBuf,
        /// Optional ROC points CSV
        #[arg(long)]
        roc_csv: Option<PathBuf>,
    },
    /// Aggregate run reports into tables and ROC plots
    Report {
        #[arg(long)]
        runs_dir: PathBuf,
        #[arg(long)]
        out_dir: PathBuf,
    },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match run(cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}

fn seed_override(cli_seed: Option<u64>) -> Option<u64> {
    cli_seed.or_else(|| std::env::var(SEED_ENV).ok().and_then(|v| v.parse().ok()))
}

fn run(cli: Cli) -> Result<()> {
    let seed = seed_override(cli.seed);
    match cli.command {
        Command::Synth { spec, out, manifest } => cmd_synth(spec, out, manifest, seed),
        Command::Prepare { root, out_manifest, report, trim_db, screener } => {
            cmd_prepare(root, out_manifest, report, trim_db, &screener)
        }
        Command::Split { manifest, out, test_fraction, folds } => {
            cmd_split(manifest, out, test_fraction, folds, seed)
        }
        Command::Train { config, manifest, split, trial, parallel_trials, out_dir } => {
            cmd_train(config, manifest, split, trial, parallel_trials, out_dir, seed)
        }
        Command::Evaluate { checkpoint, manifest, split, trial, out, roc_csv } => {
            cmd_evaluate(checkpoint, manifest, split, trial, out, roc_csv)
        }
        Command::Report { runs_dir, out_dir } => cmd_report(runs_dir, out_dir),
    }
}

fn cmd_synth(
    spec: Option<PathBuf>,
    out: PathBuf,
    manifest_path: Option<PathBuf>,
    seed: Option<u64>,
) -> Result<()> {
    let mut spec = match spec {
        Some(p) => SynthSpec::load(&p)?,
        None => SynthSpec::default(),
    };
    if let Some(s) = seed {
        spec.seed = s;
    }
    let (manifest, reports, truth) = generate_and_ingest(&spec, &out)?;
    let manifest_path = manifest_path.unwrap_or_else(|| out.join("manifest.jsonl"));
    write_manifest_allow_empty(&manifest, &manifest_path)?;
    let (kept, discarded) = summarize_reports(&reports);
    println!(
        "synth: {} subjects ({} positive), kept {kept}, discarded {discarded}",
        truth.subjects.len(),
        truth.subjects.iter().filter(|s| s.label.is_positive()).count()
    );
    println!("manifest: {} rows -> {}", manifest.records.len(), manifest_path.display());
    Ok(())
}

fn cmd_prepare(
    root: PathBuf,
    out_manifest: PathBuf,
    report: Option<PathBuf>,
    trim_db: f64,
    screener: &str,
) -> Result<()> {
    if screener != "heuristic" {
        return Err(Error::Config(format!(
            "unknown screener {screener:?}; available: heuristic (plug external \
             classifiers through the library's EventScreener trait)"
        )));
    }
    let screener = HeuristicScreener::default();
    let (manifest, reports) = build_manifest::<Real>(&root, &screener, trim_db)?;
    write_manifest_allow_empty(&manifest, &out_manifest)?;
    let report_path = report.unwrap_or_else(|| out_manifest.with_extension("screening.json"));
    write_reports(&reports, &report_path)?;
    let (kept, discarded) = summarize_reports(&reports);
    if manifest.is_empty() {
        println!("warning: no subjects kept (scanned {})", reports.len());
    } else {
        println!("kept {kept} subjects, discarded {discarded}");
        for (kind, stats) in duration_stats(&manifest)? {
            println!(
                "  {kind}: n={} min={:.2}s max={:.2}s median={:.2}s mean={:.2}s",
                stats.count, stats.min, stats.max, stats.median, stats.mean
            );
        }
    }
    println!("manifest: {} rows -> {}", manifest.records.len(), out_manifest.display());
    println!("screening report -> {}", report_path.display());
    Ok(())
}

fn cmd_split(
    manifest: PathBuf,
    out: PathBuf,
    test_fraction: f64,
    folds: usize,
    seed: Option<u64>,
) -> Result<()> {
    let manifest = read_manifest(&manifest)?;
    let seed = seed.unwrap_or(17);
    let split = split_folds(&manifest, test_fraction, folds, ausculta::RngSeed(seed))?;
    split.write(&out)?;
    println!(
        "split: test {} subjects, {} folds of sizes {:?} (seed {seed}) -> {}",
        split.test_subjects.len(),
        split.folds.len(),
        split.folds.iter().map(|f| f.len()).collect::<Vec<_>>(),
        out.display()
    );
    Ok(())
}

fn trial_stem(cfg: &ExperimentConfig, trial: usize) -> String {
    format!("{}_trial{}", cfg.experiment_id, trial)
}

fn write_trial_artifacts(
    out_dir: &Path,
    cfg: &ExperimentConfig,
    result: &mut TrialResult<Real>,
) -> Result<()> {
    let stem = trial_stem(cfg, result.trial);

    let log_path = out_dir.join(format!("{stem}.log.jsonl"));
    let mut log = String::new();
    for entry in &result.logs {
        log.push_str(&serde_json::to_string(entry).map_err(|e| Error::Schema(e.to_string()))?);
        log.push('\n');
    }
    std::fs::write(&log_path, log).map_err(|e| Error::io(&log_path, e))?;

    let best = result
        .logs
        .iter()
        .max_by(|a, b| a.val_auc.partial_cmp(&b.val_auc).unwrap())
        .map(|l| (l.epoch, l.val_auc))
        .unwrap_or((0, 0.0));
    let meta = serde_json::json!({
        "config": cfg,
        "trial": result.trial,
        "best_epoch": best.0,
        "best_val_auc": best.1,
    });
    let ckpt_path = out_dir.join(format!("{stem}.ckpt"));
    save_checkpoint(&ckpt_path, meta, &mut result.model)?;

    let report_path = out_dir.join(format!("{stem}.report.json"));
    let json = serde_json::to_string_pretty(&result.report)
        .map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(&report_path, json + "\n").map_err(|e| Error::io(&report_path, e))?;

    let roc_path = out_dir.join(format!("{stem}.roc.csv"));
    let mut csv = String::from("fpr,tpr,threshold\n");
    for (fpr, tpr, thr) in &result.roc {
        csv.push_str(&format!("{fpr},{tpr},{thr}\n"));
    }
    std::fs::write(&roc_path, csv).map_err(|e| Error::io(&roc_path, e))?;
    Ok(())
}

fn cmd_train(
    config: PathBuf,
    manifest: PathBuf,
    split: PathBuf,
    trial: Option<usize>,
    parallel: bool,
    out_dir: PathBuf,
    seed: Option<u64>,
) -> Result<()> {
    let mut cfg = ExperimentConfig::load(&config)?;
    if let Some(s) = seed {
        cfg.seed = s;
    }
    cfg.validate()?;
    let manifest = read_manifest(&manifest)?;
    let split = FoldSplit::read(&split)?;
    let trials: Vec<usize> = match trial {
        Some(t) => {
            if t == 0 || t > split.n_trials() {
                return Err(Error::Config(format!(
                    "trial {t} out of range 1..={}",
                    split.n_trials()
                )));
            }
            vec![t]
        }
        None => (1..=split.n_trials()).collect(),
    };

    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;
    let mut results = run_experiment::<Real>(&cfg, &manifest, &split, &trials, parallel)?;
    for result in results.iter_mut() {
        write_trial_artifacts(&out_dir, &cfg, result)?;
        println!(
            "{}: trial {} test AUC {:.4} (sens {:.4}, spec {:.4}, threshold {:.4})",
            cfg.experiment_id,
            result.trial,
            result.report.auc,
            result.report.sensitivity,
            result.report.specificity,
            result.report.threshold
        );
    }
    Ok(())
}

fn cmd_evaluate(
    checkpoint: PathBuf,
    manifest: PathBuf,
    split: PathBuf,
    trial: usize,
    out: PathBuf,
    roc_csv: Option<PathBuf>,
) -> Result<()> {
    let meta = load_checkpoint_meta(&checkpoint)?;
    let cfg: ExperimentConfig = serde_json::from_value(
        meta.get("config")
            .cloned()
            .ok_or_else(|| Error::Checkpoint("checkpoint carries no config echo".into()))?,
    )
    .map_err(|e| Error::Checkpoint(e.to_string()))?;
    cfg.validate()?;
    let manifest = read_manifest(&manifest)?;
    let split = FoldSplit::read(&split)?;

    let mut model =
        ExperimentModel::<Real>::new(cfg.model_config()?, ausculta::RngSeed(cfg.seed))?;
    load_checkpoint(&checkpoint, &mut model)?;

    let mut subset: std::collections::HashSet<String> =
        split.test_subjects.iter().cloned().collect();
    subset.extend(split.validation_subjects(trial)?.iter().cloned());
    let data = Dataset::<Real>::load(
        &manifest,
        &cfg.instances(),
        &cfg.dsp,
        cfg.data_needs(),
        Some(&subset),
    )?;

    let val_idx = data.indices_of(split.validation_subjects(trial)?)?;
    let val_scores = score_subjects(&model, &data, &val_idx, cfg.train.batch_size)?;
    let val_labels = data.labels_of(&val_idx);
    let outcome = TrainOutcome {
        logs: Vec::new(),
        best_epoch: 0,
        best_val_auc: 0.0,
        model,
        val_scores,
        val_labels,
    };
    let (report, roc) = evaluate_trial(&cfg, &outcome, &data, &split, trial)?;

    let json =
        serde_json::to_string_pretty(&report).map_err(|e| Error::Schema(e.to_string()))?;
    std::fs::write(&out, json + "\n").map_err(|e| Error::io(&out, e))?;
    if let Some(p) = roc_csv {
        let mut csv = String::from("fpr,tpr,threshold\n");
        for (fpr, tpr, thr) in &roc {
            csv.push_str(&format!("{fpr},{tpr},{thr}\n"));
        }
        std::fs::write(&p, csv).map_err(|e| Error::io(&p, e))?;
    }
    println!(
        "{} trial {}: AUC {:.4}, sensitivity {:.4}, specificity {:.4} -> {}",
        report.experiment_id,
        trial,
        report.auc,
        report.sensitivity,
        report.specificity,
        out.display()
    );
    Ok(())
}

fn cmd_report(runs_dir: PathBuf, out_dir: PathBuf) -> Result<()> {
    let reports: Vec<MetricsReport> = scan_reports(&runs_dir)?;
    if reports.is_empty() {
        println!("warning: no *.report.json files under {}", runs_dir.display());
        return Ok(());
    }
    std::fs::create_dir_all(&out_dir).map_err(|e| Error::io(&out_dir, e))?;

    let summaries = aggregate(&reports);
    let table = render_table(&summaries);
    print!("{table}");
    let table_path = out_dir.join("summary.txt");
    std::fs::write(&table_path, &table).map_err(|e| Error::io(&table_path, e))?;

    let json = serde_json::to_string_pretty(&summaries)
        .map_err(|e| Error::Schema(e.to_string()))?;
    let json_path = out_dir.join("summary.json");
    std::fs::write(&json_path, json + "\n").map_err(|e| Error::io(&json_path, e))?;

    let counts = instance_count_table(&summaries);
    let counts_path = out_dir.join("auc_vs_instances.csv");
    std::fs::write(&counts_path, counts).map_err(|e| Error::io(&counts_path, e))?;

    for (experiment, curves) in scan_roc_curves(&runs_dir)? {
        let img = plot::roc_png(&curves);
        let png_path = out_dir.join(format!("{experiment}.roc.png"));
        img.save(&png_path).map_err(|e| Error::Checkpoint(format!("png encode: {e}")))?;
    }
    println!("report artifacts -> {}", out_dir.display());
    Ok(())
}
