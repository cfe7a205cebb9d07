//! `rfgest` — experiment driver for the RFID gesture recognition pipeline.
//!
//! Every subcommand reads one TOML config (all keys optional), takes the
//! dataset as an ingest manifest, and writes its artifacts plus a
//! `run_manifest.csv` into the output directory.

use std::collections::BTreeSet;
use std::fs;
use std::path::{Path, PathBuf};

use anyhow::{bail, Context, Result};
use clap::{Parser, Subcommand};

use rfgest_core::config::Config;
use rfgest_core::eval::{misdetection_stats, subjects_of};
use rfgest_core::gnn::save_checkpoint;
use rfgest_core::ingest::{load_manifest, LogSchema};
use rfgest_core::pipeline::{
    ablate_tags, condition_samples, frames_csv, run_experiment, run_lopo, sweep, RunResult,
};
use rfgest_core::synth::{generate_dataset, write_dataset};
use rfgest_core::types::GestureSample;

#[derive(Parser)]
#[command(name = "rfgest", about = "RFID gesture recognition pipeline", version)]
struct Cli {
    /// TOML config file; missing keys fall back to defaults.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Override every seed in the config.
    #[arg(long, global = true)]
    seed: Option<u64>,
    /// Output directory for artifacts.
    #[arg(long, global = true, default_value = "runs/out")]
    out: PathBuf,
    /// Dataset manifest (one `sample_id,label,subject,env,distance,path`
    /// line per sample).
    #[arg(long, global = true)]
    dataset: Option<PathBuf>,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic labeled dataset and write logs plus manifest.
    Synth,
    /// Condition a dataset (normalize, smooth, pad, repair) and dump frames.
    Preprocess,
    /// Run train-mode imputation over the whole dataset; dump frames and audit log.
    Impute,
    /// Train a classifier on the configured split and save the checkpoint.
    Train,
    /// Train and evaluate on the configured split; write metrics and confusion matrices.
    Eval,
    /// Leave-one-person-out cross-validation over all subjects.
    Lopo,
    /// Full-pipeline rerun over the nu / l_rs / k grid.
    Sweep,
    /// Re-run the pipeline with tag sets removed.
    Ablate,
    /// Per-EPC and per-pair frame-missing rates.
    Stats,
}

struct RunDir {
    dir: PathBuf,
    written: Vec<String>,
}

impl RunDir {
    fn create(dir: &Path) -> Result<Self> {
        fs::create_dir_all(dir)
            .with_context(|| format!("creating output directory {}", dir.display()))?;
        Ok(RunDir {
            dir: dir.to_path_buf(),
            written: Vec::new(),
        })
    }

    fn write(&mut self, name: &str, content: &str) -> Result<()> {
        fs::write(self.dir.join(name), content)
            .with_context(|| format!("writing {name}"))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn write_bytes(&mut self, name: &str, content: &[u8]) -> Result<()> {
        fs::write(self.dir.join(name), content)
            .with_context(|| format!("writing {name}"))?;
        self.written.push(name.to_string());
        Ok(())
    }

    fn finish(mut self, command: &str) -> Result<()> {
        let mut manifest = String::from("artifact\n");
        self.written.sort();
        for name in &self.written {
            manifest.push_str(name);
            manifest.push('\n');
        }
        fs::write(self.dir.join("run_manifest.csv"), manifest)?;
        println!(
            "{command}: wrote {} artifact(s) to {}",
            self.written.len(),
            self.dir.display()
        );
        Ok(())
    }
}

fn load_config(cli: &Cli) -> Result<Config> {
    let mut config = match &cli.config {
        Some(path) => Config::from_path(path)?,
        None => Config::default(),
    };
    if let Some(seed) = cli.seed {
        config.override_seed(seed);
    }
    Ok(config)
}

fn load_samples(cli: &Cli) -> Result<Vec<GestureSample>> {
    let manifest = cli
        .dataset
        .as_ref()
        .context("this subcommand needs --dataset <manifest>")?;
    let samples = load_manifest(manifest, &LogSchema::default())?;
    if samples.is_empty() {
        bail!("dataset manifest {} holds no samples", manifest.display());
    }
    Ok(samples)
}

fn metrics_csv(rows: &[(String, &rfgest_core::eval::Metrics)]) -> String {
    let mut out = String::from("name,accuracy,macro_precision,macro_recall,macro_f1,samples\n");
    for (name, m) in rows {
        let total: usize = m.confusion.iter().flatten().sum();
        out.push_str(&format!(
            "{name},{:.6},{:.6},{:.6},{:.6},{total}\n",
            m.accuracy, m.macro_precision, m.macro_recall, m.macro_f1
        ));
    }
    out
}

fn trace_csv(trace: &[rfgest_core::gnn::EpochStats]) -> String {
    let mut out = String::from("epoch,loss,train_accuracy\n");
    for s in trace {
        out.push_str(&format!("{},{:.6},{:.6}\n", s.epoch, s.loss, s.accuracy));
    }
    out
}

fn audit_csv(audit: &[rfgest_core::impute::AuditRecord]) -> String {
    let mut out = String::from("sample_id,epc,branch,pair_cascade\n");
    for record in audit {
        out.push_str(&record.to_csv_row());
        out.push('\n');
    }
    out
}

fn predictions_csv(result: &RunResult) -> String {
    let mut out = String::from("sample_id,label,predicted\n");
    for p in &result.predictions {
        out.push_str(&format!("{},{},{}\n", p.sample_id, p.label, p.predicted));
    }
    out
}

fn write_run_artifacts(run: &mut RunDir, result: &RunResult) -> Result<()> {
    run.write(
        "metrics.csv",
        &metrics_csv(&[("eval".to_string(), &result.metrics)]),
    )?;
    run.write("confusion_counts.csv", &result.metrics.confusion_csv())?;
    run.write(
        "confusion_normalized.csv",
        &result.metrics.confusion_normalized_csv(),
    )?;
    run.write("trace.csv", &trace_csv(&result.trace))?;
    run.write("predictions.csv", &predictions_csv(result))?;
    run.write("impute_audit.csv", &audit_csv(&result.audit))?;
    if !result.imputation_failures.is_empty() {
        let mut failures = String::from("sample_id,reason\n");
        for (id, reason) in &result.imputation_failures {
            failures.push_str(&format!("{id},\"{reason}\"\n"));
        }
        run.write("impute_failures.csv", &failures)?;
    }
    let mut checkpoint = Vec::new();
    save_checkpoint(&result.params, &mut checkpoint)?;
    run.write_bytes("model.ckpt", &checkpoint)?;
    Ok(())
}

fn main() -> Result<()> {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = Cli::parse();
    let config = load_config(&cli)?;
    let mut run = RunDir::create(&cli.out)?;

    match cli.command {
        Command::Synth => {
            let synth_cfg = config.synth_config()?;
            let samples = generate_dataset(&synth_cfg)?;
            let manifest = write_dataset(&samples, &run.dir)?;
            run.written.push("manifest.csv".into());
            println!(
                "synth: {} samples ({} subjects x {} classes x {} reps) -> {}",
                samples.len(),
                synth_cfg.subjects,
                synth_cfg.classes,
                synth_cfg.reps,
                manifest.display()
            );
            run.finish("synth")
        }
        Command::Preprocess => {
            let samples = load_samples(&cli)?;
            let pipeline_cfg = config.pipeline_config()?;
            let conditioned = condition_samples(&samples, &pipeline_cfg);
            run.write("frames.csv", &frames_csv(&conditioned))?;
            run.finish("preprocess")
        }
        Command::Impute => {
            let samples = load_samples(&cli)?;
            let pipeline_cfg = config.pipeline_config()?;
            let conditioned = condition_samples(&samples, &pipeline_cfg);
            let all: Vec<usize> = (0..conditioned.len()).collect();
            let (gestures, audit, failures) = rfgest_core::pipeline::impute_split(
                &conditioned,
                &all,
                &pipeline_cfg,
                &BTreeSet::new(),
            );
            run.write("frames.csv", &frames_csv(&gestures))?;
            run.write("impute_audit.csv", &audit_csv(&audit))?;
            if !failures.is_empty() {
                let mut text = String::from("sample_id,reason\n");
                for (id, reason) in &failures {
                    text.push_str(&format!("{id},\"{reason}\"\n"));
                }
                run.write("impute_failures.csv", &text)?;
            }
            println!(
                "impute: repaired {} null frame(s), {} failure(s)",
                audit.len(),
                failures.len()
            );
            run.finish("impute")
        }
        Command::Train | Command::Eval => {
            let samples = load_samples(&cli)?;
            let pipeline_cfg = config.pipeline_config()?;
            let spec = config.split_spec(&subjects_of(&samples))?;
            let result = run_experiment(&samples, &pipeline_cfg, &spec)?;
            write_run_artifacts(&mut run, &result)?;
            println!(
                "eval: accuracy {:.4}, macro-F1 {:.4} over {} test samples",
                result.metrics.accuracy,
                result.metrics.macro_f1,
                result.predictions.len()
            );
            run.finish(if matches!(cli.command, Command::Train) {
                "train"
            } else {
                "eval"
            })
        }
        Command::Lopo => {
            let samples = load_samples(&cli)?;
            let pipeline_cfg = config.pipeline_config()?;
            let seed = config.split_spec(&subjects_of(&samples))?.seed;
            let result = run_lopo(&samples, &pipeline_cfg, seed)?;
            let rows: Vec<(String, &rfgest_core::eval::Metrics)> = result
                .folds
                .iter()
                .map(|(subject, m)| (format!("subject_{subject}"), m))
                .collect();
            run.write("lopo_metrics.csv", &metrics_csv(&rows))?;
            println!(
                "lopo: mean accuracy {:.4} over {} folds",
                result.mean_accuracy,
                result.folds.len()
            );
            run.finish("lopo")
        }
        Command::Sweep => {
            let samples = load_samples(&cli)?;
            let pipeline_cfg = config.pipeline_config()?;
            let spec = config.split_spec(&subjects_of(&samples))?;
            let grid = config.sweep_grid();
            let rows = sweep(&samples, &grid, &pipeline_cfg, &spec)?;
            let mut table =
                String::from("nu,l_rs,k,accuracy,macro_precision,macro_recall,macro_f1\n");
            for row in &rows {
                table.push_str(&format!(
                    "{},{},{},{:.6},{:.6},{:.6},{:.6}\n",
                    row.nu,
                    row.l_rs,
                    row.k,
                    row.metrics.accuracy,
                    row.metrics.macro_precision,
                    row.metrics.macro_recall,
                    row.metrics.macro_f1
                ));
            }
            run.write("sweep.csv", &table)?;
            println!("sweep: {} grid points", rows.len());
            run.finish("sweep")
        }
        Command::Ablate => {
            let samples = load_samples(&cli)?;
            let pipeline_cfg = config.pipeline_config()?;
            let spec = config.split_spec(&subjects_of(&samples))?;
            let mut table = String::from("removed,accuracy,macro_f1\n");
            for set in config.ablation_sets() {
                let removed: BTreeSet<u8> = set.iter().cloned().collect();
                let result = ablate_tags(&samples, &removed, &pipeline_cfg, &spec)?;
                let name = if removed.is_empty() {
                    "none".to_string()
                } else {
                    removed
                        .iter()
                        .map(|e| e.to_string())
                        .collect::<Vec<_>>()
                        .join("+")
                };
                println!("ablate {name}: accuracy {:.4}", result.metrics.accuracy);
                table.push_str(&format!(
                    "{name},{:.6},{:.6}\n",
                    result.metrics.accuracy, result.metrics.macro_f1
                ));
            }
            run.write("ablation.csv", &table)?;
            run.finish("ablate")
        }
        Command::Stats => {
            let samples = load_samples(&cli)?;
            let pipeline_cfg = config.pipeline_config()?;
            let conditioned = condition_samples(&samples, &pipeline_cfg);
            let stats = misdetection_stats(&conditioned, &pipeline_cfg.impute.proximity);
            run.write("misdetection.csv", &stats.to_csv())?;
            println!(
                "stats: {} samples, per-EPC missing rates {:?}",
                stats.sample_count,
                stats
                    .per_epc
                    .iter()
                    .map(|r| (r * 1000.0).round() / 1000.0)
                    .collect::<Vec<_>>()
            );
            run.finish("stats")
        }
    }
}
