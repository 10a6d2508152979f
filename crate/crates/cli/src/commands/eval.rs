//! `eval`: evaluate checkpoints against a dataset and print one row per
//! model, in the modality-by-model style of the benchmark tables.

use std::path::PathBuf;

use clap::Args;
use graspformer_core::data::{load_grasp_dataset, load_slip_dataset};
use graspformer_core::error::{Error, Result};
use graspformer_core::models::{load_model, LoadedModel};
use graspformer_core::train::{evaluate, Metrics};
use serde::Serialize;

use super::{require_dir, require_file};

#[derive(Debug, Args)]
pub struct EvalArgs {
    /// Dataset root to evaluate on (all samples are used as the test set).
    #[arg(long)]
    pub data: PathBuf,
    /// Checkpoints to evaluate; repeat the flag for a multi-row table.
    #[arg(long = "checkpoint", required = true)]
    pub checkpoints: Vec<PathBuf>,
    /// Optional JSON output path for the full metrics.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct EvalRow {
    checkpoint: PathBuf,
    task: String,
    variant: String,
    modality: String,
    accuracy: f64,
    loss: f64,
    metrics: Metrics,
}

pub fn run(args: EvalArgs) -> Result<()> {
    require_dir(&args.data, "dataset")?;
    for c in &args.checkpoints {
        require_file(c, "checkpoint")?;
    }

    let mut rows = Vec::new();
    let mut slip_cache = None;
    let mut grasp_cache = None;
    for path in &args.checkpoints {
        let row = match load_model(path)? {
            LoadedModel::Slip(model) => {
                if slip_cache.is_none() {
                    slip_cache = Some(load_slip_dataset(&args.data)?);
                }
                let samples = slip_cache.as_ref().unwrap();
                let metrics = evaluate(&model, samples, &all(samples.len()))?;
                let variant = model
                    .config
                    .tactile
                    .as_ref()
                    .or(model.config.visual.as_ref())
                    .map(|c| c.variant.to_string())
                    .unwrap_or_default();
                EvalRow {
                    checkpoint: path.clone(),
                    task: "slip".into(),
                    variant,
                    modality: model.config.modality.to_string(),
                    accuracy: metrics.accuracy,
                    loss: metrics.loss,
                    metrics,
                }
            }
            LoadedModel::Outcome(model) => {
                if grasp_cache.is_none() {
                    grasp_cache = Some(load_grasp_dataset(&args.data)?);
                }
                let samples = grasp_cache.as_ref().unwrap();
                let metrics = evaluate(&model, samples, &all(samples.len()))?;
                EvalRow {
                    checkpoint: path.clone(),
                    task: "outcome".into(),
                    variant: model.config.tactile.variant.to_string(),
                    modality: "vision & tactile".into(),
                    accuracy: metrics.accuracy,
                    loss: metrics.loss,
                    metrics,
                }
            }
            LoadedModel::Fruit { backbone, head } => {
                if grasp_cache.is_none() {
                    grasp_cache = Some(load_grasp_dataset(&args.data)?);
                }
                let samples = grasp_cache.as_ref().unwrap();
                let embedded = backbone.embed_samples(samples)?;
                let metrics = evaluate(&head, &embedded, &all(embedded.len()))?;
                EvalRow {
                    checkpoint: path.clone(),
                    task: "fruit".into(),
                    variant: backbone.config.tactile.variant.to_string(),
                    modality: "vision & tactile".into(),
                    accuracy: metrics.accuracy,
                    loss: metrics.loss,
                    metrics,
                }
            }
        };
        rows.push(row);
    }

    println!(
        "{:<32} {:<8} {:<24} {:<18} {:>9} {:>9}",
        "checkpoint", "task", "model", "modality", "accuracy", "loss"
    );
    for row in &rows {
        println!(
            "{:<32} {:<8} {:<24} {:<18} {:>9.4} {:>9.4}",
            row.checkpoint
                .file_name()
                .map(|n| n.to_string_lossy().into_owned())
                .unwrap_or_else(|| row.checkpoint.display().to_string()),
            row.task,
            row.variant,
            row.modality,
            row.accuracy,
            row.loss
        );
        let k = row.metrics.confusion.classes;
        for t in 0..k {
            let counts: Vec<String> = (0..k)
                .map(|p| format!("{:>5}", row.metrics.confusion.counts[t * k + p]))
                .collect();
            println!("    confusion[{t}] {}", counts.join(" "));
        }
    }

    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, serde_json::to_string_pretty(&rows)?)?;
    }
    if rows.is_empty() {
        return Err(Error::Config("no checkpoints to evaluate".into()));
    }
    Ok(())
}

fn all(n: usize) -> Vec<usize> {
    (0..n).collect()
}
