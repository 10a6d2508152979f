//! `infer-force`: run the trained outcome predictor over every candidate
//! threshold and report the safe-set mean. When nothing is predicted safe,
//! the report carries the highest-safe-probability candidate as a fallback,
//! clearly labeled unsafe, and the command exits with a data error.

use std::path::PathBuf;

use clap::Args;
use graspformer_core::data::load_grasp_dataset;
use graspformer_core::error::{Error, Result};
use graspformer_core::force::{CandidateSet, ThresholdCall};
use graspformer_core::models::{load_model, LoadedModel};
use serde::Serialize;

use super::{require_dir, require_file};

#[derive(Debug, Args)]
pub struct InferArgs {
    /// Outcome-model checkpoint.
    #[arg(long)]
    pub checkpoint: PathBuf,
    /// Grasp dataset root.
    #[arg(long)]
    pub data: PathBuf,
    /// Sample id to infer for; omit with --all to cover the dataset.
    #[arg(long)]
    pub sample: Option<String>,
    /// Infer for every sample in the dataset.
    #[arg(long)]
    pub all: bool,
    /// JSON report path (defaults to stdout only).
    #[arg(long)]
    pub out: Option<PathBuf>,
    /// Candidate grid minimum (depth pixels).
    #[arg(long, default_value_t = 4)]
    pub min: i64,
    /// Candidate grid maximum (depth pixels).
    #[arg(long, default_value_t = 16)]
    pub max: i64,
    #[arg(long, default_value_t = 1)]
    pub step: i64,
    /// Use this many uniformly random candidates instead of the integer grid.
    #[arg(long)]
    pub random_candidates: Option<usize>,
    #[arg(long, default_value_t = 0)]
    pub candidate_seed: u64,
}

#[derive(Serialize)]
struct SampleReport {
    sample: String,
    candidates: Vec<f64>,
    calls: Vec<ThresholdCall>,
    safe_set: Vec<f64>,
    chosen_threshold: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    unsafe_fallback: Option<ThresholdCall>,
}

pub fn run(args: InferArgs) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_dir(&args.data, "dataset")?;
    if args.sample.is_none() && !args.all {
        return Err(Error::Config("pass --sample <id> or --all".into()));
    }
    let model = match load_model(&args.checkpoint)? {
        LoadedModel::Outcome(m) => m,
        LoadedModel::Fruit { backbone, .. } => backbone,
        LoadedModel::Slip(_) => {
            return Err(Error::Config("force inference needs an outcome checkpoint".into()))
        }
    };
    let candidates = match args.random_candidates {
        Some(count) => {
            CandidateSet::random_uniform(args.min as f64, args.max as f64, count, args.candidate_seed)?
        }
        None => CandidateSet::integer_range(args.min, args.max, args.step)?,
    };

    let samples = load_grasp_dataset(&args.data)?;
    let selected: Vec<usize> = match &args.sample {
        Some(id) => {
            let idx = samples
                .iter()
                .position(|s| &s.id == id)
                .ok_or_else(|| Error::Data(format!("no sample {id} in the dataset")))?;
            vec![idx]
        }
        None => (0..samples.len()).collect(),
    };

    let mut reports = Vec::with_capacity(selected.len());
    let mut any_unsafe = false;
    for idx in selected {
        let sample = &samples[idx];
        let embedding = model.extract_embedding(sample)?;
        let report = match model.select_safe_threshold(&embedding, &candidates) {
            Ok(r) => SampleReport {
                sample: sample.id.clone(),
                candidates: candidates.values().to_vec(),
                calls: r.calls,
                safe_set: r.safe_set,
                chosen_threshold: r.chosen_threshold,
                unsafe_fallback: None,
            },
            Err(Error::NoSafeThreshold(e)) => {
                any_unsafe = true;
                SampleReport {
                    sample: sample.id.clone(),
                    candidates: candidates.values().to_vec(),
                    calls: e.calls,
                    safe_set: vec![],
                    chosen_threshold: None,
                    unsafe_fallback: Some(e.fallback),
                }
            }
            Err(other) => return Err(other),
        };
        reports.push(report);
    }
    let json = serde_json::to_string_pretty(&reports)?;
    println!("{json}");
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, &json)?;
    }
    if any_unsafe {
        return Err(Error::Data(
            "no safe threshold for at least one sample; the fallback in the report is unsafe".into(),
        ));
    }
    Ok(())
}
