//! `train`: the full training protocol. Datasets are split with a seeded
//! shuffle (several independent splits when requested, metrics averaged),
//! each split trains a fresh model, and checkpoints, a JSON-lines log, and a
//! metrics summary land in the output directory.

use std::fs::File;
use std::io::{BufWriter, Write};
use std::path::{Path, PathBuf};

use clap::Args;
use graspformer_core::data::{
    load_grasp_dataset, load_slip_dataset, make_splits, ImageSequence, SplitRatios,
};
use graspformer_core::error::{Error, Result};
use graspformer_core::models::{
    save_fruit_pipeline, FruitModel, FruitModelConfig, OutcomeModel, OutcomeModelConfig,
    SlipModality, SlipModel, SlipModelConfig,
};
use graspformer_core::train::{average_over_splits, train, Metrics, Task, TrainConfig};
use graspformer_core::transformer::{EncoderConfig, Variant};
use serde::{Deserialize, Serialize};

use super::{load_config, require_dir, require_file};
use crate::commands::gen::parse_size;

#[derive(Debug, Args)]
pub struct TrainArgs {
    /// Dataset root (a directory with manifest.json).
    #[arg(long)]
    pub data: PathBuf,
    /// Where checkpoints, logs, and metrics are written.
    #[arg(long)]
    pub out_dir: PathBuf,
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub task: Option<TaskArg>,
    #[arg(long, value_enum)]
    pub variant: Option<VariantArg>,
    #[arg(long, value_enum)]
    pub modality: Option<ModalityArg>,
    #[arg(long)]
    pub embed_dim: Option<usize>,
    #[arg(long)]
    pub layers: Option<usize>,
    #[arg(long)]
    pub heads: Option<usize>,
    /// Tactile patch size as HxW (default: a 4x4 grid over the image).
    #[arg(long)]
    pub tactile_patch: Option<String>,
    /// Visual patch size as HxW.
    #[arg(long)]
    pub visual_patch: Option<String>,
    #[arg(long)]
    pub lr: Option<f32>,
    #[arg(long)]
    pub epochs: Option<usize>,
    #[arg(long)]
    pub batch_size: Option<usize>,
    /// Shuffle/optimizer seed.
    #[arg(long)]
    pub seed: Option<u64>,
    /// Parameter initialization seed.
    #[arg(long)]
    pub model_seed: Option<u64>,
    /// Number of independent dataset splits to train on.
    #[arg(long)]
    pub splits: Option<usize>,
    #[arg(long)]
    pub split_seed: Option<u64>,
    /// Training-time dropout on the fused embedding (outcome task).
    #[arg(long)]
    pub embedding_dropout: Option<f32>,
    /// Outcome checkpoint providing the frozen backbone (fruit task).
    #[arg(long)]
    pub backbone: Option<PathBuf>,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum TaskArg {
    Slip,
    Outcome,
    Fruit,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum VariantArg {
    Divided,
    Factorised,
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum ModalityArg {
    Vision,
    Tactile,
    Both,
}

#[derive(Debug, Clone, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainCmdConfig {
    pub task: Task,
    pub variant: Variant,
    pub modality: SlipModality,
    pub embed_dim: usize,
    pub layers: usize,
    pub heads: usize,
    pub tactile_patch: Option<(usize, usize)>,
    pub visual_patch: Option<(usize, usize)>,
    /// Fused physical embedding width (outcome task).
    pub embedding_dim: usize,
    pub head_hidden: usize,
    /// Training-time dropout on the fused embedding (outcome task).
    pub embedding_dropout: f32,
    pub train: TrainConfig,
    pub num_splits: usize,
    pub split_seed: u64,
    pub ratios: SplitRatios,
    pub model_seed: u64,
}

impl Default for TrainCmdConfig {
    fn default() -> Self {
        TrainCmdConfig {
            task: Task::Slip,
            variant: Variant::DividedSpaceTime,
            modality: SlipModality::VisionAndTactile,
            embed_dim: 32,
            layers: 2,
            heads: 4,
            tactile_patch: None,
            visual_patch: None,
            embedding_dim: 32,
            head_hidden: 64,
            embedding_dropout: 0.3,
            train: TrainConfig::default(),
            num_splits: 1,
            split_seed: 0,
            ratios: SplitRatios::default(),
            model_seed: 0,
        }
    }
}

#[derive(Serialize)]
struct MetricsReport {
    task: Task,
    per_split: Vec<Metrics>,
    mean_accuracy: f64,
    var_accuracy: f64,
    mean_loss: f64,
    var_loss: f64,
    best_epochs: Vec<usize>,
    checkpoints: Vec<PathBuf>,
}

pub fn run(args: TrainArgs) -> Result<()> {
    let cfg = resolve(&args)?;
    require_dir(&args.data, "dataset")?;
    if let Some(b) = &args.backbone {
        require_file(b, "backbone checkpoint")?;
    }
    std::fs::create_dir_all(&args.out_dir)?;
    let log_path = args.out_dir.join("train_log.jsonl");
    let mut log = BufWriter::new(File::create(&log_path)?);

    let report = match cfg.task {
        Task::Slip => train_slip(&args, &cfg, &mut log)?,
        Task::Outcome => train_outcome(&args, &cfg, &mut log)?,
        Task::Fruit => train_fruit(&args, &cfg, &mut log)?,
    };
    log.flush()?;

    let metrics_path = args.out_dir.join("metrics.json");
    std::fs::write(&metrics_path, serde_json::to_string_pretty(&report)?)?;
    println!(
        "{}",
        serde_json::json!({
            "task": report.task,
            "splits": report.per_split.len(),
            "mean_accuracy": report.mean_accuracy,
            "var_accuracy": report.var_accuracy,
            "checkpoints": report.checkpoints,
            "log": log_path,
            "metrics": metrics_path,
        })
    );
    Ok(())
}

fn resolve(args: &TrainArgs) -> Result<TrainCmdConfig> {
    let mut cfg: TrainCmdConfig = load_config(args.config.as_deref())?;
    if let Some(t) = args.task {
        cfg.task = match t {
            TaskArg::Slip => Task::Slip,
            TaskArg::Outcome => Task::Outcome,
            TaskArg::Fruit => Task::Fruit,
        };
    }
    if let Some(v) = args.variant {
        cfg.variant = match v {
            VariantArg::Divided => Variant::DividedSpaceTime,
            VariantArg::Factorised => Variant::FactorisedDotProduct,
        };
    }
    if let Some(m) = args.modality {
        cfg.modality = match m {
            ModalityArg::Vision => SlipModality::VisionOnly,
            ModalityArg::Tactile => SlipModality::TactileOnly,
            ModalityArg::Both => SlipModality::VisionAndTactile,
        };
    }
    if let Some(v) = args.embed_dim {
        cfg.embed_dim = v;
    }
    if let Some(v) = args.layers {
        cfg.layers = v;
    }
    if let Some(v) = args.heads {
        cfg.heads = v;
    }
    if let Some(text) = &args.tactile_patch {
        cfg.tactile_patch = Some(parse_size(text)?);
    }
    if let Some(text) = &args.visual_patch {
        cfg.visual_patch = Some(parse_size(text)?);
    }
    if let Some(v) = args.lr {
        cfg.train.lr = v;
    }
    if let Some(v) = args.epochs {
        cfg.train.epochs = v;
    }
    if let Some(v) = args.batch_size {
        cfg.train.batch_size = v;
    }
    if let Some(v) = args.seed {
        cfg.train.seed = v;
    }
    if let Some(v) = args.model_seed {
        cfg.model_seed = v;
    }
    if let Some(v) = args.splits {
        cfg.num_splits = v;
    }
    if let Some(v) = args.split_seed {
        cfg.split_seed = v;
    }
    if let Some(v) = args.embedding_dropout {
        cfg.embedding_dropout = v;
    }
    cfg.train.task = cfg.task;
    cfg.train.validate()?;
    Ok(cfg)
}

/// Derives an encoder config from a sample sequence, defaulting the patch to
/// a 4x4 grid when none is given.
fn encoder_for(
    seq: &ImageSequence,
    cfg: &TrainCmdConfig,
    patch: Option<(usize, usize)>,
) -> Result<EncoderConfig> {
    let (h, w) = (seq.height(), seq.width());
    let patch = match patch {
        Some(p) => p,
        None => {
            if h % 4 != 0 || w % 4 != 0 {
                return Err(Error::Config(format!(
                    "image {h}x{w} has no default 4x4 patch grid; pass an explicit patch size"
                )));
            }
            (h / 4, w / 4)
        }
    };
    let enc = EncoderConfig::new(
        cfg.variant,
        cfg.embed_dim,
        cfg.layers,
        cfg.heads,
        patch,
        seq.frames(),
        (h, w),
        seq.channels(),
    );
    enc.validate()?;
    Ok(enc)
}

fn checkpoint_path(out_dir: &Path, stem: &str, split: usize, total: usize) -> PathBuf {
    if total == 1 {
        out_dir.join(format!("{stem}.ckpt"))
    } else {
        out_dir.join(format!("{stem}-split{split}.ckpt"))
    }
}

fn summarize(
    task: Task,
    per_split: Vec<Metrics>,
    best_epochs: Vec<usize>,
    checkpoints: Vec<PathBuf>,
) -> Result<MetricsReport> {
    let summary = average_over_splits(&per_split)?;
    Ok(MetricsReport {
        task,
        per_split,
        mean_accuracy: summary.mean_accuracy,
        var_accuracy: summary.var_accuracy,
        mean_loss: summary.mean_loss,
        var_loss: summary.var_loss,
        best_epochs,
        checkpoints,
    })
}

fn train_slip(args: &TrainArgs, cfg: &TrainCmdConfig, log: &mut dyn Write) -> Result<MetricsReport> {
    let samples = load_slip_dataset(&args.data)?;
    let splits = make_splits(samples.len(), cfg.ratios, cfg.num_splits, cfg.split_seed)?;
    let wants_visual = cfg.modality != SlipModality::TactileOnly;
    let wants_tactile = cfg.modality != SlipModality::VisionOnly;
    let visual = wants_visual
        .then(|| encoder_for(&samples[0].visual, cfg, cfg.visual_patch))
        .transpose()?;
    let tactile = wants_tactile
        .then(|| encoder_for(&samples[0].tactile, cfg, cfg.tactile_patch))
        .transpose()?;

    let mut per_split = Vec::new();
    let mut best_epochs = Vec::new();
    let mut checkpoints = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let model_config = SlipModelConfig {
            modality: cfg.modality,
            visual: visual.clone(),
            tactile: tactile.clone(),
            seed: cfg.model_seed.wrapping_add(i as u64),
        };
        let mut model = SlipModel::new(model_config)?;
        let mut split_cfg = cfg.train.clone();
        split_cfg.seed = cfg.train.seed.wrapping_add(i as u64);
        let out = train(&mut model, &samples, split, &split_cfg, i, Some(log))?;
        let path = checkpoint_path(&args.out_dir, "slip", i, splits.len());
        model.save(&path)?;
        per_split.push(out.test);
        best_epochs.push(out.best_epoch);
        checkpoints.push(path);
    }
    summarize(Task::Slip, per_split, best_epochs, checkpoints)
}

fn train_outcome(args: &TrainArgs, cfg: &TrainCmdConfig, log: &mut dyn Write) -> Result<MetricsReport> {
    let samples = load_grasp_dataset(&args.data)?;
    let splits = make_splits(samples.len(), cfg.ratios, cfg.num_splits, cfg.split_seed)?;
    let tactile = encoder_for(&samples[0].pinch_tactile, cfg, cfg.tactile_patch)?;
    let visual = encoder_for(&samples[0].pinch_visual, cfg, cfg.visual_patch)?;

    let mut per_split = Vec::new();
    let mut best_epochs = Vec::new();
    let mut checkpoints = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let model_config = OutcomeModelConfig {
            tactile: tactile.clone(),
            visual: visual.clone(),
            embedding_dim: cfg.embedding_dim,
            head_hidden: cfg.head_hidden,
            embedding_dropout: cfg.embedding_dropout,
            seed: cfg.model_seed.wrapping_add(i as u64),
        };
        let mut model = OutcomeModel::new(model_config)?;
        let mut split_cfg = cfg.train.clone();
        split_cfg.seed = cfg.train.seed.wrapping_add(i as u64);
        let out = train(&mut model, &samples, split, &split_cfg, i, Some(log))?;
        let path = checkpoint_path(&args.out_dir, "outcome", i, splits.len());
        model.save(&path)?;
        per_split.push(out.test);
        best_epochs.push(out.best_epoch);
        checkpoints.push(path);
    }
    summarize(Task::Outcome, per_split, best_epochs, checkpoints)
}

fn train_fruit(args: &TrainArgs, cfg: &TrainCmdConfig, log: &mut dyn Write) -> Result<MetricsReport> {
    let backbone_path = args
        .backbone
        .as_ref()
        .ok_or_else(|| Error::Config("the fruit task needs --backbone <outcome checkpoint>".into()))?;
    let backbone = OutcomeModel::load(backbone_path)?;
    let samples = load_grasp_dataset(&args.data)?;
    // The backbone is immutable here: embeddings are computed once up front.
    let embedded = backbone.embed_samples(&samples)?;
    let splits = make_splits(embedded.len(), cfg.ratios, cfg.num_splits, cfg.split_seed)?;

    let mut per_split = Vec::new();
    let mut best_epochs = Vec::new();
    let mut checkpoints = Vec::new();
    for (i, split) in splits.iter().enumerate() {
        let mut model = FruitModel::new(FruitModelConfig {
            embedding_dim: backbone.config.embedding_dim,
            head_hidden: cfg.head_hidden,
            seed: cfg.model_seed.wrapping_add(i as u64),
        })?;
        let mut split_cfg = cfg.train.clone();
        split_cfg.seed = cfg.train.seed.wrapping_add(i as u64);
        let out = train(&mut model, &embedded, split, &split_cfg, i, Some(log))?;
        let path = checkpoint_path(&args.out_dir, "fruit", i, splits.len());
        save_fruit_pipeline(&path, &backbone, &model)?;
        per_split.push(out.test);
        best_epochs.push(out.best_epoch);
        checkpoints.push(path);
    }
    summarize(Task::Fruit, per_split, best_epochs, checkpoints)
}
