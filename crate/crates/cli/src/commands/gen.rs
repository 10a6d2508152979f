//! `gen-synthetic`: write a synthetic grasp or slip dataset to disk.

use std::path::PathBuf;

use clap::Args;
use graspformer_core::data::{generate_grasp, generate_slip, save_grasp_dataset, save_slip_dataset, SyntheticSpec};
use graspformer_core::error::{Error, Result};
use serde::{Deserialize, Serialize};

use super::load_config;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize, clap::ValueEnum)]
#[serde(rename_all = "kebab-case")]
pub enum DatasetKind {
    Grasp,
    Slip,
}

#[derive(Debug, Args)]
pub struct GenArgs {
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
    /// JSON config file; flags override its fields.
    #[arg(long)]
    pub config: Option<PathBuf>,
    #[arg(long, value_enum)]
    pub kind: Option<DatasetKind>,
    #[arg(long)]
    pub samples: Option<usize>,
    #[arg(long)]
    pub seed: Option<u64>,
    #[arg(long)]
    pub noise: Option<f32>,
    /// Tactile image size as HxW, e.g. 64x48.
    #[arg(long)]
    pub tactile_size: Option<String>,
    /// Visual image size as HxW.
    #[arg(long)]
    pub visual_size: Option<String>,
    #[arg(long)]
    pub raw_frames: Option<usize>,
}

#[derive(Debug, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
struct GenConfig {
    kind: DatasetKind,
    spec: SyntheticSpec,
}

impl Default for GenConfig {
    fn default() -> Self {
        GenConfig { kind: DatasetKind::Slip, spec: SyntheticSpec::default() }
    }
}

pub fn parse_size(text: &str) -> Result<(usize, usize)> {
    let (h, w) = text
        .split_once(['x', 'X'])
        .ok_or_else(|| Error::Config(format!("expected HxW, got {text:?}")))?;
    let parse = |s: &str| {
        s.trim()
            .parse::<usize>()
            .map_err(|_| Error::Config(format!("bad dimension {s:?} in {text:?}")))
    };
    Ok((parse(h)?, parse(w)?))
}

pub fn run(args: GenArgs) -> Result<()> {
    let mut cfg: GenConfig = load_config(args.config.as_deref())?;
    if let Some(kind) = args.kind {
        cfg.kind = kind;
    }
    if let Some(v) = args.samples {
        cfg.spec.samples = v;
    }
    if let Some(v) = args.seed {
        cfg.spec.seed = v;
    }
    if let Some(v) = args.noise {
        cfg.spec.noise = v;
    }
    if let Some(v) = args.raw_frames {
        cfg.spec.raw_frames = v;
    }
    if let Some(text) = &args.tactile_size {
        (cfg.spec.tactile_height, cfg.spec.tactile_width) = parse_size(text)?;
    }
    if let Some(text) = &args.visual_size {
        (cfg.spec.visual_height, cfg.spec.visual_width) = parse_size(text)?;
    }
    cfg.spec.validate()?;

    let count = match cfg.kind {
        DatasetKind::Grasp => {
            let samples = generate_grasp(&cfg.spec)?;
            save_grasp_dataset(&args.out, &samples)?;
            samples.len()
        }
        DatasetKind::Slip => {
            let samples = generate_slip(&cfg.spec)?;
            save_slip_dataset(&args.out, &samples)?;
            samples.len()
        }
    };
    println!(
        "{}",
        serde_json::json!({
            "kind": cfg.kind,
            "samples": count,
            "seed": cfg.spec.seed,
            "out": args.out,
        })
    );
    Ok(())
}
