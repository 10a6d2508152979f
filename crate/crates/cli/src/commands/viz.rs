//! `attention-viz`: record the attention of one forward pass, roll it out,
//! and write spatial heatmaps, a temporal profile, and the raw weights.

use std::path::{Path, PathBuf};

use clap::Args;
use graspformer_core::data::{load_grasp_dataset, load_slip_dataset, ImageSequence};
use graspformer_core::error::{Error, Result};
use graspformer_core::models::{load_model, GraspRecorders, LoadedModel, SlipRecorders};
use graspformer_core::params::Bindings;
use graspformer_core::rollout::{
    render_heatmap, rollout, temporal_profile, AttentionRecorder, AxisSelection, PatchWeights,
    RolloutMap,
};
use graspformer_core::tensor::Tape;
use graspformer_core::transformer::Variant;
use serde::Serialize;

use super::{require_dir, require_file};

#[derive(Debug, Clone, Copy, PartialEq, Eq, clap::ValueEnum)]
pub enum AxisArg {
    All,
    Temporal,
    Spatial,
}

#[derive(Debug, Args)]
pub struct VizArgs {
    #[arg(long)]
    pub checkpoint: PathBuf,
    #[arg(long)]
    pub data: PathBuf,
    /// Sample id to visualize.
    #[arg(long)]
    pub sample: String,
    #[arg(long)]
    pub out_dir: PathBuf,
    /// Which attention applications enter the rollout product.
    #[arg(long, value_enum, default_value_t = AxisArg::All)]
    pub axis: AxisArg,
    /// Spatial patch indices (at the final frame) for the temporal profile,
    /// comma separated; defaults to every patch.
    #[arg(long)]
    pub select_patches: Option<String>,
    /// Restrict output to one stream (e.g. pinch-tactile, visual).
    #[arg(long)]
    pub stream: Option<String>,
    /// Assert the checkpoint uses this factorization.
    #[arg(long, value_enum)]
    pub variant: Option<crate::commands::train::VariantArg>,
}

#[derive(Serialize)]
struct StreamSummary {
    stream: String,
    row_sums_ok: bool,
    temporal_profile: Vec<f32>,
    selected_patches: Vec<usize>,
    files: graspformer_core::rollout::HeatmapFiles,
}

pub fn run(args: VizArgs) -> Result<()> {
    require_file(&args.checkpoint, "checkpoint")?;
    require_dir(&args.data, "dataset")?;
    let selection = match args.axis {
        AxisArg::All => AxisSelection::All,
        AxisArg::Temporal => AxisSelection::TemporalOnly,
        AxisArg::Spatial => AxisSelection::SpatialOnly,
    };
    std::fs::create_dir_all(&args.out_dir)?;

    let mut streams: Vec<(String, AttentionRecorder, ImageSequence, Variant, (usize, usize))> =
        Vec::new();
    match load_model(&args.checkpoint)? {
        LoadedModel::Slip(model) => {
            let samples = load_slip_dataset(&args.data)?;
            let sample = samples
                .iter()
                .find(|s| s.id == args.sample)
                .ok_or_else(|| Error::Data(format!("no sample {} in the dataset", args.sample)))?;
            check_variant(args.variant, model.config.tactile.as_ref().or(model.config.visual.as_ref()).map(|c| c.variant))?;
            let mut rec = SlipRecorders::default();
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            model.logits_with_recorders(&mut tape, &mut bind, sample, Some(&mut rec))?;
            if let Some(cfg) = &model.config.visual {
                streams.push((
                    "visual".into(),
                    rec.visual,
                    sample.visual.clone(),
                    cfg.variant,
                    (cfg.height / cfg.patch_h, cfg.width / cfg.patch_w),
                ));
            }
            if let Some(cfg) = &model.config.tactile {
                streams.push((
                    "tactile".into(),
                    rec.tactile,
                    sample.tactile.clone(),
                    cfg.variant,
                    (cfg.height / cfg.patch_h, cfg.width / cfg.patch_w),
                ));
            }
        }
        LoadedModel::Outcome(model) | LoadedModel::Fruit { backbone: model, .. } => {
            let samples = load_grasp_dataset(&args.data)?;
            let sample = samples
                .iter()
                .find(|s| s.id == args.sample)
                .ok_or_else(|| Error::Data(format!("no sample {} in the dataset", args.sample)))?;
            check_variant(args.variant, Some(model.config.tactile.variant))?;
            let mut rec = GraspRecorders::default();
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            model.embedding_with_recorders(&mut tape, &mut bind, sample, Some(&mut rec))?;
            let t_grid = (
                model.config.tactile.height / model.config.tactile.patch_h,
                model.config.tactile.width / model.config.tactile.patch_w,
            );
            let v_grid = (
                model.config.visual.height / model.config.visual.patch_h,
                model.config.visual.width / model.config.visual.patch_w,
            );
            streams.push((
                "pinch-tactile".into(),
                rec.pinch_tactile,
                sample.pinch_tactile.clone(),
                model.config.tactile.variant,
                t_grid,
            ));
            streams.push((
                "pinch-visual".into(),
                rec.pinch_visual,
                sample.pinch_visual.clone(),
                model.config.visual.variant,
                v_grid,
            ));
            streams.push((
                "slide-tactile".into(),
                rec.slide_tactile,
                sample.slide_tactile.clone(),
                model.config.tactile.variant,
                t_grid,
            ));
            streams.push((
                "slide-visual".into(),
                rec.slide_visual,
                sample.slide_visual.clone(),
                model.config.visual.variant,
                v_grid,
            ));
        }
    }
    if let Some(filter) = &args.stream {
        streams.retain(|(name, ..)| name == filter);
        if streams.is_empty() {
            return Err(Error::Config(format!("no stream named {filter:?} in this model")));
        }
    }

    let mut summaries = Vec::new();
    for (name, rec, seq, variant, grid) in streams {
        let map = rollout(&rec, selection)?;
        let weights = readout_weights(&map, variant);
        let dir = args.out_dir.join(&name);
        let files = render_heatmap(&weights, grid, Some(&seq), &dir, "rollout")?;
        let selected = parse_selection(args.select_patches.as_deref(), map.spatial)?;
        let profile = temporal_profile(&map, &selected)?;
        let row_sums_ok = (0..map.token_count).all(|r| {
            let sum: f32 = map.row(r).iter().sum();
            (sum - 1.0).abs() < 1e-4
        });
        let summary = StreamSummary {
            stream: name,
            row_sums_ok,
            temporal_profile: profile,
            selected_patches: selected,
            files,
        };
        std::fs::write(dir.join("profile.json"), serde_json::to_string_pretty(&summary)?)?;
        write_profile_csv(&dir.join("profile.csv"), &summary.temporal_profile)?;
        summaries.push(summary);
    }
    println!("{}", serde_json::to_string_pretty(&summaries)?);
    Ok(())
}

/// The attribution row matching the encoder's readout: the CLS row for the
/// divided variant, the token average for factorised dot-product.
fn readout_weights(map: &RolloutMap, variant: Variant) -> PatchWeights {
    match variant {
        Variant::DividedSpaceTime => map.cls_patch_weights().unwrap_or_else(|_| map.pooled_patch_weights()),
        Variant::FactorisedDotProduct => map.pooled_patch_weights(),
    }
}

fn parse_selection(text: Option<&str>, spatial: usize) -> Result<Vec<usize>> {
    match text {
        None => Ok((0..spatial).collect()),
        Some(t) => {
            let mut out = Vec::new();
            for part in t.split(',') {
                let idx: usize = part
                    .trim()
                    .parse()
                    .map_err(|_| Error::Config(format!("bad patch index {part:?}")))?;
                if idx >= spatial {
                    return Err(Error::Config(format!(
                        "patch index {idx} out of range (spatial = {spatial})"
                    )));
                }
                out.push(idx);
            }
            if out.is_empty() {
                return Err(Error::Config("empty patch selection".into()));
            }
            Ok(out)
        }
    }
}

fn write_profile_csv(path: &Path, profile: &[f32]) -> Result<()> {
    let mut csv = String::from("frame,weight\n");
    for (f, w) in profile.iter().enumerate() {
        csv.push_str(&format!("{f},{w}\n"));
    }
    std::fs::write(path, csv)?;
    Ok(())
}

fn check_variant(
    want: Option<crate::commands::train::VariantArg>,
    have: Option<Variant>,
) -> Result<()> {
    use crate::commands::train::VariantArg;
    if let (Some(want), Some(have)) = (want, have) {
        let matches = matches!(
            (want, have),
            (VariantArg::Divided, Variant::DividedSpaceTime)
                | (VariantArg::Factorised, Variant::FactorisedDotProduct)
        );
        if !matches {
            return Err(Error::Config(format!(
                "checkpoint uses {have}, but --variant asked for {want:?}"
            )));
        }
    }
    Ok(())
}
