//! `convert-slip`: bring PNG frame folders into the canonical layout.

use std::path::PathBuf;

use clap::Args;
use graspformer_core::data::convert_slip_dataset;
use graspformer_core::error::Result;

use super::require_dir;

#[derive(Debug, Args)]
pub struct ConvertArgs {
    /// Source directory: `labels.csv` plus `<id>/visual/*.png` and
    /// `<id>/tactile/*.png` per sample.
    #[arg(long)]
    pub input: PathBuf,
    /// Output dataset directory.
    #[arg(long)]
    pub out: PathBuf,
}

pub fn run(args: ConvertArgs) -> Result<()> {
    require_dir(&args.input, "input")?;
    let count = convert_slip_dataset(&args.input, &args.out)?;
    println!(
        "{}",
        serde_json::json!({"converted": count, "out": args.out})
    );
    Ok(())
}
