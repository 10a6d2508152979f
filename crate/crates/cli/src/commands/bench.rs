//! `bench`: feed-forward timing for both factorizations. Reported
//! measurements only; nothing passes or fails here.

use std::path::PathBuf;
use std::time::Instant;

use clap::Args;
use graspformer_core::data::{ImageSequence, Modality};
use graspformer_core::error::Result;
use graspformer_core::params::{Bindings, ParamStore};
use graspformer_core::tensor::Tape;
use graspformer_core::transformer::{encode, init_encoder_params, EncoderConfig, Variant};
use rand::Rng;
use rand::SeedableRng;
use serde::Serialize;

use crate::commands::gen::parse_size;

#[derive(Debug, Args)]
pub struct BenchArgs {
    #[arg(long, default_value_t = 32)]
    pub embed_dim: usize,
    #[arg(long, default_value_t = 2)]
    pub layers: usize,
    #[arg(long, default_value_t = 4)]
    pub heads: usize,
    #[arg(long, default_value_t = 14)]
    pub frames: usize,
    /// Image size as HxW.
    #[arg(long, default_value = "32x24")]
    pub size: String,
    /// Patch size as HxW.
    #[arg(long, default_value = "8x6")]
    pub patch: String,
    #[arg(long, default_value_t = 1)]
    pub channels: usize,
    /// Timed forward passes per variant (after two warmups).
    #[arg(long, default_value_t = 20)]
    pub reps: usize,
    #[arg(long, default_value_t = 0)]
    pub seed: u64,
    /// Optional JSON output path.
    #[arg(long)]
    pub out: Option<PathBuf>,
}

#[derive(Serialize)]
struct BenchRow {
    variant: String,
    reps: usize,
    mean_ms: f64,
    min_ms: f64,
    max_ms: f64,
    tokens: usize,
    params: usize,
}

pub fn run(args: BenchArgs) -> Result<()> {
    let (h, w) = parse_size(&args.size)?;
    let (ph, pw) = parse_size(&args.patch)?;
    let mut rows = Vec::new();
    for variant in [Variant::DividedSpaceTime, Variant::FactorisedDotProduct] {
        let cfg = EncoderConfig::new(
            variant,
            args.embed_dim,
            args.layers,
            args.heads,
            (ph, pw),
            args.frames,
            (h, w),
            args.channels,
        );
        cfg.validate()?;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(args.seed);
        let mut store = ParamStore::new();
        init_encoder_params(&cfg, "enc", &mut store, &mut rng)?;
        let numel = cfg.frames * cfg.height * cfg.width * cfg.channels;
        let seq = ImageSequence::new(
            (0..numel).map(|_| rng.random::<f32>()).collect(),
            (cfg.frames, cfg.height, cfg.width, cfg.channels),
            Modality::Tactile,
            None,
        )?;
        let forward = || -> Result<f64> {
            let start = Instant::now();
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            let out = encode(&mut tape, &mut bind, &store, "enc", &seq, &cfg, None)?;
            let _ = tape.data(out);
            Ok(start.elapsed().as_secs_f64() * 1e3)
        };
        forward()?;
        forward()?;
        let mut times = Vec::with_capacity(args.reps);
        for _ in 0..args.reps {
            times.push(forward()?);
        }
        let mean = times.iter().sum::<f64>() / times.len() as f64;
        rows.push(BenchRow {
            variant: variant.to_string(),
            reps: args.reps,
            mean_ms: mean,
            min_ms: times.iter().cloned().fold(f64::INFINITY, f64::min),
            max_ms: times.iter().cloned().fold(0.0, f64::max),
            tokens: cfg.token_count(),
            params: cfg.param_count(),
        });
    }

    println!(
        "{:<24} {:>8} {:>10} {:>10} {:>10} {:>8} {:>9}",
        "variant", "reps", "mean ms", "min ms", "max ms", "tokens", "params"
    );
    for r in &rows {
        println!(
            "{:<24} {:>8} {:>10.3} {:>10.3} {:>10.3} {:>8} {:>9}",
            r.variant, r.reps, r.mean_ms, r.min_ms, r.max_ms, r.tokens, r.params
        );
    }
    if let Some(out) = &args.out {
        if let Some(parent) = out.parent() {
            if !parent.as_os_str().is_empty() {
                std::fs::create_dir_all(parent)?;
            }
        }
        std::fs::write(out, serde_json::to_string_pretty(&rows)?)?;
    }
    Ok(())
}
