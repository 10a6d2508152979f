//! Patch extraction, token embedding, the two layer kinds, and the encoder
//! stack that turns one image sequence into a single D-vector.

use crate::data::ImageSequence;
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::rollout::{AttentionRecorder, AttnAxis};
use crate::tensor::{Tape, Tensor, TensorId};
use crate::transformer::attention::{multi_head, AttnProjections, TokenGroups};
use crate::transformer::{EncoderConfig, LayerNames, TokenGrid, Variant, LAYER_NORM_EPS};

/// Splits a sequence into flattened patches: one row per patch, frame-major
/// then row-major within the frame, each row a `[P_h, P_w, C]` flattening.
pub fn patchify(seq: &ImageSequence, cfg: &EncoderConfig) -> Result<Tensor> {
    cfg.validate()?;
    let dims = (seq.frames(), seq.height(), seq.width(), seq.channels());
    let want = (cfg.frames, cfg.height, cfg.width, cfg.channels);
    if dims != want {
        return Err(Error::Shape {
            op: "patchify",
            lhs: vec![dims.0, dims.1, dims.2, dims.3],
            rhs: vec![want.0, want.1, want.2, want.3],
        });
    }
    let (gh, gw) = (cfg.height / cfg.patch_h, cfg.width / cfg.patch_w);
    let mut data = Vec::with_capacity(cfg.patch_count() * cfg.patch_dim());
    for t in 0..cfg.frames {
        for gy in 0..gh {
            for gx in 0..gw {
                for py in 0..cfg.patch_h {
                    for px in 0..cfg.patch_w {
                        for c in 0..cfg.channels {
                            data.push(seq.pixel(t, gy * cfg.patch_h + py, gx * cfg.patch_w + px, c));
                        }
                    }
                }
            }
        }
    }
    Tensor::new(data, &[cfg.patch_count(), cfg.patch_dim()])
}

/// Projects patches to D, prepends the CLS token for the divided variant,
/// and adds the positional table.
pub fn embed(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    prefix: &str,
    patches: TensorId,
    cfg: &EncoderConfig,
) -> Result<TokenGrid> {
    let w = bind.bind(tape, store, &format!("{prefix}.embed.w"))?;
    let projected = tape.matmul(patches, w)?;
    let tokens = if cfg.has_cls() {
        let cls = bind.bind(tape, store, &format!("{prefix}.cls"))?;
        tape.concat_rows(&[cls, projected])?
    } else {
        projected
    };
    let pos = bind.bind(tape, store, &format!("{prefix}.pos"))?;
    let with_pos = tape.add(tokens, pos)?;
    Ok(TokenGrid {
        tokens: with_pos,
        frames: cfg.frames,
        spatial: cfg.tokens_per_frame(),
        has_cls: cfg.has_cls(),
    })
}

struct BoundLayer {
    proj_qkv: (TensorId, TensorId, TensorId),
    wo: TensorId,
    wfuse: Option<TensorId>,
    ln1: (TensorId, TensorId),
    ln2: (TensorId, TensorId),
    ln3: Option<(TensorId, TensorId)>,
    mlp: (TensorId, TensorId, TensorId, TensorId),
}

fn bind_layer(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    prefix: &str,
    layer: usize,
    variant: Variant,
) -> Result<BoundLayer> {
    let names = LayerNames::new(prefix, layer);
    let divided = variant == Variant::DividedSpaceTime;
    Ok(BoundLayer {
        proj_qkv: (
            bind.bind(tape, store, &names.wq)?,
            bind.bind(tape, store, &names.wk)?,
            bind.bind(tape, store, &names.wv)?,
        ),
        wo: bind.bind(tape, store, &names.wo)?,
        wfuse: if divided { None } else { Some(bind.bind(tape, store, &names.wfuse)?) },
        ln1: (bind.bind(tape, store, &names.ln1_g)?, bind.bind(tape, store, &names.ln1_b)?),
        ln2: (bind.bind(tape, store, &names.ln2_g)?, bind.bind(tape, store, &names.ln2_b)?),
        ln3: if divided {
            Some((bind.bind(tape, store, &names.ln3_g)?, bind.bind(tape, store, &names.ln3_b)?))
        } else {
            None
        },
        mlp: (
            bind.bind(tape, store, &names.mlp_w1)?,
            bind.bind(tape, store, &names.mlp_b1)?,
            bind.bind(tape, store, &names.mlp_w2)?,
            bind.bind(tape, store, &names.mlp_b2)?,
        ),
    })
}

fn mlp_sublayer(tape: &mut Tape, x: TensorId, p: &BoundLayer) -> Result<TensorId> {
    let (w1, b1, w2, b2) = p.mlp;
    let h = tape.matmul(x, w1)?;
    let h = tape.add_bias(h, b1)?;
    let h = tape.gelu(h)?;
    let h = tape.matmul(h, w2)?;
    tape.add_bias(h, b2)
}

/// One divided space-time layer: temporal attention, then spatial attention,
/// then the MLP, each behind a pre-LayerNorm with a residual around it. The
/// CLS token skips temporal attention and joins every frame's spatial group;
/// its per-frame outputs are averaged.
pub fn divided_layer(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    prefix: &str,
    layer: usize,
    grid: TokenGrid,
    cfg: &EncoderConfig,
    mut recorder: Option<&mut AttentionRecorder>,
) -> Result<TokenGrid> {
    let p = bind_layer(tape, bind, store, prefix, layer, Variant::DividedSpaceTime)?;
    let (wq, wk, wv) = p.proj_qkv;
    let proj = AttnProjections { wq, wk, wv, wo: p.wo };
    let x = grid.tokens;

    let ln1 = tape.layer_norm(x, p.ln1.0, p.ln1.1, LAYER_NORM_EPS)?;
    if let Some(rec) = recorder.as_deref_mut() {
        rec.begin_application(layer, AttnAxis::Temporal);
    }
    let t_attn = multi_head(
        tape,
        ln1,
        &proj,
        cfg.num_heads,
        0..cfg.num_heads,
        &TokenGroups::temporal(&grid),
        recorder.as_deref_mut(),
    )?;
    let y1 = tape.add(x, t_attn)?;

    let ln2 = tape.layer_norm(y1, p.ln2.0, p.ln2.1, LAYER_NORM_EPS)?;
    if let Some(rec) = recorder.as_deref_mut() {
        rec.begin_application(layer, AttnAxis::Spatial);
    }
    let s_attn = multi_head(
        tape,
        ln2,
        &proj,
        cfg.num_heads,
        0..cfg.num_heads,
        &TokenGroups::spatial(&grid),
        recorder.as_deref_mut(),
    )?;
    let y2 = tape.add(y1, s_attn)?;

    let (g3, b3) = p.ln3.expect("divided layers carry a third LayerNorm");
    let ln3 = tape.layer_norm(y2, g3, b3, LAYER_NORM_EPS)?;
    let m = mlp_sublayer(tape, ln3, &p)?;
    let out = tape.add(y2, m)?;
    Ok(TokenGrid { tokens: out, ..grid })
}

/// One factorised dot-product layer: the first half of the heads attends
/// spatially and the second half temporally, in parallel over the same
/// normalized input; the two D-wide outputs are concatenated and fused back
/// to D, then the MLP sublayer follows.
pub fn factorised_layer(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    prefix: &str,
    layer: usize,
    grid: TokenGrid,
    cfg: &EncoderConfig,
    mut recorder: Option<&mut AttentionRecorder>,
) -> Result<TokenGrid> {
    if cfg.num_heads % 2 != 0 {
        return Err(Error::Config(format!(
            "factorised dot-product attention needs an even head count, got {}",
            cfg.num_heads
        )));
    }
    let p = bind_layer(tape, bind, store, prefix, layer, Variant::FactorisedDotProduct)?;
    let (wq, wk, wv) = p.proj_qkv;
    let x = grid.tokens;
    let h = cfg.num_heads;
    let half_rows = (h / 2) * cfg.head_dim();

    let ln1 = tape.layer_norm(x, p.ln1.0, p.ln1.1, LAYER_NORM_EPS)?;
    if let Some(rec) = recorder.as_deref_mut() {
        rec.begin_application(layer, AttnAxis::Spatial);
    }
    let wo_spatial_rows: Vec<usize> = (0..half_rows).collect();
    let wo_spatial = tape.gather_rows(p.wo, &wo_spatial_rows)?;
    let spatial = multi_head(
        tape,
        ln1,
        &AttnProjections { wq, wk, wv, wo: wo_spatial },
        h,
        0..h / 2,
        &TokenGroups::spatial(&grid),
        recorder.as_deref_mut(),
    )?;

    if let Some(rec) = recorder.as_deref_mut() {
        rec.set_axis(AttnAxis::Temporal);
    }
    let wo_temporal_rows: Vec<usize> = (half_rows..2 * half_rows).collect();
    let wo_temporal = tape.gather_rows(p.wo, &wo_temporal_rows)?;
    let temporal = multi_head(
        tape,
        ln1,
        &AttnProjections { wq, wk, wv, wo: wo_temporal },
        h,
        h / 2..h,
        &TokenGroups::temporal(&grid),
        recorder.as_deref_mut(),
    )?;

    let both = tape.concat_lastdim(&[spatial, temporal])?;
    let fused = tape.matmul(both, p.wfuse.expect("factorised layers carry a fuse matrix"))?;
    let y1 = tape.add(x, fused)?;

    let ln2 = tape.layer_norm(y1, p.ln2.0, p.ln2.1, LAYER_NORM_EPS)?;
    let m = mlp_sublayer(tape, ln2, &p)?;
    let out = tape.add(y1, m)?;
    Ok(TokenGrid { tokens: out, ..grid })
}

/// Runs the full encoder over one image sequence and reads out the sequence
/// feature: the CLS row for the divided variant, the mean over all patch
/// tokens for the factorised one. Output shape is `[1, D]`.
pub fn encode(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    prefix: &str,
    seq: &ImageSequence,
    cfg: &EncoderConfig,
    mut recorder: Option<&mut AttentionRecorder>,
) -> Result<TensorId> {
    let patches = patchify(seq, cfg)?;
    let pid = tape.leaf(&patches);
    let mut grid = embed(tape, bind, store, prefix, pid, cfg)?;
    if let Some(rec) = recorder.as_deref_mut() {
        rec.set_grid(grid.token_count(), grid.frames, grid.spatial, grid.has_cls);
    }
    for layer in 0..cfg.num_layers {
        grid = match cfg.variant {
            Variant::DividedSpaceTime => {
                divided_layer(tape, bind, store, prefix, layer, grid, cfg, recorder.as_deref_mut())?
            }
            Variant::FactorisedDotProduct => {
                factorised_layer(tape, bind, store, prefix, layer, grid, cfg, recorder.as_deref_mut())?
            }
        };
    }
    match cfg.variant {
        Variant::DividedSpaceTime => tape.gather_rows(grid.tokens, &[0]),
        Variant::FactorisedDotProduct => {
            let mean = tape.mean_over_axis(grid.tokens, 0)?;
            tape.reshape(mean, &[1, cfg.embed_dim])
        }
    }
}

/// An encoder's config plus its parameter namespace inside a store.
#[derive(Debug, Clone)]
pub struct Encoder {
    pub cfg: EncoderConfig,
    pub prefix: String,
}

impl Encoder {
    pub fn new(cfg: EncoderConfig, prefix: impl Into<String>) -> Result<Self> {
        cfg.validate()?;
        Ok(Encoder { cfg, prefix: prefix.into() })
    }

    pub fn init_params<R: rand::Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        super::init_encoder_params(&self.cfg, &self.prefix, store, rng)
    }

    pub fn encode(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        store: &ParamStore,
        seq: &ImageSequence,
        recorder: Option<&mut AttentionRecorder>,
    ) -> Result<TensorId> {
        encode(tape, bind, store, &self.prefix, seq, &self.cfg, recorder)
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::Modality;
    use crate::transformer::init_encoder_params;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn tiny_cfg(variant: Variant) -> EncoderConfig {
        EncoderConfig::new(variant, 8, 2, 2, (2, 2), 2, (4, 4), 1)
    }

    fn seq(cfg: &EncoderConfig, f: impl Fn(usize) -> f32) -> ImageSequence {
        let n = cfg.frames * cfg.height * cfg.width * cfg.channels;
        ImageSequence::new(
            (0..n).map(f).collect(),
            (cfg.frames, cfg.height, cfg.width, cfg.channels),
            Modality::Tactile,
            None,
        )
        .unwrap()
    }

    #[test]
    fn patchify_single_patch_is_flattened_image() {
        let cfg = EncoderConfig::new(Variant::FactorisedDotProduct, 4, 1, 2, (2, 2), 1, (2, 2), 1);
        let s = seq(&cfg, |i| i as f32 / 10.0);
        let p = patchify(&s, &cfg).unwrap();
        assert_eq!(p.shape(), &[1, 4]);
        assert_eq!(p.data(), &[0.0, 0.1, 0.2, 0.3]);
    }

    #[test]
    fn patchify_row_order_is_frame_major() {
        let cfg = tiny_cfg(Variant::FactorisedDotProduct);
        // Mark each pixel by frame index so rows sort by frame.
        let s = seq(&cfg, |i| (i / 16) as f32 * 0.5);
        let p = patchify(&s, &cfg).unwrap();
        assert_eq!(p.shape(), &[8, 4]);
        for row in 0..4 {
            assert!(p.data()[row * 4..(row + 1) * 4].iter().all(|&v| v == 0.0));
        }
        for row in 4..8 {
            assert!(p.data()[row * 4..(row + 1) * 4].iter().all(|&v| v == 0.5));
        }
    }

    #[test]
    fn patchify_rejects_wrong_dims() {
        let cfg = tiny_cfg(Variant::FactorisedDotProduct);
        let other = EncoderConfig { frames: 3, ..cfg.clone() };
        let s = seq(&other, |_| 0.0);
        assert!(matches!(patchify(&s, &cfg), Err(Error::Shape { .. })));
    }

    #[test]
    fn embed_token_counts_per_variant() {
        let mut rng = ChaCha8Rng::seed_from_u64(3);
        for (variant, expect_rows) in [(Variant::DividedSpaceTime, 9), (Variant::FactorisedDotProduct, 8)] {
            let cfg = tiny_cfg(variant);
            let mut store = ParamStore::new();
            init_encoder_params(&cfg, "enc", &mut store, &mut rng).unwrap();
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            let patches = patchify(&seq(&cfg, |_| 0.3), &cfg).unwrap();
            let pid = tape.leaf(&patches);
            let grid = embed(&mut tape, &mut bind, &store, "enc", pid, &cfg).unwrap();
            assert_eq!(tape.shape(grid.tokens), &[expect_rows, 8]);
        }
    }

    #[test]
    fn zero_patches_zero_pos_give_zero_tokens() {
        let cfg = tiny_cfg(Variant::FactorisedDotProduct);
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(4);
        init_encoder_params(&cfg, "enc", &mut store, &mut rng).unwrap();
        store.get_mut("enc.pos").unwrap().data_mut().fill(0.0);
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let pid = tape.constant(vec![0.0; 8 * 4], &[8, 4]).unwrap();
        let grid = embed(&mut tape, &mut bind, &store, "enc", pid, &cfg).unwrap();
        assert!(tape.data(grid.tokens).iter().all(|&v| v == 0.0));
    }

    #[test]
    fn zero_layer_divided_encode_returns_cls_plus_pos() {
        let mut cfg = tiny_cfg(Variant::DividedSpaceTime);
        cfg.num_layers = 0;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(5);
        init_encoder_params(&cfg, "enc", &mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let out = encode(&mut tape, &mut bind, &store, "enc", &seq(&cfg, |_| 0.5), &cfg, None).unwrap();
        let cls = store.get("enc.cls").unwrap().data();
        let pos = &store.get("enc.pos").unwrap().data()[..8];
        for ((o, c), p) in tape.data(out).iter().zip(cls).zip(pos) {
            assert!((o - (c + p)).abs() < 1e-6);
        }
    }

    #[test]
    fn zero_layer_factorised_mean_of_equal_tokens() {
        let mut cfg = tiny_cfg(Variant::FactorisedDotProduct);
        cfg.num_layers = 0;
        let mut store = ParamStore::new();
        let mut rng = ChaCha8Rng::seed_from_u64(6);
        init_encoder_params(&cfg, "enc", &mut store, &mut rng).unwrap();
        store.get_mut("enc.pos").unwrap().data_mut().fill(0.0);
        // Constant image -> identical patches -> identical token rows.
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let out = encode(&mut tape, &mut bind, &store, "enc", &seq(&cfg, |_| 0.7), &cfg, None).unwrap();
        // Compare to one projected patch row.
        let patches = patchify(&seq(&cfg, |_| 0.7), &cfg).unwrap();
        let pid = tape.leaf(&patches);
        let w = bind.bind(&mut tape, &store, "enc.embed.w").unwrap();
        let rows = tape.matmul(pid, w).unwrap();
        for (o, r) in tape.data(out).iter().zip(tape.data(rows)) {
            assert!((o - r).abs() < 1e-5);
        }
    }

    #[test]
    fn zero_weights_make_layers_pure_residual() {
        for variant in [Variant::DividedSpaceTime, Variant::FactorisedDotProduct] {
            let cfg = tiny_cfg(variant);
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(7);
            init_encoder_params(&cfg, "enc", &mut store, &mut rng).unwrap();
            // Zero every projection and MLP weight; keep LayerNorms as-is.
            for name in store.iter().map(|(n, _)| n.to_string()).collect::<Vec<_>>() {
                if name.contains("attn") || name.contains("mlp") {
                    store.get_mut(&name).unwrap().data_mut().fill(0.0);
                }
            }
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            let patches = patchify(&seq(&cfg, |i| (i % 13) as f32 / 13.0), &cfg).unwrap();
            let pid = tape.leaf(&patches);
            let grid = embed(&mut tape, &mut bind, &store, "enc", pid, &cfg).unwrap();
            let before = tape.data(grid.tokens).to_vec();
            let after = match variant {
                Variant::DividedSpaceTime => {
                    divided_layer(&mut tape, &mut bind, &store, "enc", 0, grid, &cfg, None).unwrap()
                }
                Variant::FactorisedDotProduct => {
                    factorised_layer(&mut tape, &mut bind, &store, "enc", 0, grid, &cfg, None).unwrap()
                }
            };
            assert_eq!(tape.data(after.tokens), &before[..], "variant {variant}");
        }
    }

    #[test]
    fn encode_is_deterministic() {
        for variant in [Variant::DividedSpaceTime, Variant::FactorisedDotProduct] {
            let cfg = tiny_cfg(variant);
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(8);
            init_encoder_params(&cfg, "enc", &mut store, &mut rng).unwrap();
            let s = seq(&cfg, |i| (i % 7) as f32 / 7.0);
            let run = || {
                let mut tape = Tape::new();
                let mut bind = Bindings::new();
                let out = encode(&mut tape, &mut bind, &store, "enc", &s, &cfg, None).unwrap();
                tape.data(out).to_vec()
            };
            let (a, b) = (run(), run());
            let bits = |v: &[f32]| v.iter().map(|x| x.to_bits()).collect::<Vec<_>>();
            assert_eq!(bits(&a), bits(&b));
        }
    }
}
