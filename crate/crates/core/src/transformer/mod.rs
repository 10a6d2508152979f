//! Spatiotemporal transformer encoders over image sequences.
//!
//! Two factorizations of space-time attention are provided. The divided
//! variant runs temporal attention (same spatial patch across frames) and
//! then spatial attention (same frame) sequentially inside each layer and
//! reads a CLS token out. The factorised dot-product variant splits the heads
//! of a single attention sublayer between the two axes in parallel, fuses
//! their concatenated outputs back to width D, carries no CLS token, and mean
//! pools the patch outputs.

mod attention;
mod encoder;

pub use attention::{attention, multi_head, AttnProjections, TokenGroups};
pub use encoder::{divided_layer, embed, encode, factorised_layer, patchify, Encoder};

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::tensor::{Tensor, TensorId};

/// Which space-time factorization a stack of layers uses.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Variant {
    DividedSpaceTime,
    FactorisedDotProduct,
}

impl std::fmt::Display for Variant {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Variant::DividedSpaceTime => f.write_str("divided-space-time"),
            Variant::FactorisedDotProduct => f.write_str("factorised-dot-product"),
        }
    }
}

/// Full geometry of one encoder.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct EncoderConfig {
    pub variant: Variant,
    /// Token embedding width D.
    pub embed_dim: usize,
    pub num_layers: usize,
    pub num_heads: usize,
    pub patch_h: usize,
    pub patch_w: usize,
    /// Frames per input sequence.
    pub frames: usize,
    pub height: usize,
    pub width: usize,
    pub channels: usize,
    /// Hidden width of the per-token MLP; conventionally `4 * embed_dim`.
    pub mlp_hidden: usize,
}

impl EncoderConfig {
    /// A config with `mlp_hidden = 4 * embed_dim`. Call [`validate`] before use.
    ///
    /// [`validate`]: EncoderConfig::validate
    #[allow(clippy::too_many_arguments)]
    pub fn new(
        variant: Variant,
        embed_dim: usize,
        num_layers: usize,
        num_heads: usize,
        (patch_h, patch_w): (usize, usize),
        frames: usize,
        (height, width): (usize, usize),
        channels: usize,
    ) -> Self {
        EncoderConfig {
            variant,
            embed_dim,
            num_layers,
            num_heads,
            patch_h,
            patch_w,
            frames,
            height,
            width,
            channels,
            mlp_hidden: 4 * embed_dim,
        }
    }

    pub fn validate(&self) -> Result<()> {
        let positive = [
            self.embed_dim,
            self.num_heads,
            self.patch_h,
            self.patch_w,
            self.frames,
            self.height,
            self.width,
            self.channels,
            self.mlp_hidden,
        ];
        if positive.iter().any(|&v| v == 0) {
            return Err(Error::Config(format!("encoder dimensions must be positive: {self:?}")));
        }
        if self.height % self.patch_h != 0 || self.width % self.patch_w != 0 {
            return Err(Error::Config(format!(
                "image {}x{} is not divisible by patch {}x{}",
                self.height, self.width, self.patch_h, self.patch_w
            )));
        }
        if self.embed_dim % self.num_heads != 0 {
            return Err(Error::Config(format!(
                "embed dim {} is not divisible by {} heads",
                self.embed_dim, self.num_heads
            )));
        }
        if self.variant == Variant::FactorisedDotProduct && self.num_heads % 2 != 0 {
            return Err(Error::Config(format!(
                "factorised dot-product attention needs an even head count, got {}",
                self.num_heads
            )));
        }
        Ok(())
    }

    /// Patches per frame: `S = H*W / (P_h*P_w)`.
    pub fn tokens_per_frame(&self) -> usize {
        (self.height / self.patch_h) * (self.width / self.patch_w)
    }

    /// Patch tokens over the whole sequence: `P_n = N*H*W / (P_h*P_w)`.
    pub fn patch_count(&self) -> usize {
        self.frames * self.tokens_per_frame()
    }

    /// Flattened patch length `C*P_h*P_w`.
    pub fn patch_dim(&self) -> usize {
        self.channels * self.patch_h * self.patch_w
    }

    pub fn has_cls(&self) -> bool {
        self.variant == Variant::DividedSpaceTime
    }

    /// Rows of the token matrix, including the CLS token when present.
    pub fn token_count(&self) -> usize {
        self.patch_count() + usize::from(self.has_cls())
    }

    pub fn head_dim(&self) -> usize {
        self.embed_dim / self.num_heads
    }

    /// Closed-form number of trainable scalars in one encoder.
    pub fn param_count(&self) -> usize {
        let d = self.embed_dim;
        let embed = self.patch_dim() * d;
        let pos = self.token_count() * d;
        let cls = if self.has_cls() { d } else { 0 };
        let attn = 4 * d * d
            + if self.variant == Variant::FactorisedDotProduct { 2 * d * d } else { 0 };
        let ln_pairs = if self.variant == Variant::DividedSpaceTime { 3 } else { 2 };
        let ln = ln_pairs * 2 * d;
        let mlp = d * self.mlp_hidden + self.mlp_hidden + self.mlp_hidden * d + d;
        embed + pos + cls + self.num_layers * (attn + ln + mlp)
    }
}

/// A token matrix on the tape with its (frame, spatial) addressing.
#[derive(Debug, Clone, Copy)]
pub struct TokenGrid {
    pub tokens: TensorId,
    pub frames: usize,
    pub spatial: usize,
    pub has_cls: bool,
}

impl TokenGrid {
    /// Row of patch `(frame t, spatial s)`, both 0-based. The CLS token, when
    /// present, occupies row 0 and every patch row shifts down by one.
    pub fn row_of(&self, frame: usize, spatial: usize) -> usize {
        debug_assert!(frame < self.frames && spatial < self.spatial);
        usize::from(self.has_cls) + frame * self.spatial + spatial
    }

    pub fn cls_row(&self) -> Option<usize> {
        self.has_cls.then_some(0)
    }

    pub fn token_count(&self) -> usize {
        self.frames * self.spatial + usize::from(self.has_cls)
    }
}

/// Parameter names of one layer under an encoder prefix.
pub(crate) struct LayerNames {
    pub wq: String,
    pub wk: String,
    pub wv: String,
    pub wo: String,
    pub wfuse: String,
    pub ln1_g: String,
    pub ln1_b: String,
    pub ln2_g: String,
    pub ln2_b: String,
    pub ln3_g: String,
    pub ln3_b: String,
    pub mlp_w1: String,
    pub mlp_b1: String,
    pub mlp_w2: String,
    pub mlp_b2: String,
}

impl LayerNames {
    pub fn new(prefix: &str, layer: usize) -> Self {
        let base = format!("{prefix}.l{layer}");
        LayerNames {
            wq: format!("{base}.attn.wq"),
            wk: format!("{base}.attn.wk"),
            wv: format!("{base}.attn.wv"),
            wo: format!("{base}.attn.wo"),
            wfuse: format!("{base}.attn.wfuse"),
            ln1_g: format!("{base}.ln1.g"),
            ln1_b: format!("{base}.ln1.b"),
            ln2_g: format!("{base}.ln2.g"),
            ln2_b: format!("{base}.ln2.b"),
            ln3_g: format!("{base}.ln3.g"),
            ln3_b: format!("{base}.ln3.b"),
            mlp_w1: format!("{base}.mlp.w1"),
            mlp_b1: format!("{base}.mlp.b1"),
            mlp_w2: format!("{base}.mlp.w2"),
            mlp_b2: format!("{base}.mlp.b2"),
        }
    }
}

/// Inserts all parameters of one encoder under `prefix`. Projection matrices
/// use N(0, 1/fan_in); positional and CLS embeddings use N(0, 0.02);
/// LayerNorms start at identity and biases at zero. The scaled projection
/// init keeps attention logits at unit order for the small widths trained
/// here; a flat 0.02 leaves the attention maps uniform for so long that desk
/// scale runs never escape chance level.
pub fn init_encoder_params<R: Rng>(
    cfg: &EncoderConfig,
    prefix: &str,
    store: &mut ParamStore,
    rng: &mut R,
) -> Result<()> {
    cfg.validate()?;
    let d = cfg.embed_dim;
    let proj = |rows: usize, cols: usize, rng: &mut R| {
        Tensor::randn(&[rows, cols], 1.0 / (rows as f32).sqrt(), rng)
    };
    store.insert(format!("{prefix}.embed.w"), proj(cfg.patch_dim(), d, rng))?;
    store.insert(
        format!("{prefix}.pos"),
        Tensor::randn(&[cfg.token_count(), d], 0.02, rng),
    )?;
    if cfg.has_cls() {
        store.insert(format!("{prefix}.cls"), Tensor::randn(&[1, d], 0.02, rng))?;
    }
    for layer in 0..cfg.num_layers {
        let names = LayerNames::new(prefix, layer);
        for w in [&names.wq, &names.wk, &names.wv, &names.wo] {
            store.insert(w.clone(), proj(d, d, rng))?;
        }
        if cfg.variant == Variant::FactorisedDotProduct {
            store.insert(names.wfuse.clone(), proj(2 * d, d, rng))?;
        }
        let ln_pairs: &[(&String, &String)] = if cfg.variant == Variant::DividedSpaceTime {
            &[(&names.ln1_g, &names.ln1_b), (&names.ln2_g, &names.ln2_b), (&names.ln3_g, &names.ln3_b)]
        } else {
            &[(&names.ln1_g, &names.ln1_b), (&names.ln2_g, &names.ln2_b)]
        };
        for (g, b) in ln_pairs {
            let mut gamma = Tensor::full(&[d], 1.0);
            gamma.set_requires_grad(true);
            store.insert((*g).clone(), gamma)?;
            let mut beta = Tensor::zeros(&[d]);
            beta.set_requires_grad(true);
            store.insert((*b).clone(), beta)?;
        }
        store.insert(names.mlp_w1.clone(), proj(d, cfg.mlp_hidden, rng))?;
        let mut b1 = Tensor::zeros(&[cfg.mlp_hidden]);
        b1.set_requires_grad(true);
        store.insert(names.mlp_b1.clone(), b1)?;
        store.insert(names.mlp_w2.clone(), proj(cfg.mlp_hidden, d, rng))?;
        let mut b2 = Tensor::zeros(&[d]);
        b2.set_requires_grad(true);
        store.insert(names.mlp_b2.clone(), b2)?;
    }
    Ok(())
}

/// LayerNorm epsilon used throughout the encoders.
pub const LAYER_NORM_EPS: f32 = 1e-5;

#[cfg(test)]
mod tests {
    use super::*;
    use rand::SeedableRng;
    use rand_chacha::ChaCha8Rng;

    fn paper_tactile() -> EncoderConfig {
        EncoderConfig::new(Variant::DividedSpaceTime, 256, 16, 8, (20, 15), 8, (200, 150), 1)
    }

    #[test]
    fn paper_dims_token_counts() {
        let tactile = paper_tactile();
        tactile.validate().unwrap();
        assert_eq!(tactile.tokens_per_frame(), 100);
        assert_eq!(tactile.patch_count(), 800);
        assert_eq!(tactile.token_count(), 801);

        let visual = EncoderConfig::new(
            Variant::FactorisedDotProduct, 256, 16, 8, (16, 12), 8, (160, 120), 1,
        );
        visual.validate().unwrap();
        assert_eq!(visual.patch_count(), 800);
        assert_eq!(visual.token_count(), 800, "no CLS for factorised dot-product");
    }

    #[test]
    fn validation_catches_bad_configs() {
        let mut cfg = paper_tactile();
        cfg.patch_h = 21;
        assert!(cfg.validate().is_err());

        let mut cfg = paper_tactile();
        cfg.num_heads = 7;
        assert!(cfg.validate().is_err(), "256 % 7 != 0");

        let mut cfg = EncoderConfig::new(
            Variant::FactorisedDotProduct, 64, 2, 3, (4, 4), 2, (8, 8), 1,
        );
        cfg.mlp_hidden = 64;
        assert!(cfg.validate().is_err(), "factorised needs even heads");
    }

    #[test]
    fn param_count_matches_store() {
        for variant in [Variant::DividedSpaceTime, Variant::FactorisedDotProduct] {
            let cfg = EncoderConfig::new(variant, 16, 2, 2, (2, 2), 2, (4, 4), 1);
            let mut store = ParamStore::new();
            let mut rng = ChaCha8Rng::seed_from_u64(1);
            init_encoder_params(&cfg, "enc", &mut store, &mut rng).unwrap();
            assert_eq!(store.numel(), cfg.param_count(), "variant {variant}");
        }
    }

    #[test]
    fn token_grid_addressing_is_bijective() {
        let grid = TokenGrid {
            tokens: {
                let mut tape = crate::tensor::Tape::new();
                tape.constant(vec![0.0; 9 * 4], &[9, 4]).unwrap()
            },
            frames: 2,
            spatial: 4,
            has_cls: true,
        };
        let mut seen = std::collections::HashSet::new();
        for t in 0..2 {
            for s in 0..4 {
                let row = grid.row_of(t, s);
                assert!(row >= 1 && row < grid.token_count());
                assert!(seen.insert(row), "row {row} assigned twice");
            }
        }
        assert_eq!(seen.len(), 8);
        assert_eq!(grid.cls_row(), Some(0));
    }
}
