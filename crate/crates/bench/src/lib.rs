//! Fixture builders shared by the criterion benches: a seeded encoder of
//! either variant plus a matching random input sequence.

use graspformer_core::data::{ImageSequence, Modality};
use graspformer_core::params::{Bindings, ParamStore};
use graspformer_core::tensor::{Tape, TensorId};
use graspformer_core::transformer::{encode, init_encoder_params, EncoderConfig, Variant};
use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;

pub struct ForwardFixture {
    pub cfg: EncoderConfig,
    pub store: ParamStore,
    pub seq: ImageSequence,
}

impl ForwardFixture {
    /// Desk-scale slip geometry: 14 frames of 32x24 pixels in 8x6 patches.
    pub fn slip(variant: Variant, embed_dim: usize, layers: usize, heads: usize) -> Self {
        let cfg = EncoderConfig::new(variant, embed_dim, layers, heads, (8, 6), 14, (32, 24), 1);
        cfg.validate().expect("bench config is valid");
        let mut rng = ChaCha8Rng::seed_from_u64(42);
        let mut store = ParamStore::new();
        init_encoder_params(&cfg, "enc", &mut store, &mut rng).expect("init");
        let numel = cfg.frames * cfg.height * cfg.width * cfg.channels;
        let seq = ImageSequence::new(
            (0..numel).map(|_| rng.random::<f32>()).collect(),
            (cfg.frames, cfg.height, cfg.width, cfg.channels),
            Modality::Tactile,
            None,
        )
        .expect("sequence");
        ForwardFixture { cfg, store, seq }
    }

    pub fn forward(&self) -> TensorId {
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        encode(&mut tape, &mut bind, &self.store, "enc", &self.seq, &self.cfg, None)
            .expect("forward pass")
    }
}
