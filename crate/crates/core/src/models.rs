//! Task models: slip detection, grasp-outcome prediction with its fused
//! physical embedding, and the frozen-backbone fruit classifier. Each model
//! owns one parameter store; encoders are namespaced inside it.

use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};
use std::path::Path;

use crate::checkpoint::{load_checkpoint, read_manifest, save_checkpoint, save_store, restore_store, CheckpointTensor};
use crate::data::{GraspSample, SlipSample};
use crate::error::{Error, Result};
use crate::force::{select_safe_threshold, CandidateSet, InferenceResult};
use crate::heads::{
    classify_fruit, detect_slip, fuse_action, fuse_sensors, predict_outcome_value, LinearHead,
    MlpHead, PhysicalEmbedding, DEFAULT_EMBED_DIM, DEFAULT_HEAD_HIDDEN,
};
use crate::params::{Bindings, ParamStore};
use crate::rollout::AttentionRecorder;
use crate::tensor::{Tape, Tensor, TensorId};
use crate::train::ClassifierModel;
use crate::transformer::{Encoder, EncoderConfig};

/// Sensor inputs a slip detector consumes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum SlipModality {
    VisionOnly,
    TactileOnly,
    VisionAndTactile,
}

impl std::fmt::Display for SlipModality {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            SlipModality::VisionOnly => f.write_str("vision-only"),
            SlipModality::TactileOnly => f.write_str("tactile-only"),
            SlipModality::VisionAndTactile => f.write_str("vision & tactile"),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SlipModelConfig {
    pub modality: SlipModality,
    pub visual: Option<EncoderConfig>,
    pub tactile: Option<EncoderConfig>,
    pub seed: u64,
}

/// Per-modality encoders feeding one two-way FC layer.
#[derive(Debug, Clone)]
pub struct SlipModel {
    pub config: SlipModelConfig,
    visual_enc: Option<Encoder>,
    tactile_enc: Option<Encoder>,
    head: LinearHead,
    store: ParamStore,
}

/// Attention recorders for a slip forward pass.
#[derive(Debug, Default, Clone)]
pub struct SlipRecorders {
    pub visual: AttentionRecorder,
    pub tactile: AttentionRecorder,
}

impl SlipModel {
    pub fn new(config: SlipModelConfig) -> Result<Self> {
        let wants_visual = config.modality != SlipModality::TactileOnly;
        let wants_tactile = config.modality != SlipModality::VisionOnly;
        if wants_visual != config.visual.is_some() || wants_tactile != config.tactile.is_some() {
            return Err(Error::Config(format!(
                "modality {} disagrees with the encoder configs provided",
                config.modality
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let mut feature_dim = 0;
        let visual_enc = match &config.visual {
            Some(cfg) => {
                let enc = Encoder::new(cfg.clone(), "visual")?;
                enc.init_params(&mut store, &mut rng)?;
                feature_dim += cfg.embed_dim;
                Some(enc)
            }
            None => None,
        };
        let tactile_enc = match &config.tactile {
            Some(cfg) => {
                let enc = Encoder::new(cfg.clone(), "tactile")?;
                enc.init_params(&mut store, &mut rng)?;
                feature_dim += cfg.embed_dim;
                Some(enc)
            }
            None => None,
        };
        let head = LinearHead::new("slip", feature_dim, 2);
        head.init_params(&mut store, &mut rng)?;
        Ok(SlipModel { config, visual_enc, tactile_enc, head, store })
    }

    pub fn logits_with_recorders(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        sample: &SlipSample,
        mut recorders: Option<&mut SlipRecorders>,
    ) -> Result<TensorId> {
        let v_visual = match &self.visual_enc {
            Some(enc) => Some(enc.encode(
                tape,
                bind,
                &self.store,
                &sample.visual,
                recorders.as_deref_mut().map(|r| &mut r.visual),
            )?),
            None => None,
        };
        let v_tactile = match &self.tactile_enc {
            Some(enc) => Some(enc.encode(
                tape,
                bind,
                &self.store,
                &sample.tactile,
                recorders.as_deref_mut().map(|r| &mut r.tactile),
            )?),
            None => None,
        };
        detect_slip(tape, bind, &self.store, &self.head, v_visual, v_tactile)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({"model": "slip", "config": self.config});
        save_store(path, &meta, &self.store, false)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, tensors) = load_checkpoint(path)?;
        let config: SlipModelConfig = parse_config(&manifest.meta, "slip")?;
        let mut model = SlipModel::new(config)?;
        restore_store(&mut model.store, &tensors)?;
        Ok(model)
    }
}

impl ClassifierModel for SlipModel {
    type Sample = SlipSample;

    fn num_classes(&self) -> usize {
        2
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn label(&self, sample: &SlipSample) -> usize {
        sample.label.class_index()
    }
    fn logits(&self, tape: &mut Tape, bind: &mut Bindings, sample: &SlipSample) -> Result<TensorId> {
        self.logits_with_recorders(tape, bind, sample, None)
    }
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct OutcomeModelConfig {
    pub tactile: EncoderConfig,
    pub visual: EncoderConfig,
    /// Width of the fused physical embedding.
    pub embedding_dim: usize,
    /// Hidden width of the prediction head.
    pub head_hidden: usize,
    /// Training-time dropout rate on the fused embedding. The per-sample
    /// fingerprints that let the predictor memorize live in individual
    /// embedding dimensions; dropping them forces it onto the redundant
    /// physical features. Inference never drops anything.
    #[serde(default)]
    pub embedding_dropout: f32,
    pub seed: u64,
}

impl OutcomeModelConfig {
    pub fn with_defaults(tactile: EncoderConfig, visual: EncoderConfig, seed: u64) -> Self {
        OutcomeModelConfig {
            tactile,
            visual,
            embedding_dim: DEFAULT_EMBED_DIM,
            head_hidden: DEFAULT_HEAD_HIDDEN,
            embedding_dropout: 0.0,
            seed,
        }
    }
}

/// The four explorative-sequence encoders, action/sensor fusion, and the
/// threshold-conditioned outcome predictor.
#[derive(Debug, Clone)]
pub struct OutcomeModel {
    pub config: OutcomeModelConfig,
    enc_pinch_tactile: Encoder,
    enc_pinch_visual: Encoder,
    enc_slide_tactile: Encoder,
    enc_slide_visual: Encoder,
    fusion: LinearHead,
    predictor: MlpHead,
    store: ParamStore,
}

/// Attention recorders for the four sequences of one grasp forward pass.
#[derive(Debug, Default, Clone)]
pub struct GraspRecorders {
    pub pinch_tactile: AttentionRecorder,
    pub pinch_visual: AttentionRecorder,
    pub slide_tactile: AttentionRecorder,
    pub slide_visual: AttentionRecorder,
}

impl OutcomeModel {
    pub fn new(config: OutcomeModelConfig) -> Result<Self> {
        if config.tactile.embed_dim != config.visual.embed_dim {
            return Err(Error::Config(format!(
                "tactile and visual encoders must share an embedding width ({} vs {})",
                config.tactile.embed_dim, config.visual.embed_dim
            )));
        }
        if config.embedding_dim == 0 || config.head_hidden == 0 {
            return Err(Error::Config("embedding and head hidden dims must be positive".into()));
        }
        let d = config.tactile.embed_dim;
        let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
        let mut store = ParamStore::new();
        let enc_pinch_tactile = Encoder::new(config.tactile.clone(), "pinch_tactile")?;
        let enc_pinch_visual = Encoder::new(config.visual.clone(), "pinch_visual")?;
        let enc_slide_tactile = Encoder::new(config.tactile.clone(), "slide_tactile")?;
        let enc_slide_visual = Encoder::new(config.visual.clone(), "slide_visual")?;
        for enc in [&enc_pinch_tactile, &enc_pinch_visual, &enc_slide_tactile, &enc_slide_visual] {
            enc.init_params(&mut store, &mut rng)?;
        }
        let fusion = LinearHead::new("fusion", 4 * d, config.embedding_dim);
        fusion.init_params(&mut store, &mut rng)?;
        let predictor = MlpHead::new("predict", config.embedding_dim + 1, config.head_hidden, 3);
        predictor.init_params(&mut store, &mut rng)?;
        Ok(OutcomeModel {
            config,
            enc_pinch_tactile,
            enc_pinch_visual,
            enc_slide_tactile,
            enc_slide_visual,
            fusion,
            predictor,
            store,
        })
    }

    /// Builds the fused physical embedding node for one sample.
    pub fn embedding_with_recorders(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        sample: &GraspSample,
        mut recorders: Option<&mut GraspRecorders>,
    ) -> Result<TensorId> {
        let v_pt = self.enc_pinch_tactile.encode(
            tape,
            bind,
            &self.store,
            &sample.pinch_tactile,
            recorders.as_deref_mut().map(|r| &mut r.pinch_tactile),
        )?;
        let v_pv = self.enc_pinch_visual.encode(
            tape,
            bind,
            &self.store,
            &sample.pinch_visual,
            recorders.as_deref_mut().map(|r| &mut r.pinch_visual),
        )?;
        let v_st = self.enc_slide_tactile.encode(
            tape,
            bind,
            &self.store,
            &sample.slide_tactile,
            recorders.as_deref_mut().map(|r| &mut r.slide_tactile),
        )?;
        let v_sv = self.enc_slide_visual.encode(
            tape,
            bind,
            &self.store,
            &sample.slide_visual,
            recorders.as_deref_mut().map(|r| &mut r.slide_visual),
        )?;
        let v_pinch = fuse_action(tape, v_pv, v_pt)?;
        let v_slide = fuse_action(tape, v_sv, v_st)?;
        fuse_sensors(tape, bind, &self.store, &self.fusion, v_pinch, v_slide)
    }

    pub fn embedding(&self, tape: &mut Tape, bind: &mut Bindings, sample: &GraspSample) -> Result<TensorId> {
        self.embedding_with_recorders(tape, bind, sample, None)
    }

    /// Runs the whole pipeline once and copies the embedding out.
    pub fn extract_embedding(&self, sample: &GraspSample) -> Result<PhysicalEmbedding> {
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let id = self.embedding(&mut tape, &mut bind, sample)?;
        Ok(PhysicalEmbedding(tape.data(id).to_vec()))
    }

    /// Outcome logits for a fixed embedding and threshold, on a fresh tape.
    pub fn predict_from_embedding(&self, e: &PhysicalEmbedding, threshold: f64) -> Result<[f32; 3]> {
        if e.dim() != self.config.embedding_dim {
            return Err(Error::Input(format!(
                "embedding has dim {}, model wants {}",
                e.dim(),
                self.config.embedding_dim
            )));
        }
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let eid = tape.constant(e.0.clone(), &[1, e.dim()])?;
        let logits =
            predict_outcome_value(&mut tape, &mut bind, &self.store, &self.predictor, eid, threshold)?;
        let out = tape.data(logits);
        Ok([out[0], out[1], out[2]])
    }

    /// Enumerates the candidate thresholds against one fixed embedding and
    /// selects the mean of those predicted safe.
    pub fn select_safe_threshold(
        &self,
        e: &PhysicalEmbedding,
        candidates: &CandidateSet,
    ) -> Result<InferenceResult> {
        select_safe_threshold(|thr| self.predict_from_embedding(e, thr), candidates)
    }

    pub fn save(&self, path: &Path) -> Result<()> {
        let meta = serde_json::json!({"model": "outcome", "config": self.config});
        save_store(path, &meta, &self.store, false)
    }

    pub fn load(path: &Path) -> Result<Self> {
        let (manifest, tensors) = load_checkpoint(path)?;
        let config: OutcomeModelConfig = parse_config(&manifest.meta, "outcome")?;
        let mut model = OutcomeModel::new(config)?;
        restore_store(&mut model.store, &tensors)?;
        Ok(model)
    }

    /// Precomputes `(embedding, fruit label)` pairs for frozen-backbone
    /// training. The backbone is immutable here, which is the freeze.
    pub fn embed_samples(&self, samples: &[GraspSample]) -> Result<Vec<EmbeddedSample>> {
        samples
            .iter()
            .map(|s| {
                Ok(EmbeddedSample {
                    embedding: self.extract_embedding(s)?.0,
                    label: s.fruit.class_index(),
                })
            })
            .collect()
    }

    /// Continues training the prediction head against the now-stable
    /// embeddings. The encoders and fusion converge in a few dozen joint
    /// epochs, but the threshold-conditioned head needs hundreds more to move
    /// from the threshold-marginal rule to the interval logic; those epochs
    /// cost milliseconds each here because the encoder forward is amortized
    /// into precomputed embeddings. Encoder and fusion parameters receive
    /// zero gradient and are bitwise unchanged.
    pub fn refine_predictor(
        &mut self,
        samples: &[GraspSample],
        split: &crate::data::SplitIndices,
        cfg: &crate::train::TrainConfig,
        log: Option<&mut dyn std::io::Write>,
    ) -> Result<crate::train::TrainOutcome> {
        let embedded: Vec<ThresholdSample> = samples
            .iter()
            .map(|s| {
                Ok(ThresholdSample {
                    embedding: self.extract_embedding(s)?.0,
                    threshold: s.force_threshold,
                    label: s.outcome.class_index(),
                })
            })
            .collect::<Result<_>>()?;
        // A fresh head finds the interval rule more reliably than one warm
        // started from the joint phase's threshold-marginal solution.
        self.predictor
            .reinit_params(&mut self.store, &mut ChaCha8Rng::seed_from_u64(cfg.seed ^ 0x9e37_79b9))?;
        let mut refiner = PredictorRefiner {
            store: std::mem::take(&mut self.store),
            predictor: self.predictor.clone(),
            embedding_dim: self.config.embedding_dim,
            dropout: self.config.embedding_dropout,
        };
        let out = crate::train::train(&mut refiner, &embedded, split, cfg, 0, log);
        self.store = refiner.store;
        out
    }
}

/// An embedding paired with its trial threshold and outcome label.
#[derive(Debug, Clone, PartialEq)]
pub struct ThresholdSample {
    pub embedding: Vec<f32>,
    pub threshold: f64,
    pub label: usize,
}

/// Trains only the prediction head over precomputed embeddings; every other
/// parameter in the store sees zero gradient and a zero Adam update.
struct PredictorRefiner {
    store: ParamStore,
    predictor: MlpHead,
    embedding_dim: usize,
    dropout: f32,
}

impl ClassifierModel for PredictorRefiner {
    type Sample = ThresholdSample;

    fn num_classes(&self) -> usize {
        3
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn label(&self, sample: &ThresholdSample) -> usize {
        sample.label
    }
    fn logits(&self, tape: &mut Tape, bind: &mut Bindings, sample: &ThresholdSample) -> Result<TensorId> {
        let e = tape.constant(sample.embedding.clone(), &[1, self.embedding_dim])?;
        predict_outcome_value(tape, bind, &self.store, &self.predictor, e, sample.threshold)
    }
    fn logits_train(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        sample: &ThresholdSample,
        rng: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        use rand::Rng;
        let mut e = tape.constant(sample.embedding.clone(), &[1, self.embedding_dim])?;
        if self.dropout > 0.0 {
            let keep = 1.0 - self.dropout;
            let mask: Vec<f32> = (0..self.embedding_dim)
                .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let mask = tape.constant(mask, &[1, self.embedding_dim])?;
            e = tape.mul(e, mask)?;
        }
        predict_outcome_value(tape, bind, &self.store, &self.predictor, e, sample.threshold)
    }
}

impl ClassifierModel for OutcomeModel {
    type Sample = GraspSample;

    fn num_classes(&self) -> usize {
        3
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn label(&self, sample: &GraspSample) -> usize {
        sample.outcome.class_index()
    }
    fn logits(&self, tape: &mut Tape, bind: &mut Bindings, sample: &GraspSample) -> Result<TensorId> {
        let e = self.embedding(tape, bind, sample)?;
        predict_outcome_value(tape, bind, &self.store, &self.predictor, e, sample.force_threshold)
    }

    fn logits_train(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        sample: &GraspSample,
        rng: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        let mut e = self.embedding(tape, bind, sample)?;
        let p = self.config.embedding_dropout;
        if p > 0.0 {
            use rand::Rng;
            // Inverted dropout as a constant mask; gradients flow through mul.
            let keep = 1.0 - p;
            let mask: Vec<f32> = (0..self.config.embedding_dim)
                .map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 })
                .collect();
            let mask = tape.constant(mask, &[1, self.config.embedding_dim])?;
            e = tape.mul(e, mask)?;
        }
        predict_outcome_value(tape, bind, &self.store, &self.predictor, e, sample.force_threshold)
    }
}

/// A physical embedding paired with a class label; the training sample type
/// of the fruit head.
#[derive(Debug, Clone, PartialEq)]
pub struct EmbeddedSample {
    pub embedding: Vec<f32>,
    pub label: usize,
}

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct FruitModelConfig {
    pub embedding_dim: usize,
    pub head_hidden: usize,
    pub seed: u64,
}

/// The fruit-classification MLP trained on frozen physical embeddings.
#[derive(Debug, Clone)]
pub struct FruitModel {
    pub config: FruitModelConfig,
    head: MlpHead,
    store: ParamStore,
}

impl FruitModel {
    pub fn new(config: FruitModelConfig) -> Result<Self> {
        if config.embedding_dim == 0 || config.head_hidden == 0 {
            return Err(Error::Config("fruit head dims must be positive".into()));
        }
        let head = MlpHead::new("fruit", config.embedding_dim, config.head_hidden, 6);
        let mut store = ParamStore::new();
        head.init_params(&mut store, &mut ChaCha8Rng::seed_from_u64(config.seed))?;
        Ok(FruitModel { config, head, store })
    }
}

impl ClassifierModel for FruitModel {
    type Sample = EmbeddedSample;

    fn num_classes(&self) -> usize {
        6
    }
    fn params(&self) -> &ParamStore {
        &self.store
    }
    fn params_mut(&mut self) -> &mut ParamStore {
        &mut self.store
    }
    fn label(&self, sample: &EmbeddedSample) -> usize {
        sample.label
    }
    fn logits(&self, tape: &mut Tape, bind: &mut Bindings, sample: &EmbeddedSample) -> Result<TensorId> {
        let e = tape.constant(sample.embedding.clone(), &[1, sample.embedding.len()])?;
        classify_fruit(tape, bind, &self.store, &self.head, e)
    }
}

/// Saves a fruit classifier together with its frozen backbone; backbone
/// entries are marked frozen in the manifest.
pub fn save_fruit_pipeline(path: &Path, backbone: &OutcomeModel, fruit: &FruitModel) -> Result<()> {
    let meta = serde_json::json!({
        "model": "fruit",
        "outcome_config": backbone.config,
        "fruit_config": fruit.config,
    });
    let mut tensors: Vec<CheckpointTensor> = Vec::new();
    for (name, tensor) in backbone.store.iter() {
        tensors.push(CheckpointTensor { name, tensor, frozen: true });
    }
    for (name, tensor) in fruit.store.iter() {
        tensors.push(CheckpointTensor { name, tensor, frozen: false });
    }
    save_checkpoint(path, &meta, &tensors)
}

pub fn load_fruit_pipeline(path: &Path) -> Result<(OutcomeModel, FruitModel)> {
    let (manifest, tensors) = load_checkpoint(path)?;
    expect_model(&manifest.meta, "fruit")?;
    let outcome_config: OutcomeModelConfig =
        serde_json::from_value(manifest.meta["outcome_config"].clone())?;
    let fruit_config: FruitModelConfig =
        serde_json::from_value(manifest.meta["fruit_config"].clone())?;
    let mut backbone = OutcomeModel::new(outcome_config)?;
    let mut fruit = FruitModel::new(fruit_config)?;
    let (mut for_backbone, mut for_fruit) = (Vec::new(), Vec::new());
    for t in tensors {
        if backbone.store.get(&t.0).is_some() {
            for_backbone.push(t);
        } else {
            for_fruit.push(t);
        }
    }
    restore_store(&mut backbone.store, &for_backbone)?;
    restore_store(&mut fruit.store, &for_fruit)?;
    Ok((backbone, fruit))
}

/// Any model a checkpoint can hold.
pub enum LoadedModel {
    Slip(SlipModel),
    Outcome(OutcomeModel),
    Fruit { backbone: OutcomeModel, head: FruitModel },
}

/// Dispatches on the checkpoint's `model` metadata field.
pub fn load_model(path: &Path) -> Result<LoadedModel> {
    let manifest = read_manifest(path)?;
    match manifest.meta.get("model").and_then(|v| v.as_str()) {
        Some("slip") => Ok(LoadedModel::Slip(SlipModel::load(path)?)),
        Some("outcome") => Ok(LoadedModel::Outcome(OutcomeModel::load(path)?)),
        Some("fruit") => {
            let (backbone, head) = load_fruit_pipeline(path)?;
            Ok(LoadedModel::Fruit { backbone, head })
        }
        other => Err(Error::Data(format!("unknown checkpoint model kind {other:?}"))),
    }
}

fn expect_model(meta: &serde_json::Value, want: &str) -> Result<()> {
    match meta.get("model").and_then(|v| v.as_str()) {
        Some(kind) if kind == want => Ok(()),
        other => Err(Error::Data(format!("checkpoint holds {other:?}, expected {want:?}"))),
    }
}

fn parse_config<T: serde::de::DeserializeOwned>(meta: &serde_json::Value, want: &str) -> Result<T> {
    expect_model(meta, want)?;
    Ok(serde_json::from_value(meta["config"].clone())?)
}

/// Convenience for tests and tools: a parameter store snapshot as raw bits.
pub fn store_bits(store: &ParamStore) -> Vec<u32> {
    store.iter().flat_map(|(_, t)| t.data().iter().map(|v| v.to_bits())).collect()
}

/// Marker so external callers can keep a reference tensor copy around.
pub fn store_tensor(store: &ParamStore, name: &str) -> Option<Tensor> {
    store.get(name).cloned()
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::data::{generate_grasp, generate_slip, SyntheticSpec};
    use crate::transformer::Variant;

    fn tiny_enc(variant: Variant, frames: usize, channels: usize) -> EncoderConfig {
        EncoderConfig::new(variant, 8, 1, 2, (8, 6), frames, (16, 12), channels)
    }

    fn tiny_spec(samples: usize) -> SyntheticSpec {
        SyntheticSpec {
            samples,
            tactile_height: 16,
            tactile_width: 12,
            visual_height: 16,
            visual_width: 12,
            seed: 21,
            ..SyntheticSpec::default()
        }
    }

    fn slip_config(modality: SlipModality) -> SlipModelConfig {
        let visual = matches!(modality, SlipModality::VisionOnly | SlipModality::VisionAndTactile)
            .then(|| tiny_enc(Variant::DividedSpaceTime, 14, 3));
        let tactile = matches!(modality, SlipModality::TactileOnly | SlipModality::VisionAndTactile)
            .then(|| tiny_enc(Variant::DividedSpaceTime, 14, 1));
        SlipModelConfig { modality, visual, tactile, seed: 1 }
    }

    #[test]
    fn slip_model_modality_validation() {
        let mut bad = slip_config(SlipModality::VisionOnly);
        bad.tactile = Some(tiny_enc(Variant::DividedSpaceTime, 14, 1));
        assert!(SlipModel::new(bad).is_err());
        assert!(SlipModel::new(slip_config(SlipModality::VisionAndTactile)).is_ok());
    }

    #[test]
    fn slip_logits_shape_and_determinism() {
        let samples = generate_slip(&tiny_spec(2)).unwrap();
        for modality in [SlipModality::VisionOnly, SlipModality::TactileOnly, SlipModality::VisionAndTactile] {
            let model = SlipModel::new(slip_config(modality)).unwrap();
            let run = || {
                let mut tape = Tape::new();
                let mut bind = Bindings::new();
                let id = model.logits(&mut tape, &mut bind, &samples[0]).unwrap();
                assert_eq!(tape.shape(id), &[1, 2]);
                tape.data(id).to_vec()
            };
            assert_eq!(run(), run());
        }
    }

    #[test]
    fn outcome_model_end_to_end_shapes() {
        let samples = generate_grasp(&tiny_spec(2)).unwrap();
        let config = OutcomeModelConfig {
            tactile: tiny_enc(Variant::DividedSpaceTime, 8, 1),
            visual: tiny_enc(Variant::DividedSpaceTime, 8, 3),
            embedding_dim: 6,
            head_hidden: 8,
            embedding_dropout: 0.0,
            seed: 3,
        };
        let model = OutcomeModel::new(config).unwrap();
        let e = model.extract_embedding(&samples[0]).unwrap();
        assert_eq!(e.dim(), 6);
        assert!(e.is_finite());
        let logits = model.predict_from_embedding(&e, samples[0].force_threshold).unwrap();
        assert!(logits.iter().all(|v| v.is_finite()));

        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let id = model.logits(&mut tape, &mut bind, &samples[0]).unwrap();
        assert_eq!(tape.shape(id), &[1, 3]);
    }

    #[test]
    fn outcome_model_rejects_mismatched_widths() {
        let mut visual = tiny_enc(Variant::DividedSpaceTime, 8, 3);
        visual.embed_dim = 16;
        visual.mlp_hidden = 64;
        let config = OutcomeModelConfig {
            tactile: tiny_enc(Variant::DividedSpaceTime, 8, 1),
            visual,
            embedding_dim: 6,
            head_hidden: 8,
            embedding_dropout: 0.0,
            seed: 0,
        };
        assert!(OutcomeModel::new(config).is_err());
    }

    #[test]
    fn slip_checkpoint_roundtrip_is_bitwise() {
        let dir = std::env::temp_dir().join(format!("gf-models-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("slip.ckpt");
        let model = SlipModel::new(slip_config(SlipModality::TactileOnly)).unwrap();
        model.save(&path).unwrap();
        let back = SlipModel::load(&path).unwrap();
        assert_eq!(store_bits(&model.store), store_bits(&back.store));
        assert_eq!(model.config, back.config);
        std::fs::remove_dir_all(&dir).unwrap();
    }

    #[test]
    fn fruit_pipeline_roundtrip_and_dispatch() {
        let dir = std::env::temp_dir().join(format!("gf-fruit-{}", std::process::id()));
        std::fs::create_dir_all(&dir).unwrap();
        let path = dir.join("fruit.ckpt");
        let config = OutcomeModelConfig {
            tactile: tiny_enc(Variant::FactorisedDotProduct, 8, 1),
            visual: tiny_enc(Variant::FactorisedDotProduct, 8, 3),
            embedding_dim: 6,
            head_hidden: 8,
            embedding_dropout: 0.0,
            seed: 5,
        };
        let backbone = OutcomeModel::new(config).unwrap();
        let fruit = FruitModel::new(FruitModelConfig { embedding_dim: 6, head_hidden: 8, seed: 6 }).unwrap();
        save_fruit_pipeline(&path, &backbone, &fruit).unwrap();
        match load_model(&path).unwrap() {
            LoadedModel::Fruit { backbone: b, head } => {
                assert_eq!(store_bits(&backbone.store), store_bits(&b.store));
                assert_eq!(store_bits(&fruit.store), store_bits(&head.store));
            }
            _ => panic!("expected fruit pipeline"),
        }
        // Backbone entries are labeled frozen in the manifest.
        let manifest = read_manifest(&path).unwrap();
        for e in &manifest.entries {
            let should_freeze = !e.name.starts_with("fruit.");
            assert_eq!(e.frozen, should_freeze, "{}", e.name);
        }
        std::fs::remove_dir_all(&dir).unwrap();
    }
}
