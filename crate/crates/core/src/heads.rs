//! Prediction heads layered on top of the sequence encoders: action fusion,
//! sensor fusion into the physical embedding, threshold-conditioned grasp
//! outcome prediction, fruit classification, and the slip head.

use rand::Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tensor::{Tape, Tensor, TensorId};

/// Force thresholds are divided by this before entering the prediction MLP,
/// keeping the scalar near the unit scale of the embedding. 16 is the largest
/// default threshold candidate.
pub const THRESHOLD_SCALE: f32 = 16.0;

/// Default width of the fused physical feature embedding.
pub const DEFAULT_EMBED_DIM: usize = 32;

/// Default hidden width of the prediction and fruit head MLPs.
pub const DEFAULT_HEAD_HIDDEN: usize = 64;

/// Final grasping outcome categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum GraspOutcome {
    SafeGrasping,
    Slippery,
    PotentialDamage,
}

impl GraspOutcome {
    pub const ALL: [GraspOutcome; 3] = [
        GraspOutcome::SafeGrasping,
        GraspOutcome::Slippery,
        GraspOutcome::PotentialDamage,
    ];

    pub fn class_index(self) -> usize {
        match self {
            GraspOutcome::SafeGrasping => 0,
            GraspOutcome::Slippery => 1,
            GraspOutcome::PotentialDamage => 2,
        }
    }

    pub fn from_class_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Input(format!("grasp outcome index {i} out of range")))
    }
}

impl std::fmt::Display for GraspOutcome {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        let s = match self {
            GraspOutcome::SafeGrasping => "safe-grasping",
            GraspOutcome::Slippery => "slippery",
            GraspOutcome::PotentialDamage => "potential-damage",
        };
        f.write_str(s)
    }
}

/// Grasped fruit categories.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum FruitLabel {
    Plum,
    Apple,
    Lemon,
    Tomato,
    Orange,
    Kiwifruit,
}

impl FruitLabel {
    pub const ALL: [FruitLabel; 6] = [
        FruitLabel::Plum,
        FruitLabel::Apple,
        FruitLabel::Lemon,
        FruitLabel::Tomato,
        FruitLabel::Orange,
        FruitLabel::Kiwifruit,
    ];

    pub fn class_index(self) -> usize {
        Self::ALL.iter().position(|f| *f == self).unwrap()
    }

    pub fn from_class_index(i: usize) -> Result<Self> {
        Self::ALL
            .get(i)
            .copied()
            .ok_or_else(|| Error::Input(format!("fruit index {i} out of range")))
    }
}

/// The fused physical feature embedding: one low-dimensional vector per
/// grasp sample, produced by sensor fusion.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct PhysicalEmbedding(pub Vec<f32>);

impl PhysicalEmbedding {
    pub fn dim(&self) -> usize {
        self.0.len()
    }

    pub fn is_finite(&self) -> bool {
        self.0.iter().all(|v| v.is_finite())
    }
}

/// Single fully-connected layer `in_dim -> out_dim` (weights + bias).
#[derive(Debug, Clone)]
pub struct LinearHead {
    pub prefix: String,
    pub in_dim: usize,
    pub out_dim: usize,
}

impl LinearHead {
    pub fn new(prefix: impl Into<String>, in_dim: usize, out_dim: usize) -> Self {
        LinearHead { prefix: prefix.into(), in_dim, out_dim }
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        // Same N(0, 1/fan_in) scaling the encoders use.
        store.insert(
            format!("{}.w", self.prefix),
            Tensor::randn(&[self.in_dim, self.out_dim], 1.0 / (self.in_dim as f32).sqrt(), rng),
        )?;
        let mut bias = Tensor::zeros(&[self.out_dim]);
        bias.set_requires_grad(true);
        store.insert(format!("{}.b", self.prefix), bias)?;
        Ok(())
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<TensorId> {
        let w = bind.bind(tape, store, &format!("{}.w", self.prefix))?;
        let b = bind.bind(tape, store, &format!("{}.b", self.prefix))?;
        let y = tape.matmul(x, w)?;
        tape.add_bias(y, b)
    }

    /// Overwrites this head's existing parameters with a fresh draw.
    pub fn reinit_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        let fresh = Tensor::randn(&[self.in_dim, self.out_dim], 1.0 / (self.in_dim as f32).sqrt(), rng);
        let w = store
            .get_mut(&format!("{}.w", self.prefix))
            .ok_or_else(|| Error::Config(format!("no parameter {}.w to reinit", self.prefix)))?;
        w.data_mut().copy_from_slice(fresh.data());
        let b = store
            .get_mut(&format!("{}.b", self.prefix))
            .ok_or_else(|| Error::Config(format!("no parameter {}.b to reinit", self.prefix)))?;
        b.data_mut().fill(0.0);
        Ok(())
    }
}

/// Two-layer MLP head `in_dim -> hidden -> out_dim` with a GeLU between.
#[derive(Debug, Clone)]
pub struct MlpHead {
    pub first: LinearHead,
    pub second: LinearHead,
}

impl MlpHead {
    pub fn new(prefix: &str, in_dim: usize, hidden: usize, out_dim: usize) -> Self {
        MlpHead {
            first: LinearHead::new(format!("{prefix}.fc1"), in_dim, hidden),
            second: LinearHead::new(format!("{prefix}.fc2"), hidden, out_dim),
        }
    }

    pub fn init_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.first.init_params(store, rng)?;
        self.second.init_params(store, rng)
    }

    pub fn forward(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        store: &ParamStore,
        x: TensorId,
    ) -> Result<TensorId> {
        let h = self.first.forward(tape, bind, store, x)?;
        let h = tape.gelu(h)?;
        self.second.forward(tape, bind, store, h)
    }

    pub fn reinit_params<R: Rng>(&self, store: &mut ParamStore, rng: &mut R) -> Result<()> {
        self.first.reinit_params(store, rng)?;
        self.second.reinit_params(store, rng)
    }
}

/// Concatenates the two feature vectors of one explorative action, visual
/// first, then tactile.
pub fn fuse_action(tape: &mut Tape, v_visual: TensorId, v_tactile: TensorId) -> Result<TensorId> {
    let (sv, st) = (tape.shape(v_visual).to_vec(), tape.shape(v_tactile).to_vec());
    if sv != st {
        return Err(Error::Shape { op: "fuse_action", lhs: sv, rhs: st });
    }
    tape.concat_lastdim(&[v_visual, v_tactile])
}

/// Fuses the pinch and slide action vectors (each `1 x 2D`) into the physical
/// embedding via a linear projection `4D -> d_e`.
pub fn fuse_sensors(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    fusion: &LinearHead,
    v_pinch: TensorId,
    v_slide: TensorId,
) -> Result<TensorId> {
    let joint = tape.concat_lastdim(&[v_pinch, v_slide])?;
    fusion.forward(tape, bind, store, joint)
}

/// Appends the normalized threshold to the embedding and runs the prediction
/// MLP, producing 3 outcome logits. The threshold enters as a tape node so
/// callers can differentiate with respect to it.
pub fn predict_outcome(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    predictor: &MlpHead,
    embedding: TensorId,
    threshold: TensorId,
) -> Result<TensorId> {
    let scaled = tape.scale(threshold, 1.0 / THRESHOLD_SCALE)?;
    let x = tape.concat_lastdim(&[embedding, scaled])?;
    predictor.forward(tape, bind, store, x)
}

/// [`predict_outcome`] with a plain scalar threshold; rejects negative or
/// non-finite values.
pub fn predict_outcome_value(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    predictor: &MlpHead,
    embedding: TensorId,
    threshold: f64,
) -> Result<TensorId> {
    if !threshold.is_finite() || threshold < 0.0 {
        return Err(Error::Input(format!("force threshold must be finite and >= 0, got {threshold}")));
    }
    let t = tape.constant(vec![threshold as f32], &[1, 1])?;
    predict_outcome(tape, bind, store, predictor, embedding, t)
}

/// Fruit classification logits from a (frozen) physical embedding.
pub fn classify_fruit(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    fruit_head: &MlpHead,
    embedding: TensorId,
) -> Result<TensorId> {
    fruit_head.forward(tape, bind, store, embedding)
}

/// Slip logits (stable vs slip) from the concatenation of the available
/// modality features. At least one feature must be provided.
pub fn detect_slip(
    tape: &mut Tape,
    bind: &mut Bindings,
    store: &ParamStore,
    slip_head: &LinearHead,
    v_visual: Option<TensorId>,
    v_tactile: Option<TensorId>,
) -> Result<TensorId> {
    let feats: Vec<TensorId> = [v_visual, v_tactile].into_iter().flatten().collect();
    if feats.is_empty() {
        return Err(Error::Input("slip detection needs at least one modality".into()));
    }
    let x = if feats.len() == 1 { feats[0] } else { tape.concat_lastdim(&feats)? };
    slip_head.forward(tape, bind, store, x)
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn fuse_action_orders_visual_then_tactile() {
        let mut tape = Tape::new();
        let v = tape.constant(vec![1.0, 2.0], &[1, 2]).unwrap();
        let t = tape.constant(vec![3.0, 4.0], &[1, 2]).unwrap();
        let f = fuse_action(&mut tape, v, t).unwrap();
        assert_eq!(tape.data(f), &[1.0, 2.0, 3.0, 4.0]);
        let swapped = fuse_action(&mut tape, t, v).unwrap();
        assert_ne!(tape.data(f), tape.data(swapped));
    }

    #[test]
    fn fuse_action_zeros() {
        let mut tape = Tape::new();
        let v = tape.constant(vec![0.0; 3], &[1, 3]).unwrap();
        let t = tape.constant(vec![0.0; 3], &[1, 3]).unwrap();
        let f = fuse_action(&mut tape, v, t).unwrap();
        assert_eq!(tape.shape(f), &[1, 6]);
        assert!(tape.data(f).iter().all(|&x| x == 0.0));
    }

    #[test]
    fn zero_weight_heads_give_uniform_logits() {
        let mut store = ParamStore::new();
        let head = MlpHead::new("predict", 5, 8, 3);
        store.insert("predict.fc1.w", Tensor::zeros(&[5, 8])).unwrap();
        store.insert("predict.fc1.b", Tensor::zeros(&[8])).unwrap();
        store.insert("predict.fc2.w", Tensor::zeros(&[8, 3])).unwrap();
        store.insert("predict.fc2.b", Tensor::zeros(&[3])).unwrap();

        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let e = tape.constant(vec![0.3, -0.1, 0.7, 0.0], &[1, 4]).unwrap();
        let logits =
            predict_outcome_value(&mut tape, &mut bind, &store, &head, e, 7.0).unwrap();
        assert_eq!(tape.data(logits), &[0.0, 0.0, 0.0]);
        let sm = tape.softmax_lastdim(logits).unwrap();
        let p = tape.data(sm);
        assert!((p.iter().sum::<f32>() - 1.0).abs() < 1e-6);
        assert!(p.iter().all(|&v| (v - 1.0 / 3.0).abs() < 1e-6));
    }

    #[test]
    fn predictor_rejects_negative_threshold() {
        let mut store = ParamStore::new();
        let head = MlpHead::new("predict", 3, 4, 3);
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(0);
        use rand::SeedableRng;
        head.init_params(&mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let e = tape.constant(vec![0.0, 0.0], &[1, 2]).unwrap();
        let err = predict_outcome_value(&mut tape, &mut bind, &store, &head, e, -1.0).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }

    #[test]
    fn threshold_gradient_is_nonzero() {
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(11);
        let mut store = ParamStore::new();
        let head = MlpHead::new("predict", 5, 8, 3);
        head.init_params(&mut store, &mut rng).unwrap();

        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let e = tape.constant(vec![0.2, -0.4, 0.1, 0.5], &[1, 4]).unwrap();
        let thr = tape.leaf_data(vec![7.0], &[1, 1], true).unwrap();
        let logits = predict_outcome(&mut tape, &mut bind, &store, &head, e, thr).unwrap();
        let probe = tape.constant(vec![1.0, -0.5, 0.25], &[1, 3]).unwrap();
        let weighted = tape.mul(logits, probe).unwrap();
        let loss = tape.sum_all(weighted).unwrap();
        tape.backward(loss).unwrap();
        let g = tape.grad(thr).unwrap();
        assert!(g[0].abs() > 1e-8, "threshold input is dead: grad {g:?}");
    }

    #[test]
    fn detect_slip_requires_a_modality() {
        let mut store = ParamStore::new();
        let head = LinearHead::new("slip", 4, 2);
        use rand::SeedableRng;
        let mut rng = rand_chacha::ChaCha8Rng::seed_from_u64(3);
        head.init_params(&mut store, &mut rng).unwrap();
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let err = detect_slip(&mut tape, &mut bind, &store, &head, None, None).unwrap_err();
        assert!(matches!(err, Error::Input(_)));
    }
}
