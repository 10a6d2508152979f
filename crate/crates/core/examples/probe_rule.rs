// Scratch: upper bound — can the prediction MLP learn the interval rule from
// clean bin features plus the threshold?
use graspformer_core::data::{make_splits, planted_params, SplitRatios, SyntheticSpec};
use graspformer_core::heads::{predict_outcome_value, MlpHead};
use graspformer_core::params::{Bindings, ParamStore};
use graspformer_core::tensor::{Tape, TensorId};
use graspformer_core::train::{train, ClassifierModel, Task, TrainConfig};
use rand::SeedableRng;

struct RulePredictor { head: MlpHead, store: ParamStore }
struct S { e: Vec<f32>, thr: f64, label: usize }
impl ClassifierModel for RulePredictor {
    type Sample = S;
    fn num_classes(&self) -> usize { 3 }
    fn params(&self) -> &ParamStore { &self.store }
    fn params_mut(&mut self) -> &mut ParamStore { &mut self.store }
    fn label(&self, s: &S) -> usize { s.label }
    fn logits(&self, tape: &mut Tape, bind: &mut Bindings, s: &S) -> graspformer_core::error::Result<TensorId> {
        let e = tape.constant(s.e.clone(), &[1, s.e.len()])?;
        predict_outcome_value(tape, bind, &self.store, &self.head, e, s.thr)
    }
}

fn main() {
    let spec = SyntheticSpec { samples: 384, class_margin: 0.08, ..SyntheticSpec::default() };
    // Clean one-hot bins + small noise as the "embedding".
    use rand::Rng;
    let mut noise_rng = rand_chacha::ChaCha8Rng::seed_from_u64(50);
    let samples: Vec<S> = (0..spec.samples).map(|i| {
        let p = planted_params(&spec, i);
        let h_bin = ((p.safe_lo - 5) / 3) as usize;
        let t_bin = ((p.safe_hi - p.safe_lo - 2) / 2) as usize;
        let mut e = vec![0.0f32; 5];
        e[h_bin] = 1.0;
        e[3 + t_bin] = 1.0;
        for v in e.iter_mut() { *v += 0.05 * (noise_rng.random::<f32>() - 0.5); }
        S { e, thr: p.threshold as f64, label: p.outcome_for(p.threshold as f64).class_index() }
    }).collect();
    let split = make_splits(spec.samples, SplitRatios::default(), 1, 8).unwrap().remove(0);
    let head = MlpHead::new("predict", 6, 64, 3);
    let mut store = ParamStore::new();
    head.init_params(&mut store, &mut rand_chacha::ChaCha8Rng::seed_from_u64(7)).unwrap();
    let mut model = RulePredictor { head, store };
    for (lr, epochs) in [(3e-3f32, 300usize)] {
        let cfg = TrainConfig { lr, epochs, batch_size: 16, seed: 5, task: Task::Outcome, ..TrainConfig::default() };
        let out = train(&mut model, &samples, &split, &cfg, 0, None).unwrap();
        println!("rule-learnability: lr {lr} epochs {epochs}: test acc {:.3} (train {:.3}, best epoch {})",
            out.test.accuracy, out.history.last().unwrap().train_accuracy, out.best_epoch);
    }
}
