// Scratch probe: timing and accuracy of the synthetic tasks at candidate
// desk-scale configurations. Not part of the deliverable surface.

use graspformer_core::data::{generate_grasp, generate_slip, make_splits, SplitRatios, SyntheticSpec};
use graspformer_core::models::{
    FruitModel, FruitModelConfig, OutcomeModel, OutcomeModelConfig, SlipModality, SlipModel,
    SlipModelConfig,
};
use graspformer_core::train::{evaluate, train, Task, TrainConfig};
use graspformer_core::transformer::{EncoderConfig, Variant};
use std::time::Instant;

fn slip_enc(variant: Variant, d: usize, layers: usize, heads: usize, channels: usize) -> EncoderConfig {
    EncoderConfig::new(variant, d, layers, heads, (8, 6), 14, (32, 24), channels)
}

fn grasp_enc(variant: Variant, d: usize, layers: usize, heads: usize, channels: usize) -> EncoderConfig {
    EncoderConfig::new(variant, d, layers, heads, (8, 6), 8, (32, 24), channels)
}

fn spec(samples: usize, seed: u64) -> SyntheticSpec {
    let margin: f64 = std::env::var("PROBE_MARGIN").ok().and_then(|v| v.parse().ok()).unwrap_or(0.08);
    let noise: f32 = std::env::var("PROBE_NOISE").ok().and_then(|v| v.parse().ok()).unwrap_or(0.02);
    SyntheticSpec {
        samples,
        tactile_height: 32,
        tactile_width: 24,
        visual_height: 32,
        visual_width: 24,
        seed,
        class_margin: margin,
        noise,
        ..SyntheticSpec::default()
    }
}

fn main() {
    let args: Vec<String> = std::env::args().collect();
    let which = args.get(1).map(|s| s.as_str()).unwrap_or("all");

    if which == "overfit" || which == "all" {
        let t0 = Instant::now();
        let samples = generate_slip(&spec(32, 11)).unwrap();
        println!("overfit: generated 32 slip samples in {:?}", t0.elapsed());
        let config = SlipModelConfig {
            modality: SlipModality::TactileOnly,
            visual: None,
            tactile: Some(slip_enc(Variant::DividedSpaceTime, 16, 2, 2, 1)),
            seed: 1,
        };
        let mut model = SlipModel::new(config).unwrap();
        let split = graspformer_core::data::SplitIndices {
            train: (0..32).collect(),
            val: vec![],
            test: vec![],
        };
        let lr: f32 = args.get(2).map(|s| s.parse().unwrap()).unwrap_or(1e-3);
        let epochs: usize = args.get(3).map(|s| s.parse().unwrap()).unwrap_or(100);
        let bs: usize = args.get(4).map(|s| s.parse().unwrap()).unwrap_or(8);
        let cfg = TrainConfig { lr, epochs, batch_size: bs, seed: 5, task: Task::Slip, ..TrainConfig::default() };
        let t0 = Instant::now();
        let out = train(&mut model, &samples, &split, &cfg, 0, None).unwrap();
        let first_perfect = out.history.iter().position(|r| r.train_accuracy == 1.0);
        println!(
            "overfit: {} epochs in {:?}; first perfect epoch {:?}; final train acc {}",
            cfg.epochs,
            t0.elapsed(),
            first_perfect,
            out.history.last().unwrap().train_accuracy
        );
        for r in out.history.iter().step_by(epochs / 20 + 1) {
            println!("  epoch {:3} loss {:.4} acc {:.3}", r.epoch, r.train_loss, r.train_accuracy);
        }
        let mut worst = 0.0f64;
        for w in out.history.windows(2) {
            if w[0].epoch >= 10 {
                let inc = (w[1].train_loss - w[0].train_loss) / w[0].train_loss;
                if inc > worst { worst = inc; }
            }
        }
        println!("overfit: worst relative loss increase after epoch 10: {:.4}", worst);
        for w in out.history.windows(2) {
            if w[0].epoch >= 10 && w[1].train_loss > w[0].train_loss * 1.05 {
                println!("  bump at epoch {} -> {}: {:.5} -> {:.5}", w[0].epoch, w[1].epoch, w[0].train_loss, w[1].train_loss);
            }
        }
    }

    if which == "slip" || which == "all" {
        for variant in [Variant::DividedSpaceTime, Variant::FactorisedDotProduct] {
            let t0 = Instant::now();
            let samples = generate_slip(&spec(256, 22)).unwrap();
            println!("slip {variant}: generated in {:?}", t0.elapsed());
            let config = SlipModelConfig {
                modality: SlipModality::VisionAndTactile,
                visual: Some(slip_enc(variant, 32, 2, 4, 3)),
                tactile: Some(slip_enc(variant, 32, 2, 4, 1)),
                seed: 2,
            };
            let mut model = SlipModel::new(config).unwrap();
            let split = make_splits(256, SplitRatios::default(), 1, 7).unwrap().remove(0);
            let cfg = TrainConfig { lr: 1e-3, epochs: 15, batch_size: 8, seed: 5, task: Task::Slip, ..TrainConfig::default() };
            let t0 = Instant::now();
            let out = train(&mut model, &samples, &split, &cfg, 0, None).unwrap();
            println!(
                "slip {variant}: {} epochs in {:?}; val-best epoch {}; test acc {:.3}",
                cfg.epochs,
                t0.elapsed(),
                out.best_epoch,
                out.test.accuracy
            );
            for r in out.history.iter().step_by(3) {
                println!(
                    "  epoch {:2} train {:.3}/{:.3} val {:.3}",
                    r.epoch, r.train_loss, r.train_accuracy,
                    r.val_accuracy.unwrap_or(f64::NAN)
                );
            }
        }
    }

    if which == "outcome" || which == "all" {
        let only_divided = std::env::var("PROBE_VARIANTS").map(|v| v == "divided").unwrap_or(false);
        for variant in [Variant::DividedSpaceTime, Variant::FactorisedDotProduct] {
            if only_divided && variant != Variant::DividedSpaceTime { continue; }
            let t0 = Instant::now();
            let n_samples: usize = std::env::args().nth(2).map(|s| s.parse().unwrap()).unwrap_or(384);
            let d: usize = std::env::args().nth(3).map(|s| s.parse().unwrap()).unwrap_or(24);
            let layers: usize = std::env::args().nth(4).map(|s| s.parse().unwrap()).unwrap_or(1);
            let de: usize = std::env::args().nth(5).map(|s| s.parse().unwrap()).unwrap_or(8);
            let epochs: usize = std::env::args().nth(6).map(|s| s.parse().unwrap()).unwrap_or(25);
            let samples = generate_grasp(&spec(n_samples, 33)).unwrap();
            println!("outcome {variant}: generated {n_samples} in {:?} (d={d} l={layers} de={de})", t0.elapsed());
            let hh: usize = std::env::args().nth(7).map(|s| s.parse().unwrap()).unwrap_or(64);
            let config = OutcomeModelConfig {
                tactile: grasp_enc(variant, d, layers, 4, 1),
                visual: grasp_enc(variant, d, layers, 4, 3),
                embedding_dim: de,
                head_hidden: hh,
                embedding_dropout: std::env::args().nth(8).map(|s| s.parse().unwrap()).unwrap_or(0.0),
                seed: 3,
            };
            let mut model = OutcomeModel::new(config).unwrap();
            let split = make_splits(n_samples, SplitRatios::default(), 1, 8).unwrap().remove(0);
            let cfg = TrainConfig { lr: 1e-3, epochs, batch_size: 8, seed: 6, task: Task::Outcome, ..TrainConfig::default() };
            let t0 = Instant::now();
            let out = train(&mut model, &samples, &split, &cfg, 0, None).unwrap();
            println!(
                "outcome {variant}: {} epochs in {:?}; test acc {:.3}",
                cfg.epochs,
                t0.elapsed(),
                out.test.accuracy
            );
            let t0 = Instant::now();
            let rcfg = TrainConfig { lr: 1e-2, epochs: 800, batch_size: 32, seed: 1005, task: Task::Outcome, ..TrainConfig::default() };
            let rout = model.refine_predictor(&samples, &split, &rcfg, None).unwrap();
            println!("refined: test acc {:.3} in {:?} (best ep {})", rout.test.accuracy, t0.elapsed(), rout.best_epoch);
            let post = evaluate(&model, &samples, &split.test).unwrap();
            println!("refined full-forward test acc {:.3}", post.accuracy);
            for r in out.history.iter().step_by(3) {
                println!(
                    "  epoch {:2} train {:.3}/{:.3} val {:.3}",
                    r.epoch, r.train_loss, r.train_accuracy,
                    r.val_accuracy.unwrap_or(f64::NAN)
                );
            }

            // Diagnostic: a fresh predictor on the frozen embeddings tells
            // whether the joint dynamics or the features are the blocker.
            {
                use graspformer_core::heads::{predict_outcome_value, MlpHead};
                use graspformer_core::params::{Bindings, ParamStore};
                use graspformer_core::tensor::{Tape, TensorId};
                use graspformer_core::train::ClassifierModel;
                use rand::SeedableRng;
                struct FrozenPredictor { head: MlpHead, store: ParamStore, dropout: f32 }
                struct S { e: Vec<f32>, thr: f64, label: usize }
                impl ClassifierModel for FrozenPredictor {
                    type Sample = S;
                    fn num_classes(&self) -> usize { 3 }
                    fn params(&self) -> &ParamStore { &self.store }
                    fn params_mut(&mut self) -> &mut ParamStore { &mut self.store }
                    fn label(&self, s: &S) -> usize { s.label }
                    fn logits(&self, tape: &mut Tape, bind: &mut graspformer_core::params::Bindings, s: &S) -> graspformer_core::error::Result<TensorId> {
                        let e = tape.constant(s.e.clone(), &[1, s.e.len()])?;
                        predict_outcome_value(tape, bind, &self.store, &self.head, e, s.thr)
                    }
                    fn logits_train(&self, tape: &mut Tape, bind: &mut graspformer_core::params::Bindings, s: &S, rng: &mut rand_chacha::ChaCha8Rng) -> graspformer_core::error::Result<TensorId> {
                        use rand::Rng;
                        let mut e = tape.constant(s.e.clone(), &[1, s.e.len()])?;
                        if self.dropout > 0.0 {
                            let keep = 1.0 - self.dropout;
                            let mask: Vec<f32> = (0..s.e.len()).map(|_| if rng.random::<f32>() < keep { 1.0 / keep } else { 0.0 }).collect();
                            let m = tape.constant(mask, &[1, s.e.len()])?;
                            e = tape.mul(e, m)?;
                        }
                        predict_outcome_value(tape, bind, &self.store, &self.head, e, s.thr)
                    }
                }
                let _ = Bindings::new();
                let embedded: Vec<S> = samples.iter().map(|smp| S {
                    e: model.extract_embedding(smp).unwrap().0,
                    thr: smp.force_threshold,
                    label: smp.outcome.class_index(),
                }).collect();
                for (name, tanh_e, drop, hidden, plr, pep, pbs) in [
                    ("base-d0.3", false, 0.3f32, 64usize, 1e-2f32, 800usize, 32usize),
                ] {
                    let data: Vec<S> = embedded.iter().map(|s| S {
                        e: if tanh_e { s.e.iter().map(|v| v.tanh()).collect() } else { s.e.clone() },
                        thr: s.thr, label: s.label,
                    }).collect();
                    let head = MlpHead::new(name, de + 1, hidden, 3);
                    let mut store = ParamStore::new();
                    head.init_params(&mut store, &mut rand_chacha::ChaCha8Rng::seed_from_u64(77)).unwrap();
                    let mut fp = FrozenPredictor { head, store, dropout: drop };
                    let pcfg = TrainConfig { lr: plr, epochs: pep, batch_size: pbs, seed: 5, task: Task::Outcome, ..TrainConfig::default() };
                    let pout = train(&mut fp, &data, &split, &pcfg, 0, None).unwrap();
                    println!("frozen-predictor {name}: test acc {:.3} (train {:.3}, best ep {})", pout.test.accuracy,
                             pout.history.last().unwrap().train_accuracy, pout.best_epoch);
                }
            }

            if variant == Variant::DividedSpaceTime {
                // Force inference hit rate on test samples.
                let t0 = Instant::now();
                let spec = spec(n_samples, 33);
                let candidates = graspformer_core::force::CandidateSet::default();
                let mut inside = 0;
                let mut nonempty = 0;
                for &i in &split.test {
                    let p = graspformer_core::data::planted_params(&spec, i);
                    let e = model.extract_embedding(&samples[i]).unwrap();
                    match model.select_safe_threshold(&e, &candidates) {
                        Ok(r) => {
                            nonempty += 1;
                            let c = r.chosen_threshold.unwrap();
                            if (p.safe_lo as f64..=p.safe_hi as f64).contains(&c) {
                                inside += 1;
                            }
                        }
                        Err(_) => {}
                    }
                }
                println!(
                    "force: {}/{} chosen inside planted interval ({} nonempty) in {:?}",
                    inside,
                    split.test.len(),
                    nonempty,
                    t0.elapsed()
                );

                // Fruit head on frozen embeddings.
                let t0 = Instant::now();
                let embedded = model.embed_samples(&samples).unwrap();
                let mut fruit = FruitModel::new(FruitModelConfig { embedding_dim: de, head_hidden: 64, seed: 9 }).unwrap();
                let fcfg = TrainConfig { lr: 3e-3, epochs: 200, batch_size: 16, seed: 5, task: Task::Fruit, ..TrainConfig::default() };
                let fout = train(&mut fruit, &embedded, &split, &fcfg, 0, None).unwrap();
                let test_metrics = evaluate(&fruit, &embedded, &split.test).unwrap();
                println!(
                    "fruit: trained in {:?}; best epoch {}; test acc {:.3}",
                    t0.elapsed(),
                    fout.best_epoch,
                    test_metrics.accuracy
                );
            }
        }
    }
}
