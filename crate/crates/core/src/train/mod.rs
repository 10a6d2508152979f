//! Losses, the optimizer loop, metrics, and multi-split averaging.
//!
//! Training is single-threaded and fully deterministic for a fixed seed: the
//! shuffle order, batch assembly, and every f32 operation happen in a fixed
//! sequence, so two runs with the same inputs produce bitwise identical
//! parameters.

mod adam;

pub use adam::{adam_step, clip_grad_norm, AdamState};

use std::io::Write;

use rand::seq::SliceRandom;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::data::SplitIndices;
use crate::error::{Error, Result};
use crate::params::{Bindings, ParamStore};
use crate::tensor::{Tape, TensorId};

/// Which classification task a run optimizes.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "kebab-case")]
pub enum Task {
    Slip,
    Outcome,
    Fruit,
}

/// Optimizer and loop hyperparameters.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(default, deny_unknown_fields)]
pub struct TrainConfig {
    pub lr: f32,
    pub beta1: f32,
    pub beta2: f32,
    pub eps: f32,
    pub batch_size: usize,
    pub epochs: usize,
    pub seed: u64,
    /// Optional global-norm gradient clip.
    pub grad_clip: Option<f32>,
    pub task: Task,
}

impl Default for TrainConfig {
    fn default() -> Self {
        TrainConfig {
            lr: 3e-4,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 8,
            epochs: 30,
            seed: 0,
            grad_clip: None,
            task: Task::Slip,
        }
    }
}

impl TrainConfig {
    pub fn validate(&self) -> Result<()> {
        if !(self.lr > 0.0 && self.lr.is_finite()) {
            return Err(Error::Config(format!("learning rate must be positive, got {}", self.lr)));
        }
        for (name, b) in [("beta1", self.beta1), ("beta2", self.beta2)] {
            if !(0.0..1.0).contains(&b) {
                return Err(Error::Config(format!("{name} must lie in [0, 1), got {b}")));
            }
        }
        if self.eps <= 0.0 || self.batch_size == 0 || self.epochs == 0 {
            return Err(Error::Config("eps, batch size, and epochs must be positive".into()));
        }
        Ok(())
    }
}

/// Confusion counts; rows are true classes, columns predictions.
#[derive(Debug, Clone, PartialEq, Eq, Serialize, Deserialize)]
pub struct Confusion {
    pub classes: usize,
    /// Row-major `classes x classes` counts.
    pub counts: Vec<usize>,
}

impl Confusion {
    pub fn new(classes: usize) -> Self {
        Confusion { classes, counts: vec![0; classes * classes] }
    }

    pub fn add(&mut self, true_class: usize, predicted: usize) {
        self.counts[true_class * self.classes + predicted] += 1;
    }

    pub fn total(&self) -> usize {
        self.counts.iter().sum()
    }

    pub fn trace(&self) -> usize {
        (0..self.classes).map(|i| self.counts[i * self.classes + i]).sum()
    }

    pub fn row_sum(&self, true_class: usize) -> usize {
        self.counts[true_class * self.classes..(true_class + 1) * self.classes]
            .iter()
            .sum()
    }

    pub fn accuracy(&self) -> f64 {
        if self.total() == 0 {
            0.0
        } else {
            self.trace() as f64 / self.total() as f64
        }
    }
}

/// Evaluation result on one sample set.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct Metrics {
    pub loss: f64,
    pub accuracy: f64,
    pub confusion: Confusion,
}

/// Mean and population variance of metrics across dataset splits.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct SplitSummary {
    pub mean_accuracy: f64,
    pub var_accuracy: f64,
    pub mean_loss: f64,
    pub var_loss: f64,
    pub per_split: Vec<Metrics>,
}

/// Mean and population variance over per-split metrics.
pub fn average_over_splits(per_split: &[Metrics]) -> Result<SplitSummary> {
    if per_split.is_empty() {
        return Err(Error::Input("no split metrics to average".into()));
    }
    let n = per_split.len() as f64;
    let mean = |f: &dyn Fn(&Metrics) -> f64| per_split.iter().map(|m| f(m)).sum::<f64>() / n;
    let mean_accuracy = mean(&|m| m.accuracy);
    let mean_loss = mean(&|m| m.loss);
    let var = |f: &dyn Fn(&Metrics) -> f64, mu: f64| {
        per_split.iter().map(|m| (f(m) - mu) * (f(m) - mu)).sum::<f64>() / n
    };
    Ok(SplitSummary {
        mean_accuracy,
        var_accuracy: var(&|m| m.accuracy, mean_accuracy),
        mean_loss,
        var_loss: var(&|m| m.loss, mean_loss),
        per_split: per_split.to_vec(),
    })
}

/// One line of the training log.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct EpochRecord {
    pub split: usize,
    pub epoch: usize,
    pub train_loss: f64,
    pub train_accuracy: f64,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_loss: Option<f64>,
    #[serde(skip_serializing_if = "Option::is_none")]
    pub val_accuracy: Option<f64>,
}

/// Result of one training run.
#[derive(Debug, Clone)]
pub struct TrainOutcome {
    /// Test-set metrics of the selected checkpoint.
    pub test: Metrics,
    pub history: Vec<EpochRecord>,
    /// Epoch whose parameters were kept (best validation accuracy, ties
    /// broken by lower validation loss; the last epoch when there is no
    /// validation split).
    pub best_epoch: usize,
}

/// Anything trainable by cross-entropy over per-sample logits.
pub trait ClassifierModel {
    type Sample;

    fn num_classes(&self) -> usize;
    fn params(&self) -> &ParamStore;
    fn params_mut(&mut self) -> &mut ParamStore;
    fn label(&self, sample: &Self::Sample) -> usize;
    /// Builds the `[1, num_classes]` logit row for one sample.
    fn logits(&self, tape: &mut Tape, bind: &mut Bindings, sample: &Self::Sample)
        -> Result<TensorId>;

    /// Training-time forward pass. Models that regularize stochastically
    /// (seeded dropout) override this; evaluation always uses [`logits`].
    ///
    /// [`logits`]: ClassifierModel::logits
    fn logits_train(
        &self,
        tape: &mut Tape,
        bind: &mut Bindings,
        sample: &Self::Sample,
        _rng: &mut ChaCha8Rng,
    ) -> Result<TensorId> {
        self.logits(tape, bind, sample)
    }
}

/// Epoch loop of seeded shuffled minibatches with validation-based checkpoint
/// selection and a final test evaluation. Writes one JSON line per epoch to
/// `log` when given.
pub fn train<M: ClassifierModel>(
    model: &mut M,
    samples: &[M::Sample],
    split: &SplitIndices,
    cfg: &TrainConfig,
    split_tag: usize,
    mut log: Option<&mut dyn Write>,
) -> Result<TrainOutcome> {
    cfg.validate()?;
    if split.train.is_empty() {
        return Err(Error::Input("training split is empty".into()));
    }
    let bound = |idx: &[usize]| -> Result<()> {
        match idx.iter().find(|&&i| i >= samples.len()) {
            Some(&bad) => Err(Error::Input(format!("split index {bad} out of range"))),
            None => Ok(()),
        }
    };
    bound(&split.train)?;
    bound(&split.val)?;
    bound(&split.test)?;

    let mut state = AdamState::new(model.params());
    let mut history = Vec::with_capacity(cfg.epochs);
    let mut best: Option<(f64, f64, usize, Vec<Vec<f32>>)> = None; // (acc, loss, epoch, params)

    let mut order = split.train.to_vec();
    for epoch in 0..cfg.epochs {
        let mut rng = ChaCha8Rng::seed_from_u64(cfg.seed);
        rng.set_stream(epoch as u64 + 1);
        order.shuffle(&mut rng);

        let mut epoch_loss = 0.0f64;
        let mut correct = 0usize;
        for batch in order.chunks(cfg.batch_size) {
            let mut tape = Tape::new();
            let mut bind = Bindings::new();
            let mut rows = Vec::with_capacity(batch.len());
            let mut labels = Vec::with_capacity(batch.len());
            for &i in batch {
                rows.push(model.logits_train(&mut tape, &mut bind, &samples[i], &mut rng)?);
                labels.push(model.label(&samples[i]));
            }
            let logits = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows)? };
            for (r, &label) in labels.iter().enumerate() {
                if argmax(&tape.data(logits)[r * model.num_classes()..(r + 1) * model.num_classes()])
                    == label
                {
                    correct += 1;
                }
            }
            let loss = tape.cross_entropy(logits, &labels)?;
            let loss_value = tape.data(loss)[0];
            if !loss_value.is_finite() {
                return Err(Error::Numeric(format!(
                    "non-finite loss at epoch {epoch} (split {split_tag})"
                )));
            }
            epoch_loss += loss_value as f64 * batch.len() as f64;
            tape.backward(loss)?;
            bind.apply_grads(&tape, model.params_mut())?;
            if let Some(clip) = cfg.grad_clip {
                clip_grad_norm(model.params_mut(), clip);
            }
            adam_step(model.params_mut(), &mut state, cfg)?;
        }

        let train_loss = epoch_loss / split.train.len() as f64;
        let train_accuracy = correct as f64 / split.train.len() as f64;
        let val = if split.val.is_empty() {
            None
        } else {
            Some(evaluate(model, samples, &split.val)?)
        };
        if let Some(v) = &val {
            let better = match &best {
                None => true,
                Some((acc, loss, _, _)) => {
                    v.accuracy > *acc || (v.accuracy == *acc && v.loss < *loss)
                }
            };
            if better {
                best = Some((v.accuracy, v.loss, epoch, model.params().snapshot()));
            }
        }
        let record = EpochRecord {
            split: split_tag,
            epoch,
            train_loss,
            train_accuracy,
            val_loss: val.as_ref().map(|m| m.loss),
            val_accuracy: val.as_ref().map(|m| m.accuracy),
        };
        if let Some(w) = log.as_deref_mut() {
            writeln!(w, "{}", serde_json::to_string(&record)?)?;
        }
        history.push(record);
    }

    let best_epoch = match best {
        Some((_, _, epoch, snapshot)) => {
            model.params_mut().restore(&snapshot)?;
            epoch
        }
        None => cfg.epochs - 1,
    };
    let test = if split.test.is_empty() {
        evaluate(model, samples, &split.train)?
    } else {
        evaluate(model, samples, &split.test)?
    };
    Ok(TrainOutcome { test, history, best_epoch })
}

/// Forward-only evaluation; never mutates the model.
pub fn evaluate<M: ClassifierModel>(
    model: &M,
    samples: &[M::Sample],
    indices: &[usize],
) -> Result<Metrics> {
    if indices.is_empty() {
        return Err(Error::Input("evaluation split is empty".into()));
    }
    let k = model.num_classes();
    let mut confusion = Confusion::new(k);
    let mut loss_sum = 0.0f64;
    for chunk in indices.chunks(16) {
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let mut rows = Vec::with_capacity(chunk.len());
        let mut labels = Vec::with_capacity(chunk.len());
        for &i in chunk {
            rows.push(model.logits(&mut tape, &mut bind, &samples[i])?);
            labels.push(model.label(&samples[i]));
        }
        let logits = if rows.len() == 1 { rows[0] } else { tape.concat_rows(&rows)? };
        for (r, &label) in labels.iter().enumerate() {
            confusion.add(label, argmax(&tape.data(logits)[r * k..(r + 1) * k]));
        }
        let loss = tape.cross_entropy(logits, &labels)?;
        loss_sum += tape.data(loss)[0] as f64 * chunk.len() as f64;
    }
    Ok(Metrics {
        loss: loss_sum / indices.len() as f64,
        accuracy: confusion.accuracy(),
        confusion,
    })
}

fn argmax(row: &[f32]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate() {
        if v > row[best] {
            best = i;
        }
    }
    best
}
