//! Safe-force-threshold search over a candidate grid, and the depth-trigger
//! rule used during grasp execution.

use rand::Rng;
use rand::SeedableRng;
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::heads::GraspOutcome;

/// Grid of force-threshold candidates, in depth-pixel units, sorted ascending.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct CandidateSet {
    values: Vec<f64>,
}

impl CandidateSet {
    /// Integer grid `min, min+step, ..., <= max`.
    pub fn integer_range(min: i64, max: i64, step: i64) -> Result<Self> {
        if min > max || step <= 0 {
            return Err(Error::Config(format!(
                "invalid candidate range {min}..{max} step {step}"
            )));
        }
        let values = (min..=max).step_by(step as usize).map(|v| v as f64).collect();
        Ok(CandidateSet { values })
    }

    /// `count` thresholds drawn uniformly from `[min, max]`, sorted. The
    /// sampling distribution is uniform; nothing finer is specified anywhere.
    pub fn random_uniform(min: f64, max: f64, count: usize, seed: u64) -> Result<Self> {
        if !(min <= max) || count == 0 {
            return Err(Error::Config(format!(
                "invalid random candidate spec [{min}, {max}] x {count}"
            )));
        }
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        let mut values: Vec<f64> = (0..count)
            .map(|_| min + (max - min) * rng.random::<f64>())
            .collect();
        values.sort_by(|a, b| a.partial_cmp(b).unwrap());
        Ok(CandidateSet { values })
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }
}

impl Default for CandidateSet {
    /// Integers 4 through 16.
    fn default() -> Self {
        CandidateSet::integer_range(4, 16, 1).expect("default range is valid")
    }
}

/// One predictor evaluation at a candidate threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct ThresholdCall {
    pub threshold: f64,
    pub outcome: GraspOutcome,
    /// Softmax probability assigned to the safe class.
    pub safe_probability: f32,
}

/// Full per-candidate report plus the selected threshold.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct InferenceResult {
    pub calls: Vec<ThresholdCall>,
    /// Candidates predicted safe, ascending.
    pub safe_set: Vec<f64>,
    /// Arithmetic mean of `safe_set`; present iff `safe_set` is nonempty.
    pub chosen_threshold: Option<f64>,
}

/// Raised when no candidate is predicted safe. Carries the per-candidate
/// report and the highest-safe-probability candidate so callers can surface
/// a fallback, clearly labeled unsafe.
#[derive(Debug, Clone, PartialEq, thiserror::Error, Serialize, Deserialize)]
#[error("no candidate threshold was predicted safe (best fallback {} at safe probability {:.3})",
        fallback.threshold, fallback.safe_probability)]
pub struct NoSafeThreshold {
    pub calls: Vec<ThresholdCall>,
    pub fallback: ThresholdCall,
}

/// Evaluates the predictor at every candidate (no early exit) against one
/// fixed embedding, then selects the mean of the safe candidates. The
/// predictor closure returns the 3 outcome logits for a given threshold.
pub fn select_safe_threshold<F>(mut predict: F, candidates: &CandidateSet) -> Result<InferenceResult>
where
    F: FnMut(f64) -> Result<[f32; 3]>,
{
    if candidates.is_empty() {
        return Err(Error::Config("empty candidate set".into()));
    }
    let mut calls = Vec::with_capacity(candidates.len());
    for &threshold in candidates.values() {
        let logits = predict(threshold)?;
        if logits.iter().any(|v| !v.is_finite()) {
            return Err(Error::Numeric(format!(
                "predictor produced non-finite logits at threshold {threshold}"
            )));
        }
        let argmax = (0..3).max_by(|&a, &b| logits[a].partial_cmp(&logits[b]).unwrap()).unwrap();
        let outcome = GraspOutcome::from_class_index(argmax)?;
        calls.push(ThresholdCall {
            threshold,
            outcome,
            safe_probability: softmax3(logits)[GraspOutcome::SafeGrasping.class_index()],
        });
    }
    let safe_set: Vec<f64> = calls
        .iter()
        .filter(|c| c.outcome == GraspOutcome::SafeGrasping)
        .map(|c| c.threshold)
        .collect();
    if safe_set.is_empty() {
        let fallback = calls
            .iter()
            .max_by(|a, b| a.safe_probability.partial_cmp(&b.safe_probability).unwrap())
            .cloned()
            .expect("calls is nonempty");
        return Err(NoSafeThreshold { calls, fallback }.into());
    }
    let chosen = safe_set.iter().sum::<f64>() / safe_set.len() as f64;
    Ok(InferenceResult {
        calls,
        safe_set,
        chosen_threshold: Some(chosen),
    })
}

/// First index `i` (0-based) such that the depth reading exceeded the
/// threshold at `i-2`, `i-1`, and `i`; `None` if that never happens.
pub fn trigger_grasp(depth_stream: &[f64], threshold: f64) -> Option<usize> {
    let mut run = 0usize;
    for (i, &d) in depth_stream.iter().enumerate() {
        if d > threshold {
            run += 1;
            if run >= 3 {
                return Some(i);
            }
        } else {
            run = 0;
        }
    }
    None
}

fn softmax3(logits: [f32; 3]) -> [f32; 3] {
    let max = logits.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
    let exps = logits.map(|v| (v - max).exp());
    let sum: f32 = exps.iter().sum();
    exps.map(|v| v / sum)
}
