//! Adam with bias correction, operating over a parameter store in insertion
//! order. The step consumes and zeroes the accumulated gradients, which is
//! the only place gradients are cleared.

use crate::error::{Error, Result};
use crate::params::ParamStore;
use crate::train::TrainConfig;

/// First/second moment estimates aligned with a store's entry order.
#[derive(Debug, Clone)]
pub struct AdamState {
    m: Vec<Vec<f32>>,
    v: Vec<Vec<f32>>,
    pub step: u64,
}

impl AdamState {
    pub fn new(store: &ParamStore) -> Self {
        let m = store.iter().map(|(_, t)| vec![0.0; t.numel()]).collect::<Vec<_>>();
        AdamState { v: m.clone(), m, step: 0 }
    }
}

/// One bias-corrected Adam update. Missing gradients count as zero.
pub fn adam_step(store: &mut ParamStore, state: &mut AdamState, cfg: &TrainConfig) -> Result<()> {
    if state.m.len() != store.len() {
        return Err(Error::Config(format!(
            "optimizer state covers {} tensors, store has {}",
            state.m.len(),
            store.len()
        )));
    }
    state.step += 1;
    let bc1 = 1.0 - (cfg.beta1 as f64).powi(state.step as i32) as f32;
    let bc2 = 1.0 - (cfg.beta2 as f64).powi(state.step as i32) as f32;
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    for (i, name) in names.iter().enumerate() {
        let t = store.get_mut(name).expect("iterating the store's own names");
        if t.numel() != state.m[i].len() {
            return Err(Error::Config(format!("optimizer state shape mismatch at {name}")));
        }
        let m = &mut state.m[i];
        let v = &mut state.v[i];
        // Borrow the grad slot by value to keep the borrow checker happy.
        let grad = t.grad().map(|g| g.to_vec());
        {
            let data = t.data_mut();
            for j in 0..data.len() {
                let g = grad.as_ref().map(|g| g[j]).unwrap_or(0.0);
                m[j] = cfg.beta1 * m[j] + (1.0 - cfg.beta1) * g;
                v[j] = cfg.beta2 * v[j] + (1.0 - cfg.beta2) * g * g;
                let m_hat = m[j] / bc1;
                let v_hat = v[j] / bc2;
                data[j] -= cfg.lr * m_hat / (v_hat.sqrt() + cfg.eps);
            }
        }
        t.zero_grad();
    }
    Ok(())
}

/// Scales all gradients so their global L2 norm is at most `max_norm`.
pub fn clip_grad_norm(store: &mut ParamStore, max_norm: f32) {
    let mut sq = 0.0f64;
    for (_, t) in store.iter() {
        if let Some(g) = t.grad() {
            for &v in g {
                sq += (v as f64) * (v as f64);
            }
        }
    }
    let norm = sq.sqrt() as f32;
    if norm > max_norm && norm > 0.0 {
        let scale = max_norm / norm;
        let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
        for name in names {
            let t = store.get_mut(&name).unwrap();
            if let Some(g) = t.grad() {
                let scaled: Vec<f32> = g.iter().map(|v| v * scale).collect();
                t.zero_grad();
                t.accumulate_grad(&scaled).expect("same length");
            }
        }
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::tensor::Tensor;
    use crate::train::Task;

    fn cfg() -> TrainConfig {
        TrainConfig {
            lr: 0.1,
            beta1: 0.9,
            beta2: 0.999,
            eps: 1e-8,
            batch_size: 1,
            epochs: 1,
            seed: 0,
            grad_clip: None,
            task: Task::Slip,
        }
    }

    fn store_with(value: f32) -> ParamStore {
        let mut s = ParamStore::new();
        s.insert("w", Tensor::param(vec![value], &[1]).unwrap()).unwrap();
        s
    }

    #[test]
    fn first_step_moves_by_lr_for_unit_gradient() {
        // Bias correction makes m_hat = v_hat = 1 at step 1 for g = 1, so the
        // update is -lr / (1 + eps).
        let mut store = store_with(0.0);
        store.get_mut("w").unwrap().accumulate_grad(&[1.0]).unwrap();
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &mut state, &cfg()).unwrap();
        let w = store.get("w").unwrap().data()[0];
        assert!((w + 0.1).abs() < 1e-6, "got {w}");
        assert_eq!(state.step, 1);
        assert!(store.get("w").unwrap().grad().is_none(), "step zeroes grads");
    }

    #[test]
    fn zero_gradient_leaves_params_unchanged() {
        let mut store = store_with(0.42);
        let mut state = AdamState::new(&store);
        adam_step(&mut store, &mut state, &cfg()).unwrap();
        assert_eq!(store.get("w").unwrap().data()[0], 0.42);
        assert_eq!(state.step, 1);
    }

    #[test]
    fn ten_steps_are_bitwise_reproducible() {
        let run = || {
            let mut store = store_with(1.0);
            let mut state = AdamState::new(&store);
            for k in 0..10 {
                let g = 0.3 + 0.1 * k as f32;
                store.get_mut("w").unwrap().accumulate_grad(&[g]).unwrap();
                adam_step(&mut store, &mut state, &cfg()).unwrap();
            }
            store.get("w").unwrap().data()[0].to_bits()
        };
        assert_eq!(run(), run());
    }

    #[test]
    fn clipping_caps_global_norm() {
        let mut store = ParamStore::new();
        store.insert("a", Tensor::param(vec![0.0, 0.0], &[2]).unwrap()).unwrap();
        store.insert("b", Tensor::param(vec![0.0], &[1]).unwrap()).unwrap();
        store.get_mut("a").unwrap().accumulate_grad(&[3.0, 0.0]).unwrap();
        store.get_mut("b").unwrap().accumulate_grad(&[4.0]).unwrap();
        clip_grad_norm(&mut store, 1.0);
        let ga = store.get("a").unwrap().grad().unwrap().to_vec();
        let gb = store.get("b").unwrap().grad().unwrap().to_vec();
        let norm = (ga[0] * ga[0] + ga[1] * ga[1] + gb[0] * gb[0]).sqrt();
        assert!((norm - 1.0).abs() < 1e-5);
        assert!((ga[0] - 0.6).abs() < 1e-5 && (gb[0] - 0.8).abs() < 1e-5);
    }
}
