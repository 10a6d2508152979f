//! Test-only oracles, independent of the implementation paths they check: a
//! central finite-difference gradient checker and masked-full-attention /
//! layer references written with plain loops. This crate is a dev-dependency
//! of the test suites and never ships with the library or CLI.

use graspformer_core::params::{Bindings, ParamStore};
use graspformer_core::tensor::{Tape, Tensor, TensorId};
use graspformer_core::transformer::TokenGroups;

/// Outcome of one gradient check, aggregated over every parameter element.
#[derive(Debug, Clone, Copy)]
pub struct GradCheck {
    pub rel_err: f64,
    pub analytic_norm: f64,
    pub numeric_norm: f64,
}

/// Builds a scalar loss from the store's parameters on the given tape.
pub type LossBuilder<'a> = &'a dyn Fn(&mut Tape, &mut Bindings, &ParamStore) -> TensorId;

/// Central finite differences over every element of every store tensor,
/// compared against one reverse-mode pass by joint L2 norm.
pub fn fd_check_store(store: &ParamStore, build: LossBuilder, eps: f32) -> GradCheck {
    // Reverse-mode gradient.
    let mut analytic: Vec<f64> = Vec::new();
    {
        let mut grads = store.clone();
        grads.zero_grads();
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let loss = build(&mut tape, &mut bind, &grads);
        tape.backward(loss).expect("backward");
        bind.apply_grads(&tape, &mut grads).expect("grad transfer");
        for (_, t) in grads.iter() {
            match t.grad() {
                Some(g) => analytic.extend(g.iter().map(|&v| v as f64)),
                None => analytic.extend(std::iter::repeat(0.0).take(t.numel())),
            }
        }
    }

    // Finite differences, loss evaluated in f32, quotient in f64.
    let eval = |s: &ParamStore| -> f64 {
        let mut tape = Tape::new();
        let mut bind = Bindings::new();
        let loss = build(&mut tape, &mut bind, s);
        tape.data(loss)[0] as f64
    };
    let names: Vec<String> = store.iter().map(|(n, _)| n.to_string()).collect();
    let mut numeric: Vec<f64> = Vec::with_capacity(analytic.len());
    for name in &names {
        let numel = store.get(name).unwrap().numel();
        for j in 0..numel {
            let mut plus = store.clone();
            plus.get_mut(name).unwrap().data_mut()[j] += eps;
            let mut minus = store.clone();
            minus.get_mut(name).unwrap().data_mut()[j] -= eps;
            numeric.push((eval(&plus) - eval(&minus)) / (2.0 * eps as f64));
        }
    }

    let norm = |v: &[f64]| v.iter().map(|x| x * x).sum::<f64>().sqrt();
    let diff: Vec<f64> = analytic.iter().zip(&numeric).map(|(a, n)| a - n).collect();
    let (na, nn) = (norm(&analytic), norm(&numeric));
    let denom = na.max(nn);
    GradCheck {
        rel_err: if denom == 0.0 { 0.0 } else { norm(&diff) / denom },
        analytic_norm: na,
        numeric_norm: nn,
    }
}

/// Convenience: store with tensors named `p0..pN`.
pub fn store_of(tensors: Vec<Tensor>) -> ParamStore {
    let mut store = ParamStore::new();
    for (i, t) in tensors.into_iter().enumerate() {
        store.insert(format!("p{i}"), t).unwrap();
    }
    store
}

pub fn uniform_tensor(rng: &mut impl rand::Rng, shape: &[usize], scale: f32) -> Tensor {
    let numel: usize = shape.iter().product();
    let data: Vec<f32> = (0..numel).map(|_| (rng.random::<f32>() * 2.0 - 1.0) * scale).collect();
    Tensor::param(data, shape).unwrap()
}

// ── masked-full-attention oracle ───────────────────────────────────────

/// Plain-loop reference for group-restricted multi-head attention followed by
/// an output projection.
///
/// For rows inside a partition group this is exactly full attention with an
/// additive -inf mask outside the group. A shared row (the CLS token) is
/// evaluated once per group and its outputs averaged; passthrough rows
/// produce zero. `wo` has `|head_range| * (d / num_heads)` rows.
#[allow(clippy::too_many_arguments)]
pub fn masked_multi_head_oracle(
    x: &[f32],
    n: usize,
    d: usize,
    wq: &[f32],
    wk: &[f32],
    wv: &[f32],
    wo: &[f32],
    num_heads: usize,
    head_range: std::ops::Range<usize>,
    groups: &TokenGroups,
) -> Vec<f32> {
    let dh = d / num_heads;
    let project = |w: &[f32]| -> Vec<f32> {
        let mut out = vec![0.0f32; n * d];
        for i in 0..n {
            for j in 0..d {
                let mut s = 0.0;
                for p in 0..d {
                    s += x[i * d + p] * w[p * d + j];
                }
                out[i * d + j] = s;
            }
        }
        out
    };
    let (q, k, v) = (project(wq), project(wk), project(wv));

    let width = head_range.len() * dh;
    let mut pre = vec![0.0f32; n * width]; // concatenated head outputs
    let mut counts = vec![0u32; n];

    for (gi, _) in groups.groups.iter().enumerate() {
        let mut rows: Vec<usize> = Vec::new();
        if let Some(s) = groups.shared {
            rows.push(s);
        }
        rows.extend_from_slice(&groups.groups[gi]);
        let m = rows.len();
        for (hi, head) in head_range.clone().enumerate() {
            let col0 = head * dh;
            // Full m x m logits with no masking needed: the gather IS the mask.
            let mut logits = vec![0.0f32; m * m];
            for (a, &ra) in rows.iter().enumerate() {
                for (b, &rb) in rows.iter().enumerate() {
                    let mut s = 0.0;
                    for c in 0..dh {
                        s += q[ra * d + col0 + c] * k[rb * d + col0 + c];
                    }
                    logits[a * m + b] = s / (dh as f32).sqrt();
                }
            }
            for a in 0..m {
                let row = &mut logits[a * m..(a + 1) * m];
                let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                let mut z = 0.0;
                for val in row.iter_mut() {
                    *val = (*val - max).exp();
                    z += *val;
                }
                for val in row.iter_mut() {
                    *val /= z;
                }
            }
            for (a, &ra) in rows.iter().enumerate() {
                for c in 0..dh {
                    let mut s = 0.0;
                    for (b, &rb) in rows.iter().enumerate() {
                        s += logits[a * m + b] * v[rb * d + col0 + c];
                    }
                    pre[ra * width + hi * dh + c] += s;
                }
            }
        }
        for &r in &rows {
            counts[r] += 1;
        }
    }
    for r in 0..n {
        if counts[r] > 1 {
            for c in 0..width {
                pre[r * width + c] /= counts[r] as f32;
            }
        }
    }

    // Output projection.
    let mut out = vec![0.0f32; n * d];
    for i in 0..n {
        for j in 0..d {
            let mut s = 0.0;
            for p in 0..width {
                s += pre[i * width + p] * wo[p * d + j];
            }
            out[i * d + j] = s;
        }
    }
    out
}

/// Reference LayerNorm matching the documented epsilon.
pub fn layer_norm_oracle(x: &[f32], n: usize, d: usize, gamma: &[f32], beta: &[f32], eps: f32) -> Vec<f32> {
    let mut out = vec![0.0f32; n * d];
    for i in 0..n {
        let row = &x[i * d..(i + 1) * d];
        let mean = row.iter().sum::<f32>() / d as f32;
        let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
        let inv = 1.0 / (var + eps).sqrt();
        for j in 0..d {
            out[i * d + j] = (row[j] - mean) * inv * gamma[j] + beta[j];
        }
    }
    out
}

/// Reference GeLU (tanh approximation).
pub fn gelu_oracle(v: f32) -> f32 {
    let c = (2.0 / std::f32::consts::PI).sqrt();
    0.5 * v * (1.0 + (c * (v + 0.044715 * v * v * v)).tanh())
}

pub fn max_abs_diff(a: &[f32], b: &[f32]) -> f32 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f32::max)
}

// ── layer-level oracles ─────────────────────────────────────────────────

use graspformer_core::params::ParamStore as Store;
use graspformer_core::transformer::{EncoderConfig, TokenGrid, Variant};

/// Raw parameter views of one layer, extracted from a store, driving the
/// plain-loop layer references below.
pub struct LayerOracle {
    pub variant: Variant,
    pub wq: Vec<f32>,
    pub wk: Vec<f32>,
    pub wv: Vec<f32>,
    pub wo: Vec<f32>,
    pub wfuse: Option<Vec<f32>>,
    pub ln1: (Vec<f32>, Vec<f32>),
    pub ln2: (Vec<f32>, Vec<f32>),
    pub ln3: Option<(Vec<f32>, Vec<f32>)>,
    pub mlp: (Vec<f32>, Vec<f32>, Vec<f32>, Vec<f32>),
}

impl LayerOracle {
    pub fn from_store(store: &Store, prefix: &str, layer: usize, variant: Variant) -> Self {
        let get = |suffix: &str| -> Vec<f32> {
            store
                .get(&format!("{prefix}.l{layer}.{suffix}"))
                .unwrap_or_else(|| panic!("missing parameter {prefix}.l{layer}.{suffix}"))
                .data()
                .to_vec()
        };
        let divided = variant == Variant::DividedSpaceTime;
        LayerOracle {
            variant,
            wq: get("attn.wq"),
            wk: get("attn.wk"),
            wv: get("attn.wv"),
            wo: get("attn.wo"),
            wfuse: (!divided).then(|| get("attn.wfuse")),
            ln1: (get("ln1.g"), get("ln1.b")),
            ln2: (get("ln2.g"), get("ln2.b")),
            ln3: divided.then(|| (get("ln3.g"), get("ln3.b"))),
            mlp: (get("mlp.w1"), get("mlp.b1"), get("mlp.w2"), get("mlp.b2")),
        }
    }

    /// Reference output of one layer over token matrix `x`.
    pub fn layer_output(&self, x: &[f32], grid: &TokenGrid, cfg: &EncoderConfig) -> Vec<f32> {
        match self.variant {
            Variant::DividedSpaceTime => self.divided(x, grid, cfg),
            Variant::FactorisedDotProduct => self.factorised(x, grid, cfg),
        }
    }

    fn divided(&self, x: &[f32], grid: &TokenGrid, cfg: &EncoderConfig) -> Vec<f32> {
        let (n, d) = (grid.token_count(), cfg.embed_dim);
        let h = cfg.num_heads;
        let ln1 = layer_norm_oracle(x, n, d, &self.ln1.0, &self.ln1.1, 1e-5);
        let t_attn = masked_multi_head_oracle(
            &ln1, n, d, &self.wq, &self.wk, &self.wv, &self.wo, h, 0..h,
            &TokenGroups::temporal(grid),
        );
        let y1 = add_vec(x, &t_attn);
        let ln2 = layer_norm_oracle(&y1, n, d, &self.ln2.0, &self.ln2.1, 1e-5);
        let s_attn = masked_multi_head_oracle(
            &ln2, n, d, &self.wq, &self.wk, &self.wv, &self.wo, h, 0..h,
            &TokenGroups::spatial(grid),
        );
        let y2 = add_vec(&y1, &s_attn);
        let ln3 = self.ln3.as_ref().expect("divided layer has a third norm");
        let ln3v = layer_norm_oracle(&y2, n, d, &ln3.0, &ln3.1, 1e-5);
        let m = mlp_oracle(&ln3v, n, d, cfg.mlp_hidden, &self.mlp.0, &self.mlp.1, &self.mlp.2, &self.mlp.3);
        add_vec(&y2, &m)
    }

    fn factorised(&self, x: &[f32], grid: &TokenGrid, cfg: &EncoderConfig) -> Vec<f32> {
        let (n, d) = (grid.token_count(), cfg.embed_dim);
        let h = cfg.num_heads;
        let half = d / 2;
        let ln1 = layer_norm_oracle(x, n, d, &self.ln1.0, &self.ln1.1, 1e-5);
        let spatial = masked_multi_head_oracle(
            &ln1, n, d, &self.wq, &self.wk, &self.wv, &self.wo[..half * d], h, 0..h / 2,
            &TokenGroups::spatial(grid),
        );
        let temporal = masked_multi_head_oracle(
            &ln1, n, d, &self.wq, &self.wk, &self.wv, &self.wo[half * d..], h, h / 2..h,
            &TokenGroups::temporal(grid),
        );
        let wfuse = self.wfuse.as_ref().expect("factorised layer has a fuse matrix");
        let mut fused = vec![0.0f32; n * d];
        for i in 0..n {
            for j in 0..d {
                let mut s = 0.0;
                for c in 0..d {
                    s += spatial[i * d + c] * wfuse[c * d + j];
                    s += temporal[i * d + c] * wfuse[(d + c) * d + j];
                }
                fused[i * d + j] = s;
            }
        }
        let y1 = add_vec(x, &fused);
        let ln2 = layer_norm_oracle(&y1, n, d, &self.ln2.0, &self.ln2.1, 1e-5);
        let m = mlp_oracle(&ln2, n, d, cfg.mlp_hidden, &self.mlp.0, &self.mlp.1, &self.mlp.2, &self.mlp.3);
        add_vec(&y1, &m)
    }
}

/// Plain-loop MLP sublayer: `gelu(x W1 + b1) W2 + b2`.
pub fn mlp_oracle(
    x: &[f32],
    n: usize,
    d: usize,
    hidden: usize,
    w1: &[f32],
    b1: &[f32],
    w2: &[f32],
    b2: &[f32],
) -> Vec<f32> {
    let mut h = vec![0.0f32; n * hidden];
    for i in 0..n {
        for j in 0..hidden {
            let mut s = b1[j];
            for p in 0..d {
                s += x[i * d + p] * w1[p * hidden + j];
            }
            h[i * hidden + j] = gelu_oracle(s);
        }
    }
    let mut out = vec![0.0f32; n * d];
    for i in 0..n {
        for j in 0..d {
            let mut s = b2[j];
            for p in 0..hidden {
                s += h[i * hidden + p] * w2[p * d + j];
            }
            out[i * d + j] = s;
        }
    }
    out
}

pub fn add_vec(a: &[f32], b: &[f32]) -> Vec<f32> {
    a.iter().zip(b).map(|(x, y)| x + y).collect()
}
