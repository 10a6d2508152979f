//! Reverse-mode autodiff on a flat operation tape.
//!
//! Every op appends one node; operands always precede their outputs, so one
//! reverse sweep applies the chain rule exactly once per node. Gradients are
//! accumulated, never cleared implicitly: a second `backward` call without an
//! intervening reset adds on top of the first.

use std::sync::atomic::{AtomicU64, Ordering};

use crate::error::{Error, Result};
use crate::tensor::Tensor;

/// sqrt(2/pi), the leading constant of the tanh GeLU approximation.
const GELU_SQRT_2_OVER_PI: f32 = 0.797_884_56;
/// Cubic coefficient of the tanh GeLU approximation.
const GELU_COEFF: f32 = 0.044_715;

static TAPE_COUNTER: AtomicU64 = AtomicU64::new(0);

/// Handle to a node on a specific tape. Using it with any other tape is a
/// usage error, not undefined behavior.
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct TensorId {
    tape: u64,
    index: usize,
}

#[derive(Debug, Clone)]
enum Op {
    Leaf,
    MatMul { a: usize, b: usize },
    Add { a: usize, b: usize },
    AddBias { x: usize, bias: usize },
    Scale { x: usize, factor: f32 },
    Mul { a: usize, b: usize },
    SoftmaxLastDim { x: usize },
    LayerNorm { x: usize, gamma: usize, beta: usize, eps: f32 },
    Gelu { x: usize },
    ConcatLastDim { parts: Vec<usize> },
    ConcatRows { parts: Vec<usize> },
    MeanOverAxis { x: usize, axis: usize },
    Transpose { x: usize, perm: Vec<usize> },
    Reshape { x: usize },
    GatherRows { x: usize, rows: Vec<usize> },
    SliceCols { x: usize, start: usize, len: usize },
    ScatterMeanRows { parts: Vec<usize>, targets: Vec<Vec<usize>>, counts: Vec<f32> },
    SumAll { x: usize },
    CrossEntropy { logits: usize, labels: Vec<usize> },
}

struct Node {
    shape: Vec<usize>,
    data: Vec<f32>,
    grad: Vec<f32>,
    needs_grad: bool,
    requires_grad: bool,
    op: Op,
}

/// Ordered record of operations with their values and backward rules.
pub struct Tape {
    tag: u64,
    nodes: Vec<Node>,
}

impl Default for Tape {
    fn default() -> Self {
        Self::new()
    }
}

impl Tape {
    pub fn new() -> Self {
        Tape {
            tag: TAPE_COUNTER.fetch_add(1, Ordering::Relaxed),
            nodes: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn check(&self, id: TensorId) -> Result<usize> {
        if id.tape != self.tag || id.index >= self.nodes.len() {
            return Err(Error::ForeignTensor);
        }
        Ok(id.index)
    }

    fn push(&mut self, shape: Vec<usize>, data: Vec<f32>, needs_grad: bool, op: Op) -> TensorId {
        let index = self.nodes.len();
        self.nodes.push(Node {
            shape,
            data,
            grad: Vec::new(),
            needs_grad,
            requires_grad: false,
            op,
        });
        TensorId { tape: self.tag, index }
    }

    /// Copies a tensor onto the tape as a leaf. Its `requires_grad` flag
    /// decides whether `backward` produces a gradient for it.
    pub fn leaf(&mut self, t: &Tensor) -> TensorId {
        let id = self.push(
            t.shape().to_vec(),
            t.data().to_vec(),
            t.requires_grad(),
            Op::Leaf,
        );
        self.nodes[id.index].requires_grad = t.requires_grad();
        id
    }

    /// Leaf from raw parts.
    pub fn leaf_data(&mut self, data: Vec<f32>, shape: &[usize], requires_grad: bool) -> Result<TensorId> {
        let numel: usize = shape.iter().product();
        if numel != data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("Tape::leaf_data", shape, &[data.len()]));
        }
        let id = self.push(shape.to_vec(), data, requires_grad, Op::Leaf);
        self.nodes[id.index].requires_grad = requires_grad;
        Ok(id)
    }

    /// Non-differentiable leaf.
    pub fn constant(&mut self, data: Vec<f32>, shape: &[usize]) -> Result<TensorId> {
        self.leaf_data(data, shape, false)
    }

    pub fn shape(&self, id: TensorId) -> &[usize] {
        let i = self.check(id).expect("tensor id from another tape");
        &self.nodes[i].shape
    }

    pub fn data(&self, id: TensorId) -> &[f32] {
        let i = self.check(id).expect("tensor id from another tape");
        &self.nodes[i].data
    }

    /// Gradient of the last `backward` target w.r.t. this node, if computed.
    pub fn grad(&self, id: TensorId) -> Option<&[f32]> {
        let i = self.check(id).expect("tensor id from another tape");
        let n = &self.nodes[i];
        if n.grad.is_empty() {
            None
        } else {
            Some(&n.grad)
        }
    }

    /// Snapshot of a node as a standalone tensor (gradient not included).
    pub fn tensor(&self, id: TensorId) -> Tensor {
        let i = self.check(id).expect("tensor id from another tape");
        Tensor::new(self.nodes[i].data.clone(), &self.nodes[i].shape)
            .expect("node shape is consistent by construction")
    }

    // ── forward ops ─────────────────────────────────────────────────────

    /// 2-D matrix product `[m,k] x [k,n] -> [m,n]`.
    pub fn matmul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        let (ash, bsh) = (&self.nodes[ai].shape, &self.nodes[bi].shape);
        if ash.len() != 2 || bsh.len() != 2 || ash[1] != bsh[0] {
            return Err(Error::shape("matmul", ash, bsh));
        }
        let (m, k, n) = (ash[0], ash[1], bsh[1]);
        let mut out = vec![0.0f32; m * n];
        matmul_nn(&self.nodes[ai].data, &self.nodes[bi].data, m, k, n, &mut out);
        let needs = self.nodes[ai].needs_grad || self.nodes[bi].needs_grad;
        Ok(self.push(vec![m, n], out, needs, Op::MatMul { a: ai, b: bi }))
    }

    /// Elementwise sum of two same-shape tensors.
    pub fn add(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.nodes[ai].shape != self.nodes[bi].shape {
            return Err(Error::shape("add", &self.nodes[ai].shape, &self.nodes[bi].shape));
        }
        let data = self.nodes[ai]
            .data
            .iter()
            .zip(&self.nodes[bi].data)
            .map(|(x, y)| x + y)
            .collect();
        let needs = self.nodes[ai].needs_grad || self.nodes[bi].needs_grad;
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, data, needs, Op::Add { a: ai, b: bi }))
    }

    /// Adds a vector over the last dimension of `x`.
    pub fn add_bias(&mut self, x: TensorId, bias: TensorId) -> Result<TensorId> {
        let (xi, bi) = (self.check(x)?, self.check(bias)?);
        let d = *self.nodes[xi].shape.last().unwrap();
        if self.nodes[bi].shape != [d] {
            return Err(Error::shape("add_bias", &self.nodes[xi].shape, &self.nodes[bi].shape));
        }
        let bdata = &self.nodes[bi].data;
        let data = self.nodes[xi]
            .data
            .chunks(d)
            .flat_map(|row| row.iter().zip(bdata).map(|(x, b)| x + b))
            .collect();
        let needs = self.nodes[xi].needs_grad || self.nodes[bi].needs_grad;
        let shape = self.nodes[xi].shape.clone();
        Ok(self.push(shape, data, needs, Op::AddBias { x: xi, bias: bi }))
    }

    /// Elementwise multiplication by a compile-time scalar.
    pub fn scale(&mut self, x: TensorId, factor: f32) -> Result<TensorId> {
        let xi = self.check(x)?;
        let data = self.nodes[xi].data.iter().map(|v| v * factor).collect();
        let needs = self.nodes[xi].needs_grad;
        let shape = self.nodes[xi].shape.clone();
        Ok(self.push(shape, data, needs, Op::Scale { x: xi, factor }))
    }

    /// Elementwise product of two same-shape tensors.
    pub fn mul(&mut self, a: TensorId, b: TensorId) -> Result<TensorId> {
        let (ai, bi) = (self.check(a)?, self.check(b)?);
        if self.nodes[ai].shape != self.nodes[bi].shape {
            return Err(Error::shape("mul", &self.nodes[ai].shape, &self.nodes[bi].shape));
        }
        let data = self.nodes[ai]
            .data
            .iter()
            .zip(&self.nodes[bi].data)
            .map(|(x, y)| x * y)
            .collect();
        let needs = self.nodes[ai].needs_grad || self.nodes[bi].needs_grad;
        let shape = self.nodes[ai].shape.clone();
        Ok(self.push(shape, data, needs, Op::Mul { a: ai, b: bi }))
    }

    /// Softmax over the last dimension, computed with max subtraction.
    pub fn softmax_lastdim(&mut self, x: TensorId) -> Result<TensorId> {
        let xi = self.check(x)?;
        let d = *self.nodes[xi].shape.last().unwrap();
        let mut data = self.nodes[xi].data.clone();
        for row in data.chunks_mut(d) {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let mut sum = 0.0f32;
            for v in row.iter_mut() {
                *v = (*v - max).exp();
                sum += *v;
            }
            for v in row.iter_mut() {
                *v /= sum;
            }
        }
        let needs = self.nodes[xi].needs_grad;
        let shape = self.nodes[xi].shape.clone();
        Ok(self.push(shape, data, needs, Op::SoftmaxLastDim { x: xi }))
    }

    /// Per-token normalization over the last dimension, then `gamma*xhat+beta`.
    pub fn layer_norm(&mut self, x: TensorId, gamma: TensorId, beta: TensorId, eps: f32) -> Result<TensorId> {
        let (xi, gi, bi) = (self.check(x)?, self.check(gamma)?, self.check(beta)?);
        let d = *self.nodes[xi].shape.last().unwrap();
        if self.nodes[gi].shape != [d] || self.nodes[bi].shape != [d] {
            return Err(Error::shape("layer_norm", &self.nodes[xi].shape, &self.nodes[gi].shape));
        }
        let gdata = &self.nodes[gi].data;
        let bdata = &self.nodes[bi].data;
        let mut data = Vec::with_capacity(self.nodes[xi].data.len());
        for row in self.nodes[xi].data.chunks(d) {
            let mean = row.iter().sum::<f32>() / d as f32;
            let var = row.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d as f32;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                data.push((row[j] - mean) * inv_std * gdata[j] + bdata[j]);
            }
        }
        let needs = self.nodes[xi].needs_grad || self.nodes[gi].needs_grad || self.nodes[bi].needs_grad;
        let shape = self.nodes[xi].shape.clone();
        Ok(self.push(shape, data, needs, Op::LayerNorm { x: xi, gamma: gi, beta: bi, eps }))
    }

    /// GeLU, tanh approximation: `0.5*x*(1 + tanh(sqrt(2/pi)*(x + 0.044715*x^3)))`.
    pub fn gelu(&mut self, x: TensorId) -> Result<TensorId> {
        let xi = self.check(x)?;
        let data = self.nodes[xi].data.iter().map(|&v| gelu_forward(v)).collect();
        let needs = self.nodes[xi].needs_grad;
        let shape = self.nodes[xi].shape.clone();
        Ok(self.push(shape, data, needs, Op::Gelu { x: xi }))
    }

    /// Concatenates along the last dimension; all leading dims must agree.
    pub fn concat_lastdim(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Input("concat_lastdim of zero tensors".into()));
        }
        let idxs: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let lead = self.nodes[idxs[0]].shape[..self.nodes[idxs[0]].shape.len() - 1].to_vec();
        let rows: usize = lead.iter().product();
        let mut widths = Vec::with_capacity(idxs.len());
        for &i in &idxs {
            let sh = &self.nodes[i].shape;
            if sh[..sh.len() - 1] != lead[..] {
                return Err(Error::shape("concat_lastdim", &self.nodes[idxs[0]].shape, sh));
            }
            widths.push(*sh.last().unwrap());
        }
        let total: usize = widths.iter().sum();
        let mut data = Vec::with_capacity(rows * total);
        for r in 0..rows {
            for (&i, &w) in idxs.iter().zip(&widths) {
                data.extend_from_slice(&self.nodes[i].data[r * w..(r + 1) * w]);
            }
        }
        let needs = idxs.iter().any(|&i| self.nodes[i].needs_grad);
        let mut shape = lead;
        shape.push(total);
        Ok(self.push(shape, data, needs, Op::ConcatLastDim { parts: idxs }))
    }

    /// Concatenates along the first dimension; trailing dims must agree.
    pub fn concat_rows(&mut self, parts: &[TensorId]) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Input("concat_rows of zero tensors".into()));
        }
        let idxs: Vec<usize> = parts.iter().map(|&p| self.check(p)).collect::<Result<_>>()?;
        let tail = self.nodes[idxs[0]].shape[1..].to_vec();
        let mut rows = 0;
        for &i in &idxs {
            let sh = &self.nodes[i].shape;
            if sh[1..] != tail[..] {
                return Err(Error::shape("concat_rows", &self.nodes[idxs[0]].shape, sh));
            }
            rows += sh[0];
        }
        let mut data = Vec::with_capacity(rows * tail.iter().product::<usize>());
        for &i in &idxs {
            data.extend_from_slice(&self.nodes[i].data);
        }
        let needs = idxs.iter().any(|&i| self.nodes[i].needs_grad);
        let mut shape = vec![rows];
        shape.extend_from_slice(&tail);
        Ok(self.push(shape, data, needs, Op::ConcatRows { parts: idxs }))
    }

    /// Mean over one axis; the axis is removed from the shape.
    pub fn mean_over_axis(&mut self, x: TensorId, axis: usize) -> Result<TensorId> {
        let xi = self.check(x)?;
        let sh = self.nodes[xi].shape.clone();
        if axis >= sh.len() {
            return Err(Error::Input(format!("axis {axis} out of range for shape {sh:?}")));
        }
        let outer: usize = sh[..axis].iter().product();
        let mid = sh[axis];
        let inner: usize = sh[axis + 1..].iter().product();
        let mut data = vec![0.0f32; outer * inner];
        let src = &self.nodes[xi].data;
        for o in 0..outer {
            for m in 0..mid {
                let base = (o * mid + m) * inner;
                let dst = &mut data[o * inner..(o + 1) * inner];
                for (dv, sv) in dst.iter_mut().zip(&src[base..base + inner]) {
                    *dv += sv;
                }
            }
        }
        for v in data.iter_mut() {
            *v /= mid as f32;
        }
        let mut out_shape: Vec<usize> = sh[..axis].to_vec();
        out_shape.extend_from_slice(&sh[axis + 1..]);
        if out_shape.is_empty() {
            out_shape.push(1);
        }
        let needs = self.nodes[xi].needs_grad;
        Ok(self.push(out_shape, data, needs, Op::MeanOverAxis { x: xi, axis }))
    }

    /// Axis permutation. `perm` lists, for each output axis, the source axis.
    pub fn transpose(&mut self, x: TensorId, perm: &[usize]) -> Result<TensorId> {
        let xi = self.check(x)?;
        let sh = self.nodes[xi].shape.clone();
        let mut seen = vec![false; sh.len()];
        if perm.len() != sh.len() || perm.iter().any(|&p| p >= sh.len() || std::mem::replace(&mut seen[p], true)) {
            return Err(Error::Input(format!("invalid permutation {perm:?} for shape {sh:?}")));
        }
        let out_shape: Vec<usize> = perm.iter().map(|&p| sh[p]).collect();
        let data = permute(&self.nodes[xi].data, &sh, perm);
        let needs = self.nodes[xi].needs_grad;
        Ok(self.push(out_shape, data, needs, Op::Transpose { x: xi, perm: perm.to_vec() }))
    }

    /// Same data, new shape with identical element count.
    pub fn reshape(&mut self, x: TensorId, shape: &[usize]) -> Result<TensorId> {
        let xi = self.check(x)?;
        let numel: usize = shape.iter().product();
        if numel != self.nodes[xi].data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("reshape", &self.nodes[xi].shape, shape));
        }
        let data = self.nodes[xi].data.clone();
        let needs = self.nodes[xi].needs_grad;
        Ok(self.push(shape.to_vec(), data, needs, Op::Reshape { x: xi }))
    }

    /// Selects rows of a 2-D tensor; indices may repeat.
    pub fn gather_rows(&mut self, x: TensorId, rows: &[usize]) -> Result<TensorId> {
        let xi = self.check(x)?;
        let sh = &self.nodes[xi].shape;
        if sh.len() != 2 {
            return Err(Error::shape("gather_rows", sh, &[rows.len()]));
        }
        let (n, d) = (sh[0], sh[1]);
        if rows.is_empty() || rows.iter().any(|&r| r >= n) {
            return Err(Error::Input(format!("row index out of range (n={n})")));
        }
        let mut data = Vec::with_capacity(rows.len() * d);
        for &r in rows {
            data.extend_from_slice(&self.nodes[xi].data[r * d..(r + 1) * d]);
        }
        let needs = self.nodes[xi].needs_grad;
        Ok(self.push(vec![rows.len(), d], data, needs, Op::GatherRows { x: xi, rows: rows.to_vec() }))
    }

    /// Contiguous column slice of a 2-D tensor.
    pub fn slice_cols(&mut self, x: TensorId, start: usize, len: usize) -> Result<TensorId> {
        let xi = self.check(x)?;
        let sh = &self.nodes[xi].shape;
        if sh.len() != 2 || start + len > sh[1] || len == 0 {
            return Err(Error::shape("slice_cols", sh, &[start, len]));
        }
        let (n, d) = (sh[0], sh[1]);
        let mut data = Vec::with_capacity(n * len);
        for r in 0..n {
            data.extend_from_slice(&self.nodes[xi].data[r * d + start..r * d + start + len]);
        }
        let needs = self.nodes[xi].needs_grad;
        Ok(self.push(vec![n, len], data, needs, Op::SliceCols { x: xi, start, len }))
    }

    /// Reassembles row groups into an `n_rows`-row matrix. Each part carries
    /// the target row of each of its rows. A target covered by several parts
    /// receives their mean; a target covered by none stays zero.
    pub fn scatter_mean_rows(&mut self, parts: &[(TensorId, Vec<usize>)], n_rows: usize) -> Result<TensorId> {
        if parts.is_empty() {
            return Err(Error::Input("scatter_mean_rows of zero parts".into()));
        }
        let mut idxs = Vec::with_capacity(parts.len());
        let mut targets = Vec::with_capacity(parts.len());
        let d = {
            let first = self.check(parts[0].0)?;
            let sh = &self.nodes[first].shape;
            if sh.len() != 2 {
                return Err(Error::shape("scatter_mean_rows", sh, &[n_rows]));
            }
            sh[1]
        };
        for (id, rows) in parts {
            let i = self.check(*id)?;
            let sh = &self.nodes[i].shape;
            if sh.len() != 2 || sh[1] != d || sh[0] != rows.len() {
                return Err(Error::shape("scatter_mean_rows", sh, &[rows.len(), d]));
            }
            if rows.iter().any(|&r| r >= n_rows) {
                return Err(Error::Input(format!("target row out of range (n={n_rows})")));
            }
            idxs.push(i);
            targets.push(rows.clone());
        }
        let mut counts = vec![0.0f32; n_rows];
        for rows in &targets {
            for &r in rows {
                counts[r] += 1.0;
            }
        }
        let mut data = vec![0.0f32; n_rows * d];
        for (&i, rows) in idxs.iter().zip(&targets) {
            for (j, &r) in rows.iter().enumerate() {
                let src = &self.nodes[i].data[j * d..(j + 1) * d];
                let dst = &mut data[r * d..(r + 1) * d];
                for (dv, sv) in dst.iter_mut().zip(src) {
                    *dv += sv;
                }
            }
        }
        for (r, &c) in counts.iter().enumerate() {
            if c > 1.0 {
                for v in &mut data[r * d..(r + 1) * d] {
                    *v /= c;
                }
            }
        }
        let needs = idxs.iter().any(|&i| self.nodes[i].needs_grad);
        Ok(self.push(vec![n_rows, d], data, needs, Op::ScatterMeanRows { parts: idxs, targets, counts }))
    }

    /// Sum of all elements, as a `[1]` tensor.
    pub fn sum_all(&mut self, x: TensorId) -> Result<TensorId> {
        let xi = self.check(x)?;
        let s: f32 = self.nodes[xi].data.iter().sum();
        let needs = self.nodes[xi].needs_grad;
        Ok(self.push(vec![1], vec![s], needs, Op::SumAll { x: xi }))
    }

    /// Mean negative log-softmax of the true class, over the batch.
    /// `logits` is `[b, k]`; labels must lie in `[0, k)`.
    pub fn cross_entropy(&mut self, logits: TensorId, labels: &[usize]) -> Result<TensorId> {
        let li = self.check(logits)?;
        let sh = &self.nodes[li].shape;
        if sh.len() != 2 || sh[0] != labels.len() {
            return Err(Error::shape("cross_entropy", sh, &[labels.len()]));
        }
        let (b, k) = (sh[0], sh[1]);
        if let Some(&bad) = labels.iter().find(|&&l| l >= k) {
            return Err(Error::Input(format!("label {bad} out of range for {k} classes")));
        }
        let mut loss = 0.0f32;
        for (row, &label) in self.nodes[li].data.chunks(k).zip(labels) {
            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
            let lse = max + row.iter().map(|&v| (v - max).exp()).sum::<f32>().ln();
            loss -= row[label] - lse;
        }
        loss /= b as f32;
        let needs = self.nodes[li].needs_grad;
        Ok(self.push(vec![1], vec![loss], needs, Op::CrossEntropy { logits: li, labels: labels.to_vec() }))
    }

    // ── backward ────────────────────────────────────────────────────────

    /// Runs the chain rule from a scalar node back to every leaf that
    /// requires a gradient. Gradients accumulate across calls.
    pub fn backward(&mut self, loss: TensorId) -> Result<()> {
        let li = self.check(loss)?;
        if self.nodes[li].data.len() != 1 {
            return Err(Error::Input(format!(
                "backward target must be scalar, got shape {:?}",
                self.nodes[li].shape
            )));
        }
        for node in self.nodes.iter_mut() {
            if !node.needs_grad {
                continue;
            }
            if node.grad.is_empty() {
                node.grad = vec![0.0; node.data.len()];
            } else if !(matches!(node.op, Op::Leaf) && node.requires_grad) {
                // Only requires_grad leaves accumulate across backward calls;
                // intermediate grads are scratch space per call.
                node.grad.fill(0.0);
            }
        }
        if !self.nodes[li].needs_grad {
            return Ok(()); // nothing upstream requires a gradient
        }
        self.nodes[li].grad[0] += 1.0;

        for i in (0..=li).rev() {
            if !self.nodes[i].needs_grad {
                continue;
            }
            let op = self.nodes[i].op.clone();
            match op {
                Op::Leaf => {}
                Op::MatMul { a, b } => self.back_matmul(i, a, b),
                Op::Add { a, b } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    self.axpy(a, &g, |_| 1.0);
                    self.axpy(b, &g, |_| 1.0);
                    self.nodes[i].grad = g;
                }
                Op::AddBias { x, bias } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    self.axpy(x, &g, |_| 1.0);
                    if self.nodes[bias].needs_grad {
                        let d = self.nodes[bias].data.len();
                        for row in g.chunks(d) {
                            for (gv, rv) in self.nodes[bias].grad.iter_mut().zip(row) {
                                *gv += rv;
                            }
                        }
                    }
                    self.nodes[i].grad = g;
                }
                Op::Scale { x, factor } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[x].needs_grad {
                        for (gv, &ov) in self.nodes[x].grad.iter_mut().zip(&g) {
                            *gv += ov * factor;
                        }
                    }
                    self.nodes[i].grad = g;
                }
                Op::Mul { a, b } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    if self.nodes[a].needs_grad {
                        let bdata = self.nodes[b].data.clone();
                        for ((gv, &ov), &bv) in self.nodes[a].grad.iter_mut().zip(&g).zip(&bdata) {
                            *gv += ov * bv;
                        }
                    }
                    if self.nodes[b].needs_grad {
                        let adata = self.nodes[a].data.clone();
                        for ((gv, &ov), &av) in self.nodes[b].grad.iter_mut().zip(&g).zip(&adata) {
                            *gv += ov * av;
                        }
                    }
                    self.nodes[i].grad = g;
                }
                Op::SoftmaxLastDim { x } => {
                    if self.nodes[x].needs_grad {
                        let d = *self.nodes[i].shape.last().unwrap();
                        let g = std::mem::take(&mut self.nodes[i].grad);
                        let y = std::mem::take(&mut self.nodes[i].data);
                        for (r, (grow, yrow)) in g.chunks(d).zip(y.chunks(d)).enumerate() {
                            let dot: f32 = grow.iter().zip(yrow).map(|(a, b)| a * b).sum();
                            let dst = &mut self.nodes[x].grad[r * d..(r + 1) * d];
                            for j in 0..d {
                                dst[j] += yrow[j] * (grow[j] - dot);
                            }
                        }
                        self.nodes[i].grad = g;
                        self.nodes[i].data = y;
                    }
                }
                Op::LayerNorm { x, gamma, beta, eps } => self.back_layer_norm(i, x, gamma, beta, eps),
                Op::Gelu { x } => {
                    if self.nodes[x].needs_grad {
                        let g = std::mem::take(&mut self.nodes[i].grad);
                        let xdata = self.nodes[x].data.clone();
                        for ((gv, &ov), &xv) in self.nodes[x].grad.iter_mut().zip(&g).zip(&xdata) {
                            *gv += ov * gelu_backward(xv);
                        }
                        self.nodes[i].grad = g;
                    }
                }
                Op::ConcatLastDim { parts } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let total = *self.nodes[i].shape.last().unwrap();
                    let rows = g.len() / total;
                    let mut offset = 0;
                    for &p in &parts {
                        let w = *self.nodes[p].shape.last().unwrap();
                        if self.nodes[p].needs_grad {
                            for r in 0..rows {
                                let src = &g[r * total + offset..r * total + offset + w];
                                let dst = &mut self.nodes[p].grad[r * w..(r + 1) * w];
                                for (dv, sv) in dst.iter_mut().zip(src) {
                                    *dv += sv;
                                }
                            }
                        }
                        offset += w;
                    }
                    self.nodes[i].grad = g;
                }
                Op::ConcatRows { parts } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let mut offset = 0;
                    for &p in &parts {
                        let len = self.nodes[p].data.len();
                        if self.nodes[p].needs_grad {
                            for (gv, sv) in self.nodes[p].grad.iter_mut().zip(&g[offset..offset + len]) {
                                *gv += sv;
                            }
                        }
                        offset += len;
                    }
                    self.nodes[i].grad = g;
                }
                Op::MeanOverAxis { x, axis } => {
                    if self.nodes[x].needs_grad {
                        let g = std::mem::take(&mut self.nodes[i].grad);
                        let sh = self.nodes[x].shape.clone();
                        let outer: usize = sh[..axis].iter().product();
                        let mid = sh[axis];
                        let inner: usize = sh[axis + 1..].iter().product();
                        let scale = 1.0 / mid as f32;
                        for o in 0..outer {
                            let src = &g[o * inner..(o + 1) * inner];
                            for m in 0..mid {
                                let base = (o * mid + m) * inner;
                                let dst = &mut self.nodes[x].grad[base..base + inner];
                                for (dv, sv) in dst.iter_mut().zip(src) {
                                    *dv += sv * scale;
                                }
                            }
                        }
                        self.nodes[i].grad = g;
                    }
                }
                Op::Transpose { x, perm } => {
                    if self.nodes[x].needs_grad {
                        let g = std::mem::take(&mut self.nodes[i].grad);
                        let mut inv = vec![0usize; perm.len()];
                        for (o, &p) in perm.iter().enumerate() {
                            inv[p] = o;
                        }
                        let back = permute(&g, &self.nodes[i].shape, &inv);
                        for (gv, sv) in self.nodes[x].grad.iter_mut().zip(&back) {
                            *gv += sv;
                        }
                        self.nodes[i].grad = g;
                    }
                }
                Op::Reshape { x } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    self.axpy(x, &g, |_| 1.0);
                    self.nodes[i].grad = g;
                }
                Op::GatherRows { x, rows } => {
                    if self.nodes[x].needs_grad {
                        let g = std::mem::take(&mut self.nodes[i].grad);
                        let d = self.nodes[i].shape[1];
                        for (j, &r) in rows.iter().enumerate() {
                            let src = &g[j * d..(j + 1) * d];
                            let dst = &mut self.nodes[x].grad[r * d..(r + 1) * d];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv += sv;
                            }
                        }
                        self.nodes[i].grad = g;
                    }
                }
                Op::SliceCols { x, start, len } => {
                    if self.nodes[x].needs_grad {
                        let g = std::mem::take(&mut self.nodes[i].grad);
                        let d = self.nodes[x].shape[1];
                        let n = self.nodes[x].shape[0];
                        for r in 0..n {
                            let src = &g[r * len..(r + 1) * len];
                            let dst = &mut self.nodes[x].grad[r * d + start..r * d + start + len];
                            for (dv, sv) in dst.iter_mut().zip(src) {
                                *dv += sv;
                            }
                        }
                        self.nodes[i].grad = g;
                    }
                }
                Op::ScatterMeanRows { parts, targets, counts } => {
                    let g = std::mem::take(&mut self.nodes[i].grad);
                    let d = self.nodes[i].shape[1];
                    for (&p, rows) in parts.iter().zip(&targets) {
                        if self.nodes[p].needs_grad {
                            for (j, &r) in rows.iter().enumerate() {
                                let c = counts[r].max(1.0);
                                let src = &g[r * d..(r + 1) * d];
                                let dst = &mut self.nodes[p].grad[j * d..(j + 1) * d];
                                for (dv, sv) in dst.iter_mut().zip(src) {
                                    *dv += sv / c;
                                }
                            }
                        }
                    }
                    self.nodes[i].grad = g;
                }
                Op::SumAll { x } => {
                    if self.nodes[x].needs_grad {
                        let g = self.nodes[i].grad[0];
                        for gv in self.nodes[x].grad.iter_mut() {
                            *gv += g;
                        }
                    }
                }
                Op::CrossEntropy { logits, labels } => {
                    if self.nodes[logits].needs_grad {
                        let g = self.nodes[i].grad[0];
                        let k = self.nodes[logits].shape[1];
                        let b = labels.len() as f32;
                        let ldata = self.nodes[logits].data.clone();
                        for (r, (&label, row)) in labels.iter().zip(ldata.chunks(k)).enumerate() {
                            let max = row.iter().cloned().fold(f32::NEG_INFINITY, f32::max);
                            let sum: f32 = row.iter().map(|&v| (v - max).exp()).sum();
                            let dst = &mut self.nodes[logits].grad[r * k..(r + 1) * k];
                            for c in 0..k {
                                let p = (row[c] - max).exp() / sum;
                                let t = if c == label { 1.0 } else { 0.0 };
                                dst[c] += g * (p - t) / b;
                            }
                        }
                    }
                }
            }
        }
        Ok(())
    }

    fn axpy<F: Fn(usize) -> f32>(&mut self, target: usize, g: &[f32], coeff: F) {
        if self.nodes[target].needs_grad {
            for (j, (gv, &sv)) in self.nodes[target].grad.iter_mut().zip(g).enumerate() {
                *gv += sv * coeff(j);
            }
        }
    }

    fn back_matmul(&mut self, i: usize, a: usize, b: usize) {
        let (m, n) = (self.nodes[i].shape[0], self.nodes[i].shape[1]);
        let k = self.nodes[a].shape[1];
        let g = std::mem::take(&mut self.nodes[i].grad);
        if self.nodes[a].needs_grad {
            // dA += dC * B^T
            let bdata = std::mem::take(&mut self.nodes[b].data);
            matmul_nt(&g, &bdata, m, n, k, &mut self.nodes[a].grad);
            self.nodes[b].data = bdata;
        }
        if self.nodes[b].needs_grad {
            // dB += A^T * dC
            let adata = std::mem::take(&mut self.nodes[a].data);
            matmul_tn(&adata, &g, m, k, n, &mut self.nodes[b].grad);
            self.nodes[a].data = adata;
        }
        self.nodes[i].grad = g;
    }

    fn back_layer_norm(&mut self, i: usize, x: usize, gamma: usize, beta: usize, eps: f32) {
        let d = *self.nodes[i].shape.last().unwrap();
        let g = std::mem::take(&mut self.nodes[i].grad);
        let xdata = self.nodes[x].data.clone();
        let gdata = self.nodes[gamma].data.clone();
        let d_f = d as f32;
        let mut xhat = vec![0.0f32; d];
        let mut dxhat = vec![0.0f32; d];
        for (r, (grow, xrow)) in g.chunks(d).zip(xdata.chunks(d)).enumerate() {
            let mean = xrow.iter().sum::<f32>() / d_f;
            let var = xrow.iter().map(|v| (v - mean) * (v - mean)).sum::<f32>() / d_f;
            let inv_std = 1.0 / (var + eps).sqrt();
            for j in 0..d {
                xhat[j] = (xrow[j] - mean) * inv_std;
                dxhat[j] = grow[j] * gdata[j];
            }
            if self.nodes[gamma].needs_grad {
                for (j, gv) in self.nodes[gamma].grad.iter_mut().enumerate() {
                    *gv += grow[j] * xhat[j];
                }
            }
            if self.nodes[beta].needs_grad {
                for (j, gv) in self.nodes[beta].grad.iter_mut().enumerate() {
                    *gv += grow[j];
                }
            }
            if self.nodes[x].needs_grad {
                let sum_dxhat: f32 = dxhat.iter().sum();
                let sum_dxhat_xhat: f32 = dxhat.iter().zip(&xhat).map(|(a, b)| a * b).sum();
                let dst = &mut self.nodes[x].grad[r * d..(r + 1) * d];
                for j in 0..d {
                    dst[j] += inv_std / d_f * (d_f * dxhat[j] - sum_dxhat - xhat[j] * sum_dxhat_xhat);
                }
            }
        }
        self.nodes[i].grad = g;
    }
}

fn gelu_forward(x: f32) -> f32 {
    0.5 * x * (1.0 + (GELU_SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x)).tanh())
}

fn gelu_backward(x: f32) -> f32 {
    let inner = GELU_SQRT_2_OVER_PI * (x + GELU_COEFF * x * x * x);
    let t = inner.tanh();
    let sech2 = 1.0 - t * t;
    let d_inner = GELU_SQRT_2_OVER_PI * (1.0 + 3.0 * GELU_COEFF * x * x);
    0.5 * (1.0 + t) + 0.5 * x * sech2 * d_inner
}

/// `out += A[m,k] * B[k,n]`
fn matmul_nn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let orow = &mut out[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            for (ov, &bv) in orow.iter_mut().zip(brow) {
                *ov += av * bv;
            }
        }
    }
}

/// `out += A[m,n] * B[k,n]^T`, producing `[m,k]`
fn matmul_nt(a: &[f32], b: &[f32], m: usize, n: usize, k: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * n..(i + 1) * n];
        let orow = &mut out[i * k..(i + 1) * k];
        for (p, ov) in orow.iter_mut().enumerate() {
            let brow = &b[p * n..(p + 1) * n];
            let mut s = 0.0f32;
            for (av, bv) in arow.iter().zip(brow) {
                s += av * bv;
            }
            *ov += s;
        }
    }
}

/// `out += A[m,k]^T * B[m,n]`, producing `[k,n]`
fn matmul_tn(a: &[f32], b: &[f32], m: usize, k: usize, n: usize, out: &mut [f32]) {
    for i in 0..m {
        let arow = &a[i * k..(i + 1) * k];
        let brow = &b[i * n..(i + 1) * n];
        for (p, &av) in arow.iter().enumerate() {
            let orow = &mut out[p * n..(p + 1) * n];
            for (ov, &bv) in orow.iter_mut().zip(brow) {
                *ov += av * bv;
            }
        }
    }
}

fn permute(data: &[f32], shape: &[usize], perm: &[usize]) -> Vec<f32> {
    let rank = shape.len();
    let mut in_strides = vec![1usize; rank];
    for i in (0..rank.saturating_sub(1)).rev() {
        in_strides[i] = in_strides[i + 1] * shape[i + 1];
    }
    let out_shape: Vec<usize> = perm.iter().map(|&p| shape[p]).collect();
    let mut out = vec![0.0f32; data.len()];
    let mut coords = vec![0usize; rank];
    for (o, slot) in out.iter_mut().enumerate() {
        let mut rem = o;
        for ax in (0..rank).rev() {
            coords[ax] = rem % out_shape[ax];
            rem /= out_shape[ax];
        }
        let mut src = 0;
        for ax in 0..rank {
            src += coords[ax] * in_strides[perm[ax]];
        }
        *slot = data[src];
    }
    out
}
