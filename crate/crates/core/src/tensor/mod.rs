//! Dense f32 tensors and the reverse-mode autodiff tape.
//!
//! `Tensor` is a plain value: a shape, a flat row-major buffer, and an
//! optional gradient buffer of the same length. All model math happens on a
//! [`Tape`], which records every operation and can replay the chain rule
//! backwards. Tensors with no gradient state are immutable after creation and
//! safe to share across threads for read-only evaluation; graph construction
//! and `backward` are single-threaded.

mod serialize;
mod tape;

pub use serialize::{load_tensor, read_tensor, save_tensor, write_tensor};
pub use tape::{Tape, TensorId};

use rand::Rng;

use crate::error::{Error, Result};

/// Shape-tagged dense array of 32-bit floats in row-major order.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f32>,
    requires_grad: bool,
    grad: Option<Vec<f32>>,
}

impl Tensor {
    /// Builds a tensor, checking that `product(shape) == data.len()` and that
    /// every dimension is positive.
    pub fn new(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if shape.iter().any(|&d| d == 0) || numel != data.len() {
            return Err(Error::shape("Tensor::new", shape, &[data.len()]));
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: false,
            grad: None,
        })
    }

    /// Like [`Tensor::new`] but marked as a trainable leaf.
    pub fn param(data: Vec<f32>, shape: &[usize]) -> Result<Self> {
        let mut t = Tensor::new(data, shape)?;
        t.requires_grad = true;
        Ok(t)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![0.0; numel],
            requires_grad: false,
            grad: None,
        }
    }

    pub fn full(shape: &[usize], value: f32) -> Self {
        let numel: usize = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![value; numel],
            requires_grad: false,
            grad: None,
        }
    }

    /// Trainable tensor with entries drawn from N(0, std^2), Box-Muller over
    /// the given rng stream.
    pub fn randn<R: Rng>(shape: &[usize], std: f32, rng: &mut R) -> Self {
        let numel: usize = shape.iter().product();
        let data = (0..numel).map(|_| sample_normal(rng) * std).collect();
        Tensor {
            shape: shape.to_vec(),
            data,
            requires_grad: true,
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn data(&self) -> &[f32] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f32] {
        &mut self.data
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn requires_grad(&self) -> bool {
        self.requires_grad
    }

    pub fn set_requires_grad(&mut self, value: bool) {
        self.requires_grad = value;
        if !value {
            self.grad = None;
        }
    }

    /// Accumulated gradient, if any backward pass has produced one.
    pub fn grad(&self) -> Option<&[f32]> {
        self.grad.as_deref()
    }

    /// Adds `delta` into the gradient slot, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[f32]) -> Result<()> {
        if delta.len() != self.data.len() {
            return Err(Error::shape(
                "Tensor::accumulate_grad",
                &self.shape,
                &[delta.len()],
            ));
        }
        let grad = self.grad.get_or_insert_with(|| vec![0.0; delta.len()]);
        for (g, d) in grad.iter_mut().zip(delta) {
            *g += d;
        }
        Ok(())
    }

    /// Drops the accumulated gradient. Gradients are only ever cleared
    /// explicitly, by this or by the optimizer step.
    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Reinterprets the buffer under a new shape with the same element count.
    pub fn reshaped(mut self, shape: &[usize]) -> Result<Self> {
        let numel: usize = shape.iter().product();
        if numel != self.data.len() || shape.iter().any(|&d| d == 0) {
            return Err(Error::shape("Tensor::reshaped", &self.shape, shape));
        }
        self.shape = shape.to_vec();
        Ok(self)
    }
}

/// One standard normal draw (Box-Muller; consumes two uniforms).
fn sample_normal<R: Rng>(rng: &mut R) -> f32 {
    let u1: f64 = rng.random::<f64>().max(1e-12);
    let u2: f64 = rng.random();
    ((-2.0 * u1.ln()).sqrt() * (2.0 * std::f64::consts::PI * u2).cos()) as f32
}
