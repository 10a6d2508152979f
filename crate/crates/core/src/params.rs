//! Named parameter storage and per-forward tape bindings.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, TensorId};

/// Ordered name -> tensor map. Iteration follows insertion order, which fixes
/// the optimizer update order and the checkpoint layout.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, tensor: Tensor) -> Result<()> {
        let name = name.into();
        if self.index.contains_key(&name) {
            return Err(Error::Config(format!("duplicate parameter name {name}")));
        }
        self.index.insert(name.clone(), self.tensors.len());
        self.names.push(name);
        self.tensors.push(tensor);
        Ok(())
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.index.get(name).copied().map(move |i| &mut self.tensors[i])
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(|n| n.as_str()).zip(self.tensors.iter())
    }

    pub(crate) fn tensor_at(&self, idx: usize) -> &Tensor {
        &self.tensors[idx]
    }

    pub(crate) fn tensor_at_mut(&mut self, idx: usize) -> &mut Tensor {
        &mut self.tensors[idx]
    }

    pub(crate) fn index_of(&self, name: &str) -> Option<usize> {
        self.index.get(name).copied()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.iter().map(|t| t.numel()).sum()
    }

    pub fn zero_grads(&mut self) {
        for t in &mut self.tensors {
            t.zero_grad();
        }
    }

    /// Deep copy of all parameter values (gradients not included).
    pub fn snapshot(&self) -> Vec<Vec<f32>> {
        self.tensors.iter().map(|t| t.data().to_vec()).collect()
    }

    pub fn restore(&mut self, snapshot: &[Vec<f32>]) -> Result<()> {
        if snapshot.len() != self.tensors.len() {
            return Err(Error::Config("snapshot length mismatch".into()));
        }
        for (t, s) in self.tensors.iter_mut().zip(snapshot) {
            if t.numel() != s.len() {
                return Err(Error::Config("snapshot tensor size mismatch".into()));
            }
            t.data_mut().copy_from_slice(s);
        }
        Ok(())
    }
}

/// Tracks which store entries were placed on a tape during one forward pass,
/// so their gradients can be pulled back after `backward`.
#[derive(Default)]
pub struct Bindings {
    bound: HashMap<usize, TensorId>,
    order: Vec<(usize, TensorId)>,
}

impl Bindings {
    pub fn new() -> Self {
        Self::default()
    }

    /// Puts the named parameter on the tape, reusing the node if this pass
    /// already bound it (fan-out accumulates naturally in backward).
    pub fn bind(&mut self, tape: &mut Tape, store: &ParamStore, name: &str) -> Result<TensorId> {
        let idx = store
            .index_of(name)
            .ok_or_else(|| Error::Config(format!("unknown parameter {name}")))?;
        if let Some(&id) = self.bound.get(&idx) {
            return Ok(id);
        }
        let id = tape.leaf(store.tensor_at(idx));
        self.bound.insert(idx, id);
        self.order.push((idx, id));
        Ok(id)
    }

    /// Accumulates tape gradients into the bound tensors' grad slots.
    pub fn apply_grads(&self, tape: &Tape, store: &mut ParamStore) -> Result<()> {
        for &(idx, id) in &self.order {
            if let Some(g) = tape.grad(id) {
                store.tensor_at_mut(idx).accumulate_grad(g)?;
            }
        }
        Ok(())
    }
}
