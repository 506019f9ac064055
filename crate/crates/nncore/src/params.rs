//! Named parameter storage and matching gradient buffers.

use std::collections::HashMap;

use rand::Rng;
use rand_distr::StandardNormal;

use crate::error::{NnError, Result};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Ordered, name-indexed set of trainable tensors. Insertion order is the
/// checkpoint order and the optimizer order.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: &str, tensor: Tensor) -> Result<ParamId> {
        if self.index.contains_key(name) {
            return Err(NnError::DuplicateParam(name.to_string()));
        }
        let id = self.tensors.len();
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        self.index.insert(name.to_string(), id);
        Ok(ParamId(id))
    }

    pub fn id(&self, name: &str) -> Result<ParamId> {
        self.index
            .get(name)
            .map(|&i| ParamId(i))
            .ok_or_else(|| NnError::UnknownParam(name.to_string()))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn by_name(&self, name: &str) -> Option<&Tensor> {
        self.index.get(name).map(|&i| &self.tensors[i])
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(self.tensors.iter())
    }

    pub fn num_scalars(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }
}

/// Gradient buffers aligned with a [`ParamStore`]; `None` means no
/// contribution was recorded.
#[derive(Debug, Clone, PartialEq)]
pub struct Grads {
    bufs: Vec<Option<Vec<f64>>>,
}

impl Grads {
    pub fn new(store: &ParamStore) -> Self {
        Grads {
            bufs: vec![None; store.len()],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[f64]> {
        self.bufs[id.0].as_deref()
    }

    pub fn accumulate(&mut self, id: ParamId, g: &[f64]) {
        match &mut self.bufs[id.0] {
            Some(buf) => buf.iter_mut().zip(g).for_each(|(a, b)| *a += b),
            slot @ None => *slot = Some(g.to_vec()),
        }
    }

    pub fn zero(&mut self) {
        self.bufs.iter_mut().for_each(|b| *b = None);
    }

    pub fn len(&self) -> usize {
        self.bufs.len()
    }

    pub fn is_empty(&self) -> bool {
        self.bufs.is_empty()
    }

    /// L2 norm over every recorded gradient.
    pub fn global_norm(&self) -> f64 {
        self.bufs
            .iter()
            .flatten()
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }

    /// L2 norm restricted to parameters whose name starts with `prefix`.
    pub fn norm_with_prefix(&self, store: &ParamStore, prefix: &str) -> f64 {
        store
            .ids()
            .filter(|&id| store.name(id).starts_with(prefix))
            .filter_map(|id| self.get(id))
            .flat_map(|b| b.iter())
            .map(|v| v * v)
            .sum::<f64>()
            .sqrt()
    }
}

/// Normal(0, std) truncated to two standard deviations by resampling.
pub fn truncated_normal<R: Rng + ?Sized>(rng: &mut R, shape: &[usize], std: f64) -> Tensor {
    let n: usize = shape.iter().product();
    let mut data = Vec::with_capacity(n);
    while data.len() < n {
        let z: f64 = rng.sample(StandardNormal);
        if z.abs() <= 2.0 {
            data.push(z * std);
        }
    }
    Tensor::new(shape.to_vec(), data).expect("length matches shape")
}
