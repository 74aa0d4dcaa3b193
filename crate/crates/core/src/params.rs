//! Named parameter registry.

use indexmap::IndexMap;
use rand::RngCore;

use crate::error::{Error, Result};
use crate::tensor::{Tape, Tensor, Var};

/// Ordered map from dotted parameter names to tensors.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    tensors: IndexMap<String, Tensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, value: Tensor) {
        self.tensors.insert(name.into(), value);
    }

    pub fn get(&self, name: &str) -> Option<&Tensor> {
        self.tensors.get(name)
    }

    pub fn get_mut(&mut self, name: &str) -> Option<&mut Tensor> {
        self.tensors.get_mut(name)
    }

    pub fn contains(&self, name: &str) -> bool {
        self.tensors.contains_key(name)
    }

    pub fn remove(&mut self, name: &str) -> Option<Tensor> {
        self.tensors.shift_remove(name)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor)> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor)> {
        self.tensors.iter_mut()
    }

    pub fn names(&self) -> impl Iterator<Item = &String> {
        self.tensors.keys()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    /// Total number of scalar parameters.
    pub fn numel(&self) -> usize {
        self.tensors.values().map(Tensor::numel).sum()
    }

    /// Scalar parameter count of every tensor whose name starts with `prefix`.
    pub fn numel_prefixed(&self, prefix: &str) -> usize {
        self.tensors
            .iter()
            .filter(|(k, _)| k.starts_with(prefix))
            .map(|(_, v)| v.numel())
            .sum()
    }

    /// Inserts every parameter as a differentiable leaf on `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Bound {
        self.bind_with(tape, true)
    }

    /// Inserts every parameter as a constant on `tape`.
    pub fn bind_constant(&self, tape: &mut Tape) -> Bound {
        self.bind_with(tape, false)
    }

    fn bind_with(&self, tape: &mut Tape, differentiable: bool) -> Bound {
        let vars = self
            .tensors
            .iter()
            .map(|(k, v)| {
                let var = if differentiable {
                    tape.leaf(v.clone())
                } else {
                    tape.constant(v.clone())
                };
                (k.clone(), var)
            })
            .collect();
        Bound { vars }
    }

    /// Xavier-uniform initialised `[fan_in, fan_out]` weight.
    pub fn init_weight(&mut self, name: impl Into<String>, fan_in: usize, fan_out: usize, rng: &mut dyn RngCore) {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        self.insert(name, Tensor::uniform(&[fan_in, fan_out], -bound, bound, rng));
    }

    pub fn init_zeros(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::zeros(shape));
    }

    pub fn init_ones(&mut self, name: impl Into<String>, shape: &[usize]) {
        self.insert(name, Tensor::ones(shape));
    }
}

/// Parameters inserted on a specific tape.
#[derive(Clone, Debug, Default)]
pub struct Bound {
    vars: IndexMap<String, Var>,
}

impl Bound {
    /// Binds names to vars already on a tape.
    pub fn from_pairs(pairs: impl IntoIterator<Item = (String, Var)>) -> Self {
        Self { vars: pairs.into_iter().collect() }
    }

    pub fn get(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| Error::Config(format!("missing parameter `{name}`")))
    }

    pub fn opt(&self, name: &str) -> Option<Var> {
        self.vars.get(name).copied()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Var)> {
        self.vars.iter()
    }

    /// Gradient of every bound parameter after a backward pass.
    pub fn grads(&self, tape: &Tape) -> IndexMap<String, Tensor> {
        self.vars
            .iter()
            .map(|(k, &v)| {
                let g = tape.grad(v).unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                (k.clone(), g)
            })
            .collect()
    }
}
