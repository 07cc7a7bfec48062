use std::collections::BTreeMap;

use crate::error::{DiffError, Result};
use crate::rng::SeededRng;
use crate::tape::{Tape, Var};
use crate::tensor::Tensor;

/// Named trainable tensors, iterated in name order so every reduction over
/// parameters has a fixed order.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    params: BTreeMap<String, Tensor<f32>>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn insert(&mut self, name: impl Into<String>, t: Tensor<f32>) {
        self.params.insert(name.into(), t);
    }

    /// Inserts a Gaussian-initialised tensor.
    pub fn randn(&mut self, name: &str, shape: &[usize], std: f64, rng: &mut SeededRng) {
        self.insert(name, Tensor::randn(shape, std, rng));
    }

    /// Inserts a tensor drawn from `U(−bound, bound)`.
    pub fn uniform(&mut self, name: &str, shape: &[usize], bound: f64, rng: &mut SeededRng) {
        self.insert(name, Tensor::uniform(shape, bound, rng));
    }

    pub fn get(&self, name: &str) -> Result<&Tensor<f32>> {
        self.params
            .get(name)
            .ok_or_else(|| DiffError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Tensor<f32>> {
        self.params
            .get_mut(name)
            .ok_or_else(|| DiffError::Contract(format!("unknown parameter `{name}`")))
    }

    pub fn contains(&self, name: &str) -> bool {
        self.params.contains_key(name)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn numel(&self) -> usize {
        self.params.values().map(Tensor::numel).sum()
    }

    pub fn iter(&self) -> impl Iterator<Item = (&String, &Tensor<f32>)> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&String, &mut Tensor<f32>)> {
        self.params.iter_mut()
    }

    /// Puts every parameter on the tape as a trainable leaf.
    pub fn bind(&self, tape: &mut Tape<f32>) -> Bindings {
        let vars = self
            .params
            .iter()
            .map(|(n, t)| (n.clone(), tape.param(t.clone())))
            .collect();
        Bindings { vars }
    }
}

/// Parameter name → tape variable for one forward pass.
#[derive(Clone, Debug, Default)]
pub struct Bindings {
    vars: BTreeMap<String, Var>,
}

impl Bindings {
    pub fn var(&self, name: &str) -> Result<Var> {
        self.vars
            .get(name)
            .copied()
            .ok_or_else(|| DiffError::Contract(format!("parameter `{name}` not bound")))
    }

    /// Gradients for every bound parameter; parameters the loss never
    /// reached get zeros.
    pub fn grads(&self, tape: &Tape<f32>) -> BTreeMap<String, Tensor<f32>> {
        self.vars
            .iter()
            .map(|(n, &v)| {
                let g = tape
                    .grad(v)
                    .unwrap_or_else(|| Tensor::zeros(tape.shape(v)));
                (n.clone(), g)
            })
            .collect()
    }
}
