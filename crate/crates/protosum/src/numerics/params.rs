//! Named parameter collections with deterministic initialization.

use super::graph::{Graph, NodeId};
use crate::{Error, Result};
use ndarray::Array2;
use rand::Rng;
use rand_chacha::ChaCha8Rng;
use std::collections::BTreeMap;

/// Ordered name -> tensor map. The BTreeMap ordering makes optimizer
/// sweeps, checkpoints, and gradient collection deterministic.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamSet {
    tensors: BTreeMap<String, Array2<f64>>,
}

impl ParamSet {
    pub fn new() -> ParamSet {
        ParamSet::default()
    }

    pub fn insert(&mut self, name: &str, value: Array2<f64>) {
        self.tensors.insert(name.to_string(), value);
    }

    /// Scaled-uniform init: U(-a, a) with a = sqrt(6 / (rows + cols)).
    pub fn init_uniform(&mut self, name: &str, rows: usize, cols: usize, rng: &mut ChaCha8Rng) {
        let limit = (6.0 / (rows + cols) as f64).sqrt();
        let value = Array2::from_shape_fn((rows, cols), |_| rng.random_range(-limit..limit));
        self.insert(name, value);
    }

    pub fn init_zeros(&mut self, name: &str, rows: usize, cols: usize) {
        self.insert(name, Array2::zeros((rows, cols)));
    }

    pub fn get(&self, name: &str) -> Result<&Array2<f64>> {
        self.tensors
            .get(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter: {name}")))
    }

    pub fn get_mut(&mut self, name: &str) -> Result<&mut Array2<f64>> {
        self.tensors
            .get_mut(name)
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter: {name}")))
    }

    pub fn names(&self) -> impl Iterator<Item = &str> {
        self.tensors.keys().map(|s| s.as_str())
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Array2<f64>)> {
        self.tensors.iter().map(|(k, v)| (k.as_str(), v))
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = (&str, &mut Array2<f64>)> {
        self.tensors.iter_mut().map(|(k, v)| (k.as_str(), v))
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn n_values(&self) -> usize {
        self.tensors.values().map(|t| t.len()).sum()
    }
}

/// Graph leaves for every parameter of a set, looked up by name during a
/// forward pass; gradients are collected back by the same names.
pub struct ParamNodes {
    nodes: BTreeMap<String, NodeId>,
}

impl ParamNodes {
    pub fn new(params: &ParamSet, g: &mut Graph) -> ParamNodes {
        let nodes = params
            .iter()
            .map(|(name, value)| (name.to_string(), g.leaf(value.clone(), true)))
            .collect();
        ParamNodes { nodes }
    }

    /// Binds existing leaf nodes by name; the gradient checker uses this to
    /// differentiate a model with respect to externally owned leaves.
    pub fn from_map(nodes: BTreeMap<String, NodeId>) -> ParamNodes {
        ParamNodes { nodes }
    }

    pub fn get(&self, name: &str) -> Result<NodeId> {
        self.nodes
            .get(name)
            .copied()
            .ok_or_else(|| Error::InvalidInput(format!("unknown parameter: {name}")))
    }

    /// Reads every parameter's gradient out of the graph after `backward`.
    pub fn grads(&self, g: &Graph) -> BTreeMap<String, Array2<f64>> {
        self.nodes
            .iter()
            .map(|(name, &id)| (name.clone(), g.grad(id)))
            .collect()
    }
}

/// Accumulates per-example gradients into a running sum, then averages.
#[derive(Debug, Default)]
pub struct GradAccumulator {
    sums: BTreeMap<String, Array2<f64>>,
    count: usize,
}

impl GradAccumulator {
    pub fn new() -> GradAccumulator {
        GradAccumulator::default()
    }

    pub fn add(&mut self, grads: BTreeMap<String, Array2<f64>>) {
        for (name, g) in grads {
            match self.sums.get_mut(&name) {
                Some(s) => *s += &g,
                None => {
                    self.sums.insert(name, g);
                }
            }
        }
        self.count += 1;
    }

    pub fn count(&self) -> usize {
        self.count
    }

    /// Mean gradients over the accumulated examples; resets the state.
    pub fn mean(&mut self) -> BTreeMap<String, Array2<f64>> {
        let n = self.count.max(1) as f64;
        let mut out = std::mem::take(&mut self.sums);
        for g in out.values_mut() {
            *g /= n;
        }
        self.count = 0;
        out
    }
}
