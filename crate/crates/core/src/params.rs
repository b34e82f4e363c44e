//! Named parameter storage with deterministic initialization.
//!
//! Parameter values are keyed by name. Initialization is a pure function of
//! (store seed, parameter name, shape), so the set of parameters a model
//! touches — not the order it touches them in — determines every value.

use std::collections::BTreeMap;

use crate::error::{Error, Result};
use crate::graph::{Gradients, Graph, Var};
use crate::rng::{fnv1a64, mix, SplitMix64};
use crate::scalar::Scalar;
use crate::tensor::Tensor;

/// Initialization scheme for a fresh parameter tensor.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Init {
    /// Uniform in ±sqrt(6 / (fan_in + fan_out)), fans taken from a 2-D shape.
    Xavier,
    Zeros,
    Ones,
}

struct Param<T> {
    value: Tensor<T>,
    grad: Tensor<T>,
}

pub struct ParameterStore<T: Scalar> {
    seed: u64,
    params: BTreeMap<String, Param<T>>,
}

impl<T: Scalar> ParameterStore<T> {
    pub fn new(seed: u64) -> Self {
        ParameterStore {
            seed,
            params: BTreeMap::new(),
        }
    }

    pub fn seed(&self) -> u64 {
        self.seed
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    /// Total scalar entries across all parameters.
    pub fn num_values(&self) -> usize {
        self.params.values().map(|p| p.value.len()).sum()
    }

    /// Sorted parameter names.
    pub fn names(&self) -> Vec<String> {
        self.params.keys().cloned().collect()
    }

    fn init_tensor(&self, name: &str, shape: &[usize], init: Init) -> Tensor<T> {
        match init {
            Init::Zeros => Tensor::zeros(shape),
            Init::Ones => Tensor::filled(shape, T::one()),
            Init::Xavier => {
                let (fan_in, fan_out) = match shape {
                    [a, b] => (*a, *b),
                    other => {
                        let n: usize = other.iter().product();
                        (n, n)
                    }
                };
                let limit = (6.0 / (fan_in + fan_out) as f64).sqrt();
                let mut rng = SplitMix64::new(mix(self.seed, fnv1a64(name.as_bytes())));
                let count: usize = shape.iter().product();
                let data: Vec<T> = (0..count)
                    .map(|_| T::cast(rng.uniform(-limit, limit)))
                    .collect();
                Tensor::new(shape.to_vec(), data).expect("shape/count consistent")
            }
        }
    }

    /// Fetch a parameter, creating it deterministically if absent.
    pub fn get_or_init(&mut self, name: &str, shape: &[usize], init: Init) -> Result<&Tensor<T>> {
        if !self.params.contains_key(name) {
            let value = self.init_tensor(name, shape, init);
            let grad = Tensor::zeros(shape);
            self.params.insert(name.to_string(), Param { value, grad });
        }
        let p = &self.params[name];
        if p.value.shape() != shape {
            return Err(Error::Dimension(format!(
                "parameter '{name}' has shape {:?}, requested {:?}",
                p.value.shape(),
                shape
            )));
        }
        Ok(&p.value)
    }

    pub fn value(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.value)
    }

    pub fn set_value(&mut self, name: &str, value: Tensor<T>) {
        let grad = Tensor::zeros(value.shape());
        self.params.insert(name.to_string(), Param { value, grad });
    }

    pub fn grad(&self, name: &str) -> Option<&Tensor<T>> {
        self.params.get(name).map(|p| &p.grad)
    }

    pub fn zero_grads(&mut self) {
        for p in self.params.values_mut() {
            p.grad = Tensor::zeros(p.value.shape());
        }
    }

    pub fn accumulate_grad(&mut self, name: &str, contribution: &Tensor<T>) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Integrity(format!("gradient for unknown parameter '{name}'")))?;
        if p.grad.shape() != contribution.shape() {
            return Err(Error::Dimension(format!(
                "gradient shape {:?} for parameter '{name}' of shape {:?}",
                contribution.shape(),
                p.value.shape()
            )));
        }
        p.grad = p.grad.add(contribution)?;
        Ok(())
    }

    /// Add `delta` to a single entry in place. Used by the finite-difference
    /// oracle; not part of normal training.
    pub fn nudge(&mut self, name: &str, index: usize, delta: T) -> Result<()> {
        let p = self
            .params
            .get_mut(name)
            .ok_or_else(|| Error::Integrity(format!("unknown parameter '{name}'")))?;
        if index >= p.value.len() {
            return Err(Error::Dimension(format!(
                "entry {index} out of range for '{name}' ({} values)",
                p.value.len()
            )));
        }
        p.value.data_mut()[index] += delta;
        Ok(())
    }

    /// Apply an in-place update computed from (value, grad).
    pub fn update_values(&mut self, mut f: impl FnMut(&str, &mut Tensor<T>, &Tensor<T>)) {
        for (name, p) in self.params.iter_mut() {
            f(name, &mut p.value, &p.grad);
        }
    }

    pub fn iter_values(&self) -> impl Iterator<Item = (&str, &Tensor<T>)> {
        self.params.iter().map(|(n, p)| (n.as_str(), &p.value))
    }
}

/// Binds a [`ParameterStore`] to one forward pass over a [`Graph`].
///
/// Each parameter becomes a single leaf node no matter how many times it is
/// requested, so shared weights accumulate gradients correctly.
pub struct Session<'a, T: Scalar> {
    pub graph: &'a Graph<T>,
    store: &'a mut ParameterStore<T>,
    bound: BTreeMap<String, Var>,
}

impl<'a, T: Scalar> Session<'a, T> {
    pub fn new(graph: &'a Graph<T>, store: &'a mut ParameterStore<T>) -> Self {
        Session {
            graph,
            store,
            bound: BTreeMap::new(),
        }
    }

    pub fn param(&mut self, name: &str, shape: &[usize], init: Init) -> Result<Var> {
        if let Some(&v) = self.bound.get(name) {
            let existing = self.graph.shape(v);
            if existing != shape {
                return Err(Error::Dimension(format!(
                    "parameter '{name}' bound with shape {existing:?}, requested {shape:?}"
                )));
            }
            return Ok(v);
        }
        let value = self.store.get_or_init(name, shape, init)?.clone();
        let v = self.graph.input_labeled(value, name);
        self.bound.insert(name.to_string(), v);
        Ok(v)
    }

    pub fn constant(&self, t: Tensor<T>) -> Var {
        self.graph.input(t)
    }

    /// Fold a backward pass's gradients into the store's accumulators.
    pub fn fold_gradients(&mut self, grads: &Gradients<T>) -> Result<()> {
        for (name, &var) in &self.bound {
            if let Some(g) = grads.get(var) {
                self.store.accumulate_grad(name, g)?;
            }
        }
        Ok(())
    }
}
