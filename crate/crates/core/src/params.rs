//! Named parameter storage and per-tape binding.

use std::collections::HashMap;

use crate::error::{Error, Result};
use crate::tensor::{Rng, Tape, Tensor, Var};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Clone, Debug, PartialEq)]
pub struct ParamEntry {
    pub name: String,
    pub value: Tensor,
    /// Frozen parameters are bound as constants and skipped by the optimizer.
    pub trainable: bool,
}

/// Ordered collection of named tensors. Insertion order is the canonical
/// order for checkpoints, gradients and optimizer state.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore {
    entries: Vec<ParamEntry>,
    index: HashMap<String, usize>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter `{name}`");
        self.index.insert(name.clone(), self.entries.len());
        self.entries.push(ParamEntry { name, value, trainable: true });
        ParamId(self.entries.len() - 1)
    }

    /// Gaussian-initialized parameter.
    pub fn randn(&mut self, name: impl Into<String>, shape: &[usize], std: f64, rng: &mut Rng) -> ParamId {
        self.add(name, Tensor::randn(shape, std, rng))
    }

    pub fn zeros(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::zeros(shape))
    }

    pub fn ones(&mut self, name: impl Into<String>, shape: &[usize]) -> ParamId {
        self.add(name, Tensor::full(shape, 1.0))
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).map(|&i| ParamId(i))
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.entries[id.0].value
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn entries(&self) -> &[ParamEntry] {
        &self.entries
    }

    pub fn entries_mut(&mut self) -> &mut [ParamEntry] {
        &mut self.entries
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn set_trainable(&mut self, id: ParamId, trainable: bool) {
        self.entries[id.0].trainable = trainable;
    }

    /// Total number of scalar parameters.
    pub fn num_scalars(&self) -> usize {
        self.entries.iter().map(|e| e.value.numel()).sum()
    }

    /// Record every parameter as a leaf of `tape`.
    pub fn bind(&self, tape: &mut Tape) -> Binding {
        let vars = self
            .entries
            .iter()
            .map(|e| tape.leaf(e.value.clone(), e.trainable))
            .collect();
        Binding { vars }
    }

    /// Replace values from `other` by name; shapes must match.
    pub fn load_from(&mut self, other: &ParamStore) -> Result<()> {
        self.load_where(other, |_| true)
    }

    /// Like [`ParamStore::load_from`], restricted to names accepted by `keep`.
    pub fn load_where(&mut self, other: &ParamStore, keep: impl Fn(&str) -> bool) -> Result<()> {
        for entry in self.entries.iter_mut().filter(|e| keep(&e.name)) {
            let src = other
                .id(&entry.name)
                .map(|id| other.get(id))
                .ok_or_else(|| Error::Incompatible(format!("missing parameter `{}`", entry.name)))?;
            if src.shape() != entry.value.shape() {
                return Err(Error::Incompatible(format!(
                    "parameter `{}`: checkpoint shape {:?}, model shape {:?}",
                    entry.name,
                    src.shape(),
                    entry.value.shape()
                )));
            }
            entry.value = src.clone();
        }
        Ok(())
    }
}

/// Parameter leaves of one tape, indexed by [`ParamId`].
#[derive(Clone, Debug)]
pub struct Binding {
    vars: Vec<Var>,
}

impl Binding {
    /// Binding over caller-made leaves, one per parameter in store order.
    pub fn from_vars(vars: Vec<Var>) -> Self {
        Binding { vars }
    }

    pub fn var(&self, id: ParamId) -> Var {
        self.vars[id.0]
    }

    /// Collect gradients after `tape.backward`.
    pub fn grads(&self, tape: &Tape) -> Result<Grads> {
        Ok(Grads(self.vars.iter().map(|&v| tape.grad(v)).collect::<Result<_>>()?))
    }
}

/// Gradients aligned with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Grads(pub Vec<Tensor>);

impl Grads {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Grads(store.entries.iter().map(|e| Tensor::zeros(e.value.shape())).collect())
    }

    pub fn accumulate(&mut self, other: &Grads) {
        for (a, b) in self.0.iter_mut().zip(&other.0) {
            a.data_mut().iter_mut().zip(b.data()).for_each(|(x, y)| *x += y);
        }
    }

    pub fn scale(&mut self, c: f64) {
        for g in &mut self.0 {
            g.data_mut().iter_mut().for_each(|x| *x *= c);
        }
    }

    /// Global L2 norm across every tensor.
    pub fn global_norm(&self) -> f64 {
        self.0
            .iter()
            .flat_map(|g| g.data())
            .map(|x| x * x)
            .sum::<f64>()
            .sqrt()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.0[id.0]
    }
}
