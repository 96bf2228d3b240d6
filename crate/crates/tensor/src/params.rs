use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::Tensor;

/// Handle to a tensor in a [`ParamStore`].
#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
pub enum ParamKind {
    /// Updated by the optimizer.
    Trainable,
    /// Carried state that is not optimized (running statistics).
    Buffer,
}

#[derive(Debug, Clone)]
struct Entry {
    name: String,
    kind: ParamKind,
    value: Arc<Tensor>,
}

/// Named collection of model tensors.
///
/// Names are unique; modules register their tensors once at construction
/// and keep the returned [`ParamId`]s.
#[derive(Debug, Clone, Default)]
pub struct ParamStore {
    entries: Vec<Entry>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Registers a tensor. Panics on a duplicate name.
    pub fn add(&mut self, name: impl Into<String>, kind: ParamKind, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(self.find(&name).is_none(), "duplicate parameter name {name}");
        self.entries.push(Entry { name, kind, value: Arc::new(value) });
        ParamId(self.entries.len() - 1)
    }

    pub fn trainable(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.add(name, ParamKind::Trainable, value)
    }

    pub fn buffer(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.add(name, ParamKind::Buffer, value)
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        (0..self.entries.len()).map(ParamId)
    }

    pub fn trainable_ids(&self) -> impl Iterator<Item = ParamId> + '_ {
        self.ids().filter(|&id| self.is_trainable(id))
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.entries.iter().position(|e| e.name == name).map(ParamId)
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.entries[id.0].name
    }

    pub fn kind(&self, id: ParamId) -> ParamKind {
        self.entries[id.0].kind
    }

    pub fn is_trainable(&self, id: ParamId) -> bool {
        self.kind(id) == ParamKind::Trainable
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.entries[id.0].value
    }

    pub(crate) fn shared(&self, id: ParamId) -> Arc<Tensor> {
        Arc::clone(&self.entries[id.0].value)
    }

    /// Mutable access; copies the tensor if a graph still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Arc::make_mut(&mut self.entries[id.0].value)
    }

    /// Replaces a value, checking that the shape is unchanged.
    pub fn set(&mut self, id: ParamId, value: Tensor) {
        let entry = &mut self.entries[id.0];
        assert_eq!(entry.value.shape(), value.shape(), "set: shape change for {}", entry.name);
        entry.value = Arc::new(value);
    }

    /// Total number of scalars across trainable tensors.
    pub fn num_trainable_scalars(&self) -> usize {
        self.trainable_ids().map(|id| self.get(id).len()).sum()
    }
}
