use std::cell::RefCell;
use std::collections::HashMap;
use std::rc::Rc;

use crate::graph::{Gradients, Graph, Var};
use crate::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of trainable tensors.
///
/// Names are hierarchical paths such as `style.photo.content.conv0.weight`.
/// Insertion order is stable and defines the order used by optimisers and
/// checkpoints.
#[derive(Clone, Default)]
pub struct ParamStore {
    names: Vec<String>,
    values: Vec<Rc<Tensor>>,
    index: HashMap<String, ParamId>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        let name = name.into();
        assert!(!self.index.contains_key(&name), "duplicate parameter {name}");
        let id = ParamId(self.names.len());
        self.index.insert(name.clone(), id);
        self.names.push(name);
        self.values.push(Rc::new(value));
        id
    }

    pub fn len(&self) -> usize {
        self.names.len()
    }

    pub fn is_empty(&self) -> bool {
        self.names.is_empty()
    }

    pub fn num_elements(&self) -> usize {
        self.values.iter().map(|v| v.len()).sum()
    }

    pub fn id(&self, name: &str) -> Option<ParamId> {
        self.index.get(name).copied()
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.values[id.0]
    }

    pub(crate) fn shared(&self, id: ParamId) -> Rc<Tensor> {
        self.values[id.0].clone()
    }

    /// Mutable access; copies the tensor first if a live graph still holds it.
    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        Rc::make_mut(&mut self.values[id.0])
    }

    /// Replace a value, keeping the shape.
    pub fn set(&mut self, id: ParamId, value: Tensor) {
        assert_eq!(self.values[id.0].shape(), value.shape(), "shape change for {}", self.names[id.0]);
        self.values[id.0] = Rc::new(value);
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.names.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor)> {
        self.names
            .iter()
            .zip(&self.values)
            .enumerate()
            .map(|(i, (n, v))| (ParamId(i), n.as_str(), v.as_ref()))
    }
}

/// Lazily places the parameters of one store on a graph.
///
/// Each parameter becomes a gradient-tracking leaf the first time it is used;
/// later uses in the same binding share that leaf.
pub struct Binding<'g, 's> {
    graph: &'g Graph,
    store: &'s ParamStore,
    vars: RefCell<Vec<Option<Var<'g>>>>,
    trainable: bool,
}

impl<'g, 's> Binding<'g, 's> {
    pub fn new(graph: &'g Graph, store: &'s ParamStore) -> Self {
        Self { graph, store, vars: RefCell::new(vec![None; store.len()]), trainable: true }
    }

    /// Binding whose parameters are constants: no gradients are computed for them.
    pub fn frozen(graph: &'g Graph, store: &'s ParamStore) -> Self {
        Self { trainable: false, ..Self::new(graph, store) }
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn store(&self) -> &'s ParamStore {
        self.store
    }

    pub fn var(&self, id: ParamId) -> Var<'g> {
        let mut vars = self.vars.borrow_mut();
        *vars[id.0].get_or_insert_with(|| self.graph.leaf(self.store.shared(id), self.trainable))
    }

    /// Gradient per parameter, `None` for parameters unused in this binding or
    /// unreachable from the backward root.
    pub fn grads(&self, grads: &Gradients) -> Vec<Option<Tensor>> {
        self.vars
            .borrow()
            .iter()
            .map(|v| v.and_then(|v| grads.get_id(v.id()).cloned()))
            .collect()
    }
}
