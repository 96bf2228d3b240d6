use std::cell::RefCell;
use std::collections::HashMap;
use std::sync::Arc;

use crate::{ParamId, ParamStore, Tensor};

pub(crate) type BackwardFn = Box<dyn FnOnce(&Tensor, &[bool]) -> Vec<Option<Tensor>>>;

struct Node {
    parents: Vec<Option<usize>>,
    backward: Option<BackwardFn>,
}

/// Whether layers with train/eval behaviour (batch norm) use batch statistics.
#[derive(Debug, Clone, Copy, PartialEq, Eq)]
pub enum Mode {
    Train,
    Eval,
}

/// Operation tape for one forward/backward pass.
///
/// A graph created with [`Graph::new`] records every operation whose inputs
/// require gradients. [`Graph::inference`] records nothing, so intermediate
/// values are dropped as soon as they go out of scope.
pub struct Graph {
    recording: bool,
    mode: Mode,
    nodes: RefCell<Vec<Node>>,
    param_nodes: RefCell<Vec<(usize, ParamId)>>,
    buffer_updates: RefCell<Vec<(ParamId, Tensor)>>,
}

impl Graph {
    /// Recording graph in the given mode.
    pub fn new(mode: Mode) -> Self {
        Self {
            recording: true,
            mode,
            nodes: RefCell::new(Vec::new()),
            param_nodes: RefCell::new(Vec::new()),
            buffer_updates: RefCell::new(Vec::new()),
        }
    }

    /// Recording graph in training mode.
    pub fn train() -> Self {
        Self::new(Mode::Train)
    }

    /// Non-recording graph in eval mode.
    pub fn inference() -> Self {
        Self { recording: false, ..Self::new(Mode::Eval) }
    }

    pub fn mode(&self) -> Mode {
        self.mode
    }

    pub fn is_recording(&self) -> bool {
        self.recording
    }

    /// Number of recorded nodes.
    pub fn len(&self) -> usize {
        self.nodes.borrow().len()
    }

    pub fn is_empty(&self) -> bool {
        self.len() == 0
    }

    /// A value that never receives a gradient.
    pub fn constant(&self, value: Tensor) -> Var<'_> {
        Var { graph: self, node: None, value: Arc::new(value) }
    }

    /// A leaf whose gradient is reported by [`Graph::backward`].
    pub fn leaf(&self, value: Tensor) -> Var<'_> {
        let node = self.push_leaf();
        Var { graph: self, node, value: Arc::new(value) }
    }

    /// Brings a stored parameter into the graph.
    ///
    /// Trainable parameters become leaves; buffers become constants.
    pub fn param(&self, store: &ParamStore, id: ParamId) -> Var<'_> {
        let value = store.shared(id);
        if !store.is_trainable(id) {
            return Var { graph: self, node: None, value };
        }
        let node = self.push_leaf();
        if let Some(n) = node {
            self.param_nodes.borrow_mut().push((n, id));
        }
        Var { graph: self, node, value }
    }

    fn push_leaf(&self) -> Option<usize> {
        if !self.recording {
            return None;
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: Vec::new(), backward: None });
        Some(nodes.len() - 1)
    }

    /// Records the result of an operation.
    ///
    /// `backward` receives the gradient of the output and a flag per parent
    /// saying whether that parent needs a gradient, and returns one entry per
    /// parent.
    pub(crate) fn record<'g, F>(&'g self, value: Tensor, parents: &[&Var<'g>], backward: F) -> Var<'g>
    where
        F: FnOnce(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        self.record_shared(Arc::new(value), parents, backward)
    }

    /// Like [`Graph::record`] for ops whose backward needs the output value.
    pub(crate) fn record_shared<'g, F>(&'g self, value: Arc<Tensor>, parents: &[&Var<'g>], backward: F) -> Var<'g>
    where
        F: FnOnce(&Tensor, &[bool]) -> Vec<Option<Tensor>> + 'static,
    {
        let ids: Vec<Option<usize>> = parents.iter().map(|p| p.node).collect();
        if !self.recording || ids.iter().all(Option::is_none) {
            return Var { graph: self, node: None, value };
        }
        let mut nodes = self.nodes.borrow_mut();
        nodes.push(Node { parents: ids, backward: Some(Box::new(backward)) });
        Var { graph: self, node: Some(nodes.len() - 1), value }
    }

    /// Queues a new value for a buffer (e.g. batch-norm running statistics).
    pub(crate) fn push_buffer_update(&self, id: ParamId, value: Tensor) {
        self.buffer_updates.borrow_mut().push((id, value));
    }

    /// Buffer updates produced during the forward pass, in issue order.
    pub fn take_buffer_updates(&self) -> Vec<(ParamId, Tensor)> {
        std::mem::take(&mut *self.buffer_updates.borrow_mut())
    }

    /// Back-propagates from a scalar `loss`.
    ///
    /// Consumes the recorded closures; calling it twice on the same graph
    /// yields empty gradients for everything recorded before the first call.
    pub fn backward(&self, loss: &Var<'_>) -> Gradients {
        assert_eq!(loss.value.len(), 1, "backward: loss must be a scalar, got shape {:?}", loss.shape());
        let mut grads = Gradients { leaves: HashMap::new(), params: Vec::new() };
        let Some(root) = loss.node else {
            return grads;
        };
        let mut nodes = self.nodes.borrow_mut();
        let mut pending: Vec<Option<Tensor>> = (0..=root).map(|_| None).collect();
        pending[root] = Some(Tensor::ones(loss.value.raw_dim()));

        for i in (0..=root).rev() {
            let Some(g) = pending[i].take() else { continue };
            let node = &mut nodes[i];
            match node.backward.take() {
                None => {
                    grads.leaves.insert(i, g);
                }
                Some(bw) => {
                    let needs: Vec<bool> = node.parents.iter().map(Option::is_some).collect();
                    let parent_grads = bw(&g, &needs);
                    debug_assert_eq!(parent_grads.len(), node.parents.len());
                    for (p, pg) in node.parents.iter().zip(parent_grads) {
                        if let (Some(p), Some(pg)) = (p, pg) {
                            match &mut pending[*p] {
                                Some(acc) => accumulate(acc, &pg),
                                slot @ None => *slot = Some(pg),
                            }
                        }
                    }
                }
            }
        }

        for &(node, id) in self.param_nodes.borrow().iter() {
            if let Some(g) = grads.leaves.get(&node) {
                grads.params.push((id, g.clone()));
            }
        }
        grads
    }
}

fn accumulate(acc: &mut Tensor, g: &Tensor) {
    match (acc.as_slice_mut(), g.as_slice()) {
        (Some(a), Some(b)) if a.len() == b.len() => a.iter_mut().zip(b).for_each(|(a, b)| *a += b),
        _ => *acc += g,
    }
}

/// Gradients produced by [`Graph::backward`].
pub struct Gradients {
    leaves: HashMap<usize, Tensor>,
    params: Vec<(ParamId, Tensor)>,
}

impl Gradients {
    /// Gradient of a leaf created with [`Graph::leaf`] or [`Graph::param`].
    pub fn get(&self, var: &Var<'_>) -> Option<&Tensor> {
        var.node.and_then(|n| self.leaves.get(&n))
    }

    /// Per-parameter gradients, summed when a parameter entered the graph
    /// more than once.
    pub fn params(&self) -> HashMap<ParamId, Tensor> {
        let mut out: HashMap<ParamId, Tensor> = HashMap::new();
        for (id, g) in &self.params {
            match out.get_mut(id) {
                Some(acc) => *acc += g,
                None => {
                    out.insert(*id, g.clone());
                }
            }
        }
        out
    }
}

/// A value in a [`Graph`].
#[derive(Clone)]
pub struct Var<'g> {
    graph: &'g Graph,
    node: Option<usize>,
    value: Arc<Tensor>,
}

impl<'g> Var<'g> {
    pub fn value(&self) -> &Tensor {
        &self.value
    }

    pub(crate) fn shared(&self) -> Arc<Tensor> {
        Arc::clone(&self.value)
    }

    pub fn shape(&self) -> &[usize] {
        self.value.shape()
    }

    pub fn ndim(&self) -> usize {
        self.value.ndim()
    }

    pub fn graph(&self) -> &'g Graph {
        self.graph
    }

    pub fn requires_grad(&self) -> bool {
        self.node.is_some()
    }

    /// Copies the value out of the graph.
    pub fn to_tensor(&self) -> Tensor {
        (*self.value).clone()
    }

    /// Scalar value; panics unless the tensor has exactly one element.
    pub fn item(&self) -> f64 {
        assert_eq!(self.value.len(), 1, "item: tensor has shape {:?}", self.shape());
        *self.value.iter().next().expect("non-empty")
    }

    /// Same value, cut off from gradient flow.
    pub fn detach(&self) -> Var<'g> {
        Var { graph: self.graph, node: None, value: Arc::clone(&self.value) }
    }
}

impl std::fmt::Debug for Var<'_> {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("Var").field("node", &self.node).field("shape", &self.shape()).finish()
    }
}
