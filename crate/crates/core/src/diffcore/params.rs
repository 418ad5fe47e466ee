use super::graph::{Gradients, Graph, NodeId};
use super::tensor::Tensor;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named trainable tensors, kept outside any graph so they survive across
/// training steps.
#[derive(Debug, Clone, Default, PartialEq)]
pub struct ParamStore {
    names: Vec<String>,
    tensors: Vec<Tensor>,
}

/// Graph nodes bound to every parameter of a store for one forward pass.
#[derive(Debug, Clone)]
pub struct ParamNodes {
    nodes: Vec<NodeId>,
}

impl ParamNodes {
    pub fn get(&self, id: ParamId) -> NodeId {
        self.nodes[id.0]
    }

    /// Rebinds one parameter to another node, e.g. a gradient-check probe.
    pub fn replace(&mut self, id: ParamId, node: NodeId) {
        self.nodes[id.0] = node;
    }

    /// Pulls the per-parameter gradients out of `grads`, in store order.
    pub fn collect(&self, grads: &mut Gradients) -> Vec<Option<Tensor>> {
        self.nodes.iter().map(|&n| grads.remove(n)).collect()
    }
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, name: impl Into<String>, value: Tensor) -> ParamId {
        self.names.push(name.into());
        self.tensors.push(value);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (&str, &Tensor)> {
        self.names.iter().map(String::as_str).zip(&self.tensors)
    }

    pub fn total_len(&self) -> usize {
        self.tensors.iter().map(Tensor::len).sum()
    }

    /// Inserts every parameter into `graph`, as variables when `trainable`
    /// and as constants otherwise.
    pub fn bind(&self, graph: &mut Graph, trainable: bool) -> ParamNodes {
        let nodes = self
            .tensors
            .iter()
            .map(|t| {
                if trainable {
                    graph.variable(t.clone())
                } else {
                    graph.constant(t.clone())
                }
            })
            .collect();
        ParamNodes { nodes }
    }
}
