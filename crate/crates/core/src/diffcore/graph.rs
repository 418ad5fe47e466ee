use std::collections::HashMap;
use std::sync::Arc;

use super::ops::{self, CustomOp, Op};
use super::tensor::Tensor;
use crate::error::{Error, Result};

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

#[derive(Debug)]
enum Kind {
    Constant,
    Variable,
    Op(Op),
}

#[derive(Debug)]
struct Node {
    kind: Kind,
    inputs: Vec<NodeId>,
    value: Tensor,
    requires_grad: bool,
}

/// Append-only tape of tensor operations.
///
/// Leaves are either constants or variables; only variables (and the nodes
/// that depend on them) take part in the backward pass. Nodes can only refer
/// to earlier nodes, so the tape is acyclic by construction.
#[derive(Debug, Default)]
pub struct Graph {
    nodes: Vec<Node>,
}

/// Gradients of a scalar loss with respect to the variable leaves of a graph.
#[derive(Debug, Default, Clone)]
pub struct Gradients {
    map: HashMap<NodeId, Tensor>,
}

impl Gradients {
    pub fn get(&self, id: NodeId) -> Option<&Tensor> {
        self.map.get(&id)
    }

    pub fn remove(&mut self, id: NodeId) -> Option<Tensor> {
        self.map.remove(&id)
    }

    pub fn len(&self) -> usize {
        self.map.len()
    }

    pub fn is_empty(&self) -> bool {
        self.map.is_empty()
    }
}

impl Graph {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn len(&self) -> usize {
        self.nodes.len()
    }

    pub fn is_empty(&self) -> bool {
        self.nodes.is_empty()
    }

    fn push(&mut self, kind: Kind, inputs: Vec<NodeId>, value: Tensor, requires_grad: bool) -> NodeId {
        self.nodes.push(Node {
            kind,
            inputs,
            value,
            requires_grad,
        });
        NodeId(self.nodes.len() - 1)
    }

    pub fn constant(&mut self, value: Tensor) -> NodeId {
        self.push(Kind::Constant, Vec::new(), value, false)
    }

    pub fn scalar(&mut self, value: f64) -> NodeId {
        self.constant(Tensor::scalar(value))
    }

    /// A trainable leaf; `backward` reports its gradient.
    pub fn variable(&mut self, value: Tensor) -> NodeId {
        self.push(Kind::Variable, Vec::new(), value, true)
    }

    pub fn value(&self, id: NodeId) -> &Tensor {
        &self.nodes[id.0].value
    }

    pub fn shape(&self, id: NodeId) -> &[usize] {
        self.nodes[id.0].value.shape()
    }

    pub fn is_variable(&self, id: NodeId) -> bool {
        matches!(self.nodes[id.0].kind, Kind::Variable)
    }

    /// Records `op` applied to `inputs` and evaluates it.
    pub fn apply(&mut self, op: Op, inputs: &[NodeId]) -> Result<NodeId> {
        if let Some(bad) = inputs.iter().find(|id| id.0 >= self.nodes.len()) {
            return Err(Error::Domain {
                op: op.name(),
                msg: format!("unknown input node {}", bad.0),
            });
        }
        let value = {
            let vals: Vec<&Tensor> = inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            ops::forward(&op, &vals)?
        };
        let requires_grad = inputs.iter().any(|id| self.nodes[id.0].requires_grad);
        Ok(self.push(Kind::Op(op), inputs.to_vec(), value, requires_grad))
    }

    /// Reverse pass from a scalar `loss`. Nodes are visited in reverse
    /// insertion order, each at most once.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients> {
        let root = &self.nodes[loss.0];
        if root.value.len() != 1 {
            return Err(Error::NonScalarLoss(root.value.shape().to_vec()));
        }
        let mut grads: Vec<Option<Tensor>> = (0..=loss.0).map(|_| None).collect();
        grads[loss.0] = Some(Tensor::full(root.value.shape(), 1.0));
        let mut result = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let node = &self.nodes[idx];
            if !node.requires_grad {
                continue;
            }
            let Some(g) = grads[idx].take() else { continue };
            let op = match &node.kind {
                Kind::Op(op) => op,
                Kind::Variable => {
                    result.map.insert(NodeId(idx), g);
                    continue;
                }
                Kind::Constant => continue,
            };
            let inputs: Vec<&Tensor> = node.inputs.iter().map(|id| &self.nodes[id.0].value).collect();
            let needs: Vec<bool> = node
                .inputs
                .iter()
                .map(|id| self.nodes[id.0].requires_grad)
                .collect();
            let input_grads = ops::backward(op, &inputs, &node.value, &g, &needs);
            for ((input, grad), need) in node.inputs.iter().zip(input_grads).zip(needs) {
                let Some(grad) = grad else { continue };
                if !need {
                    continue;
                }
                match &mut grads[input.0] {
                    Some(acc) => acc.add_assign(&grad),
                    slot @ None => *slot = Some(grad),
                }
            }
        }
        Ok(result)
    }

    // Convenience constructors, one per op.

    pub fn add(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Add, &[a, b])
    }

    pub fn sub(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Sub, &[a, b])
    }

    pub fn mul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Mul, &[a, b])
    }

    pub fn div(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Div, &[a, b])
    }

    pub fn matmul(&mut self, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::MatMul, &[a, b])
    }

    pub fn transpose(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Transpose, &[a])
    }

    pub fn exp(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Exp, &[a])
    }

    pub fn log(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Log, &[a])
    }

    pub fn softplus(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Softplus, &[a])
    }

    pub fn sigmoid(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Sigmoid, &[a])
    }

    pub fn relu(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Relu, &[a])
    }

    pub fn min_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::MinScalar(c), &[a])
    }

    pub fn max_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::MaxScalar(c), &[a])
    }

    pub fn square(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Square, &[a])
    }

    pub fn abs(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Abs, &[a])
    }

    pub fn neg(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::Neg, &[a])
    }

    pub fn scale(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::Scale(c), &[a])
    }

    pub fn add_scalar(&mut self, a: NodeId, c: f64) -> Result<NodeId> {
        self.apply(Op::AddScalar(c), &[a])
    }

    pub fn sum(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::Sum { axis }, &[a])
    }

    pub fn mean(&mut self, a: NodeId, axis: usize) -> Result<NodeId> {
        self.apply(Op::Mean { axis }, &[a])
    }

    pub fn sum_all(&mut self, a: NodeId) -> Result<NodeId> {
        self.apply(Op::SumAll, &[a])
    }

    pub fn cumsum(&mut self, a: NodeId, axis: usize, exclusive: bool) -> Result<NodeId> {
        self.apply(Op::CumSum { axis, exclusive }, &[a])
    }

    pub fn concat(&mut self, parts: &[NodeId], axis: usize) -> Result<NodeId> {
        self.apply(Op::Concat { axis }, parts)
    }

    pub fn slice(&mut self, a: NodeId, axis: usize, start: usize, end: usize) -> Result<NodeId> {
        self.apply(Op::Slice { axis, start, end }, &[a])
    }

    pub fn select(&mut self, mask: Vec<bool>, a: NodeId, b: NodeId) -> Result<NodeId> {
        self.apply(Op::Select { mask: Arc::new(mask) }, &[a, b])
    }

    pub fn index_select(&mut self, a: NodeId, indices: Vec<usize>) -> Result<NodeId> {
        self.apply(Op::IndexSelect { indices: Arc::new(indices) }, &[a])
    }

    pub fn reshape(&mut self, a: NodeId, shape: &[usize]) -> Result<NodeId> {
        self.apply(Op::Reshape { shape: shape.to_vec() }, &[a])
    }

    pub fn custom(&mut self, op: Arc<dyn CustomOp>, inputs: &[NodeId]) -> Result<NodeId> {
        self.apply(Op::Custom(op), inputs)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn scalar_var(g: &mut Graph, v: f64) -> NodeId {
        g.variable(Tensor::scalar(v))
    }

    #[test]
    fn exp_of_zero_is_one() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![0.0]));
        let y = g.exp(x).unwrap();
        assert_eq!(g.value(y).data(), &[1.0]);
    }

    #[test]
    fn identity_matmul() {
        let mut g = Graph::new();
        let eye = g.constant(Tensor::new(vec![2, 2], vec![1.0, 0.0, 0.0, 1.0]).unwrap());
        let m = Tensor::new(vec![2, 3], vec![1.0, -2.0, 3.5, 0.25, 7.0, -1.0]).unwrap();
        let mn = g.constant(m.clone());
        let y = g.matmul(eye, mn).unwrap();
        assert_eq!(g.value(y), &m);
    }

    #[test]
    fn softplus_closed_form() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![2.0]));
        let y = g.softplus(x).unwrap();
        // ln(1 + e^2)
        assert!((g.value(y).data()[0] - 2.126_928_011_042_972_5).abs() < 1e-15);
    }

    #[test]
    fn square_gradient() {
        let mut g = Graph::new();
        let x = scalar_var(&mut g, 3.0);
        let y = g.square(x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[6.0]);
    }

    #[test]
    fn sum_exp_gradient() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![0.0, 0.0]));
        let e = g.exp(x).unwrap();
        let s = g.sum_all(e).unwrap();
        let grads = g.backward(s).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[1.0, 1.0]);
    }

    #[test]
    fn sigmoid_gradient_closed_form() {
        let mut g = Graph::new();
        let x = scalar_var(&mut g, 2.0);
        let y = g.sigmoid(x).unwrap();
        let grads = g.backward(y).unwrap();
        // sigma(2)(1 - sigma(2))
        assert!((grads.get(x).unwrap().data()[0] - 0.104_993_585_403_506_58).abs() < 1e-15);
    }

    #[test]
    fn non_scalar_loss_rejected() {
        let mut g = Graph::new();
        let x = g.variable(Tensor::vector(vec![1.0, 2.0]));
        let y = g.exp(x).unwrap();
        assert!(matches!(g.backward(y), Err(Error::NonScalarLoss(_))));
    }

    #[test]
    fn log_of_nonpositive_rejected() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::vector(vec![1.0, 0.0]));
        let err = g.log(x).unwrap_err();
        assert!(err.to_string().contains("log"));
    }

    #[test]
    fn shape_mismatch_names_op_and_shapes() {
        let mut g = Graph::new();
        let a = g.constant(Tensor::zeros(&[2, 3]));
        let b = g.constant(Tensor::zeros(&[4]));
        let msg = g.add(a, b).unwrap_err().to_string();
        assert!(msg.contains("add") && msg.contains("[2, 3]") && msg.contains("[4]"), "{msg}");
        let msg = g.matmul(a, a).unwrap_err().to_string();
        assert!(msg.contains("matmul"), "{msg}");
    }

    #[test]
    fn constants_get_no_gradient_storage() {
        let mut g = Graph::new();
        let c = g.constant(Tensor::scalar(2.0));
        let x = scalar_var(&mut g, 1.5);
        let y = g.mul(c, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.len(), 1);
        assert!(grads.get(c).is_none());
        assert_eq!(grads.get(x).unwrap().data(), &[2.0]);
    }

    #[test]
    fn shared_subexpression_accumulates() {
        // y = x*x + x  => dy/dx = 2x + 1
        let mut g = Graph::new();
        let x = scalar_var(&mut g, 1.25);
        let sq = g.mul(x, x).unwrap();
        let y = g.add(sq, x).unwrap();
        let grads = g.backward(y).unwrap();
        assert_eq!(grads.get(x).unwrap().data(), &[3.5]);
    }

    #[test]
    fn exclusive_cumsum() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![2, 3], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let inc = g.cumsum(x, 1, false).unwrap();
        let exc = g.cumsum(x, 1, true).unwrap();
        assert_eq!(g.value(inc).data(), &[1.0, 3.0, 6.0, 4.0, 9.0, 15.0]);
        assert_eq!(g.value(exc).data(), &[0.0, 1.0, 3.0, 0.0, 4.0, 9.0]);
    }

    #[test]
    fn slice_concat_index_select() {
        let mut g = Graph::new();
        let x = g.constant(Tensor::new(vec![3, 2], vec![1.0, 2.0, 3.0, 4.0, 5.0, 6.0]).unwrap());
        let s = g.slice(x, 1, 1, 2).unwrap();
        assert_eq!(g.value(s).data(), &[2.0, 4.0, 6.0]);
        let c = g.concat(&[x, s], 1).unwrap();
        assert_eq!(g.shape(c), &[3, 3]);
        assert_eq!(g.value(c).data(), &[1.0, 2.0, 2.0, 3.0, 4.0, 4.0, 5.0, 6.0, 6.0]);
        let r = g.index_select(x, vec![2, 0, 2]).unwrap();
        assert_eq!(g.value(r).data(), &[5.0, 6.0, 1.0, 2.0, 5.0, 6.0]);
        assert!(g.index_select(x, vec![3]).is_err());
    }
}
