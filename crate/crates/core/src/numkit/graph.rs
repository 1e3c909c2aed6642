//! A small operation vocabulary with two backends: [`Eager`] evaluates
//! immediately (rollouts, target networks), [`Tape`] evaluates and records
//! for reverse-mode differentiation. Networks are written once against
//! [`Graph`] and run on either.

use std::borrow::Cow;
use std::rc::Rc;

use crate::error::{Error, Result};

use super::matrix::{reduce_groups, reduce_groups_backward};
use super::{Activation, CsrMatrix, Matrix, ParamId, ParamStore, Reduce, Scalar};

pub trait Graph<S: Scalar> {
    type Node;

    /// A constant input; no gradient flows into it.
    fn input(&mut self, value: Matrix<S>) -> Self::Node;
    fn param(&mut self, id: ParamId) -> Self::Node;
    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Matrix<S>;

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    fn hadamard(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node>;
    /// Adds a 1×cols bias row to every row of `x`.
    fn add_row(&mut self, x: &Self::Node, bias: &Self::Node) -> Result<Self::Node>;
    fn scale(&mut self, x: &Self::Node, factor: S) -> Self::Node;
    fn activation(&mut self, x: &Self::Node, kind: Activation) -> Self::Node;
    /// Reduces consecutive groups of `group` rows.
    fn reduce_groups(&mut self, x: &Self::Node, kind: Reduce, group: usize) -> Result<Self::Node>;
    fn reshape(&mut self, x: &Self::Node, rows: usize, cols: usize) -> Result<Self::Node>;
    /// Left-multiplies by a constant sparse matrix.
    fn sparse_matmul(&mut self, a: &Rc<CsrMatrix<S>>, x: &Self::Node) -> Result<Self::Node>;

    fn reduce(&mut self, x: &Self::Node, kind: Reduce) -> Result<Self::Node> {
        let rows = self.value(x).rows();
        self.reduce_groups(x, kind, rows.max(1))
    }
}

/// Immediate evaluation without recording.
pub struct Eager<'s, S: Scalar> {
    store: &'s ParamStore<S>,
}

impl<'s, S: Scalar> Eager<'s, S> {
    pub fn new(store: &'s ParamStore<S>) -> Self {
        Self { store }
    }
}

impl<'s, S: Scalar> Graph<S> for Eager<'s, S> {
    type Node = Cow<'s, Matrix<S>>;

    fn input(&mut self, value: Matrix<S>) -> Self::Node {
        Cow::Owned(value)
    }

    fn param(&mut self, id: ParamId) -> Self::Node {
        Cow::Borrowed(self.store.value(id))
    }

    fn value<'a>(&'a self, node: &'a Self::Node) -> &'a Matrix<S> {
        node
    }

    fn matmul(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        a.matmul(b).map(Cow::Owned)
    }

    fn add(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        a.add(b).map(Cow::Owned)
    }

    fn sub(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        a.sub(b).map(Cow::Owned)
    }

    fn hadamard(&mut self, a: &Self::Node, b: &Self::Node) -> Result<Self::Node> {
        a.hadamard(b).map(Cow::Owned)
    }

    fn add_row(&mut self, x: &Self::Node, bias: &Self::Node) -> Result<Self::Node> {
        x.add_row(bias).map(Cow::Owned)
    }

    fn scale(&mut self, x: &Self::Node, factor: S) -> Self::Node {
        Cow::Owned(x.scale(factor))
    }

    fn activation(&mut self, x: &Self::Node, kind: Activation) -> Self::Node {
        Cow::Owned(x.map(|v| kind.apply(v)))
    }

    fn reduce_groups(&mut self, x: &Self::Node, kind: Reduce, group: usize) -> Result<Self::Node> {
        reduce_groups(x, kind, group).map(Cow::Owned)
    }

    fn reshape(&mut self, x: &Self::Node, rows: usize, cols: usize) -> Result<Self::Node> {
        x.reshape(rows, cols).map(Cow::Owned)
    }

    fn sparse_matmul(&mut self, a: &Rc<CsrMatrix<S>>, x: &Self::Node) -> Result<Self::Node> {
        a.mul_dense(x).map(Cow::Owned)
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct NodeId(usize);

impl NodeId {
    pub fn index(self) -> usize {
        self.0
    }
}

enum Op<S> {
    Input,
    Param(ParamId),
    MatMul(NodeId, NodeId),
    Add(NodeId, NodeId),
    Sub(NodeId, NodeId),
    Hadamard(NodeId, NodeId),
    AddRow(NodeId, NodeId),
    Scale(NodeId, S),
    Activation(NodeId, Activation),
    Reduce(NodeId, Reduce, usize),
    Reshape(NodeId),
    SparseMatMul(Rc<CsrMatrix<S>>, NodeId),
}

struct Entry<'s, S: Scalar> {
    value: Cow<'s, Matrix<S>>,
    op: Op<S>,
    requires_grad: bool,
}

/// Records every operation in evaluation order. Confined to one thread.
pub struct Tape<'s, S: Scalar> {
    store: &'s ParamStore<S>,
    entries: Vec<Entry<'s, S>>,
}

/// Parameter gradients produced by [`Tape::backward`].
#[derive(Clone, Debug, Default)]
pub struct Gradients<S> {
    grads: Vec<(ParamId, Matrix<S>)>,
    visited: Vec<NodeId>,
}

impl<S: Scalar> Gradients<S> {
    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &Matrix<S>)> {
        self.grads.iter().map(|(id, g)| (*id, g))
    }

    pub fn get(&self, id: ParamId) -> Option<&Matrix<S>> {
        self.grads.iter().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    pub fn get_mut(&mut self, id: ParamId) -> Option<&mut Matrix<S>> {
        self.grads.iter_mut().find(|(p, _)| *p == id).map(|(_, g)| g)
    }

    /// Operation nodes in the order the backward pass processed them.
    pub fn visited(&self) -> &[NodeId] {
        &self.visited
    }
}

impl<'s, S: Scalar> Tape<'s, S> {
    pub fn new(store: &'s ParamStore<S>) -> Self {
        Self {
            store,
            entries: Vec::new(),
        }
    }

    pub fn len(&self) -> usize {
        self.entries.len()
    }

    pub fn is_empty(&self) -> bool {
        self.entries.is_empty()
    }

    fn push(&mut self, value: Cow<'s, Matrix<S>>, op: Op<S>, requires_grad: bool) -> NodeId {
        self.entries.push(Entry {
            value,
            op,
            requires_grad,
        });
        NodeId(self.entries.len() - 1)
    }

    /// Smallest `|x|` entering a relu or abs on a parameter-dependent path;
    /// infinite when there is none. Finite differences with a step beyond
    /// this distance straddle a kink.
    pub fn kink_margin(&self) -> S {
        let mut margin = S::infinity();
        for e in &self.entries {
            if let Op::Activation(x, Activation::Relu | Activation::Abs) = e.op {
                if self.rg(x) {
                    margin = self.val(x).data().iter().fold(margin, |m, v| m.min(v.abs()));
                }
            }
        }
        margin
    }

    fn val(&self, n: NodeId) -> &Matrix<S> {
        &self.entries[n.0].value
    }

    fn rg(&self, n: NodeId) -> bool {
        self.entries[n.0].requires_grad
    }

    fn binary(
        &mut self,
        a: NodeId,
        b: NodeId,
        f: impl FnOnce(&Matrix<S>, &Matrix<S>) -> Result<Matrix<S>>,
        op: Op<S>,
    ) -> Result<NodeId> {
        let v = f(self.val(a), self.val(b))?;
        let rg = self.rg(a) || self.rg(b);
        Ok(self.push(Cow::Owned(v), op, rg))
    }

    /// Reverse pass from a 1×1 `loss`. Nodes are visited in exact reverse
    /// recording order; gradients are returned per parameter leaf.
    pub fn backward(&self, loss: NodeId) -> Result<Gradients<S>> {
        if self.entries.is_empty() {
            return Err(Error::EmptyTape);
        }
        let (rows, cols) = self.val(loss).shape();
        if (rows, cols) != (1, 1) {
            return Err(Error::NonScalarLoss { rows, cols });
        }
        let mut adj: Vec<Option<Matrix<S>>> = (0..=loss.0).map(|_| None).collect();
        adj[loss.0] = Some(Matrix::scalar(S::one()));
        let mut out = Gradients::default();

        for idx in (0..=loss.0).rev() {
            let Some(g) = adj[idx].take() else { continue };
            let entry = &self.entries[idx];
            if !entry.requires_grad {
                continue;
            }
            out.visited.push(NodeId(idx));
            let send = |adj: &mut Vec<Option<Matrix<S>>>, to: NodeId, d: Matrix<S>| -> Result<()> {
                if !self.rg(to) {
                    return Ok(());
                }
                match &mut adj[to.0] {
                    Some(acc) => acc.add_assign(&d)?,
                    slot @ None => *slot = Some(d),
                }
                Ok(())
            };
            match &entry.op {
                Op::Input => {}
                Op::Param(id) => out.grads.push((*id, g)),
                Op::MatMul(a, b) => {
                    if self.rg(*a) {
                        send(&mut adj, *a, g.matmul_nt(self.val(*b))?)?;
                    }
                    if self.rg(*b) {
                        send(&mut adj, *b, self.val(*a).matmul_tn(&g)?)?;
                    }
                }
                Op::Add(a, b) => {
                    send(&mut adj, *a, g.clone())?;
                    send(&mut adj, *b, g)?;
                }
                Op::Sub(a, b) => {
                    send(&mut adj, *b, g.scale(-S::one()))?;
                    send(&mut adj, *a, g)?;
                }
                Op::Hadamard(a, b) => {
                    if self.rg(*a) {
                        send(&mut adj, *a, g.hadamard(self.val(*b))?)?;
                    }
                    if self.rg(*b) {
                        send(&mut adj, *b, g.hadamard(self.val(*a))?)?;
                    }
                }
                Op::AddRow(x, bias) => {
                    if self.rg(*bias) {
                        send(&mut adj, *bias, g.column_sums())?;
                    }
                    send(&mut adj, *x, g)?;
                }
                Op::Scale(x, c) => send(&mut adj, *x, g.scale(*c))?,
                Op::Activation(x, kind) => {
                    let input = self.val(*x);
                    let d = g.zip_with(input, "activation_backward", |up, v| up * kind.derivative(v))?;
                    send(&mut adj, *x, d)?;
                }
                Op::Reduce(x, kind, group) => {
                    let d = reduce_groups_backward(self.val(*x), *kind, *group, &g);
                    send(&mut adj, *x, d)?;
                }
                Op::Reshape(x) => {
                    let (r, c) = self.val(*x).shape();
                    send(&mut adj, *x, g.reshape(r, c)?)?;
                }
                Op::SparseMatMul(a, x) => send(&mut adj, *x, a.transpose_mul_dense(&g)?)?,
            }
        }
        out.grads.sort_by_key(|(id, _)| *id);
        // A parameter recorded on the tape more than once yields several leaves.
        let mut merged: Vec<(ParamId, Matrix<S>)> = Vec::with_capacity(out.grads.len());
        for (id, g) in out.grads.drain(..) {
            match merged.last_mut() {
                Some((last, acc)) if *last == id => acc.add_assign(&g)?,
                _ => merged.push((id, g)),
            }
        }
        out.grads = merged;
        Ok(out)
    }
}

impl<'s, S: Scalar> Graph<S> for Tape<'s, S> {
    type Node = NodeId;

    fn input(&mut self, value: Matrix<S>) -> NodeId {
        self.push(Cow::Owned(value), Op::Input, false)
    }

    fn param(&mut self, id: ParamId) -> NodeId {
        let v = self.store.value(id);
        self.push(Cow::Borrowed(v), Op::Param(id), true)
    }

    fn value<'a>(&'a self, node: &'a NodeId) -> &'a Matrix<S> {
        self.val(*node)
    }

    fn matmul(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.binary(*a, *b, Matrix::matmul, Op::MatMul(*a, *b))
    }

    fn add(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.binary(*a, *b, Matrix::add, Op::Add(*a, *b))
    }

    fn sub(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.binary(*a, *b, Matrix::sub, Op::Sub(*a, *b))
    }

    fn hadamard(&mut self, a: &NodeId, b: &NodeId) -> Result<NodeId> {
        self.binary(*a, *b, Matrix::hadamard, Op::Hadamard(*a, *b))
    }

    fn add_row(&mut self, x: &NodeId, bias: &NodeId) -> Result<NodeId> {
        self.binary(*x, *bias, Matrix::add_row, Op::AddRow(*x, *bias))
    }

    fn scale(&mut self, x: &NodeId, factor: S) -> NodeId {
        let v = self.val(*x).scale(factor);
        let rg = self.rg(*x);
        self.push(Cow::Owned(v), Op::Scale(*x, factor), rg)
    }

    fn activation(&mut self, x: &NodeId, kind: Activation) -> NodeId {
        let v = self.val(*x).map(|e| kind.apply(e));
        let rg = self.rg(*x);
        self.push(Cow::Owned(v), Op::Activation(*x, kind), rg)
    }

    fn reduce_groups(&mut self, x: &NodeId, kind: Reduce, group: usize) -> Result<NodeId> {
        let v = reduce_groups(self.val(*x), kind, group)?;
        let rg = self.rg(*x);
        Ok(self.push(Cow::Owned(v), Op::Reduce(*x, kind, group), rg))
    }

    fn reshape(&mut self, x: &NodeId, rows: usize, cols: usize) -> Result<NodeId> {
        let v = self.val(*x).reshape(rows, cols)?;
        let rg = self.rg(*x);
        Ok(self.push(Cow::Owned(v), Op::Reshape(*x), rg))
    }

    fn sparse_matmul(&mut self, a: &Rc<CsrMatrix<S>>, x: &NodeId) -> Result<NodeId> {
        let v = a.mul_dense(self.val(*x))?;
        let rg = self.rg(*x);
        Ok(self.push(Cow::Owned(v), Op::SparseMatMul(Rc::clone(a), *x), rg))
    }
}
