//! Dense linear algebra, reverse-mode differentiation and RMSProp, generic
//! over the scalar type. Everything the networks in this crate need and
//! nothing more.

mod checkpoint;
mod gradcheck;
mod graph;
mod matrix;
mod optim;
mod param;
mod scalar;
mod sparse;

pub use checkpoint::{Checkpoint, MAGIC as CHECKPOINT_MAGIC, VERSION as CHECKPOINT_VERSION};
pub use gradcheck::{grad_check, grad_check_against, GradCheckReport, RELATIVE_FLOOR};
pub use graph::{Eager, Gradients, Graph, NodeId, Tape};
pub use matrix::{Activation, Matrix, Reduce};
pub use optim::RmsProp;
pub use param::{Param, ParamId, ParamStore};
pub use scalar::Scalar;
pub use sparse::CsrMatrix;

/// A fully connected layer `x·W + b`.
#[derive(Clone, Copy, Debug, PartialEq, Eq)]
pub struct Linear {
    pub weight: ParamId,
    pub bias: ParamId,
    pub fan_in: usize,
    pub fan_out: usize,
}

impl Linear {
    pub fn new<S: Scalar>(
        store: &mut ParamStore<S>,
        name: &str,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl rand::Rng,
    ) -> Self {
        let weight = store.add_glorot(format!("{name}.weight"), fan_in, fan_out, rng);
        let bias = store.add(format!("{name}.bias"), Matrix::zeros(1, fan_out));
        Self {
            weight,
            bias,
            fan_in,
            fan_out,
        }
    }

    pub fn forward<S: Scalar, G: Graph<S>>(&self, g: &mut G, x: &G::Node) -> crate::error::Result<G::Node> {
        let w = g.param(self.weight);
        let b = g.param(self.bias);
        let h = g.matmul(x, &w)?;
        g.add_row(&h, &b)
    }
}
