use rand::Rng;

use crate::error::{Error, Result};

use super::{Matrix, Scalar};

#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub usize);

/// A trainable matrix with its gradient and RMSProp accumulator.
#[derive(Clone, Debug, PartialEq)]
pub struct Param<S> {
    pub name: String,
    pub value: Matrix<S>,
    pub grad: Matrix<S>,
    pub rms_state: Matrix<S>,
}

impl<S: Scalar> Param<S> {
    pub fn new(name: impl Into<String>, value: Matrix<S>) -> Self {
        let (r, c) = value.shape();
        Self {
            name: name.into(),
            value,
            grad: Matrix::zeros(r, c),
            rms_state: Matrix::zeros(r, c),
        }
    }
}

/// Named parameters of one model (online or target copy).
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamStore<S> {
    params: Vec<Param<S>>,
}

impl<S: Scalar> ParamStore<S> {
    pub fn new() -> Self {
        Self { params: Vec::new() }
    }

    pub fn add(&mut self, name: impl Into<String>, value: Matrix<S>) -> ParamId {
        self.params.push(Param::new(name, value));
        ParamId(self.params.len() - 1)
    }

    /// Glorot-uniform weight matrix.
    pub fn add_glorot(
        &mut self,
        name: impl Into<String>,
        fan_in: usize,
        fan_out: usize,
        rng: &mut impl Rng,
    ) -> ParamId {
        let bound = (6.0 / (fan_in + fan_out) as f64).sqrt();
        let w = Matrix::from_fn(fan_in, fan_out, |_, _| S::of(rng.gen_range(-bound..bound)));
        self.add(name, w)
    }

    pub fn len(&self) -> usize {
        self.params.len()
    }

    pub fn is_empty(&self) -> bool {
        self.params.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Param<S> {
        &self.params[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Param<S> {
        &mut self.params[id.0]
    }

    pub fn value(&self, id: ParamId) -> &Matrix<S> {
        &self.params[id.0].value
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.params.iter().position(|p| p.name == name).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &Param<S>> {
        self.params.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Param<S>> {
        self.params.iter_mut()
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.params.len()).map(ParamId)
    }

    pub fn num_scalars(&self) -> usize {
        self.params.iter().map(|p| p.value.len()).sum()
    }

    pub fn zero_grads(&mut self) {
        for p in &mut self.params {
            p.grad.data_mut().iter_mut().for_each(|g| *g = S::zero());
        }
    }

    /// Adds `grads` into the stored gradients.
    pub fn accumulate(&mut self, grads: &super::Gradients<S>) -> Result<()> {
        for (id, g) in grads.iter() {
            self.params[id.0].grad.add_assign(g)?;
        }
        Ok(())
    }

    /// Copies values from `other` (same layout); gradients and optimizer state are untouched.
    pub fn copy_values_from(&mut self, other: &Self) -> Result<()> {
        if self.params.len() != other.params.len() {
            return Err(Error::ShapeMismatch {
                op: "copy_values_from",
                left: (self.params.len(), 0),
                right: (other.params.len(), 0),
            });
        }
        for (dst, src) in self.params.iter_mut().zip(&other.params) {
            if dst.value.shape() != src.value.shape() {
                return Err(Error::ShapeMismatch {
                    op: "copy_values_from",
                    left: dst.value.shape(),
                    right: src.value.shape(),
                });
            }
            dst.value = src.value.clone();
        }
        Ok(())
    }

    pub fn values_equal(&self, other: &Self) -> bool {
        self.params.len() == other.params.len()
            && self
                .params
                .iter()
                .zip(&other.params)
                .all(|(a, b)| a.name == b.name && a.value == b.value)
    }
}
