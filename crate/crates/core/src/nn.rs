//! Parameter bookkeeping shared by the generator, discriminator and classifier.

use crate::autodiff::{Element, Gradients, Tape, Tensor, Var};
use crate::error::{Error, Result};

/// Named trainable tensors of one network.
#[derive(Clone, Debug, Default, PartialEq)]
pub struct ParamSet<T: Element> {
    tensors: Vec<Tensor<T>>,
    names: Vec<String>,
}

impl<T: Element> ParamSet<T> {
    pub fn new() -> Self {
        Self {
            tensors: Vec::new(),
            names: Vec::new(),
        }
    }

    pub fn push(&mut self, name: impl Into<String>, mut t: Tensor<T>) -> usize {
        t.set_requires_grad(true);
        self.tensors.push(t);
        self.names.push(name.into());
        self.tensors.len() - 1
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, i: usize) -> &Tensor<T> {
        &self.tensors[i]
    }

    pub fn tensors(&self) -> &[Tensor<T>] {
        &self.tensors
    }

    pub fn tensors_mut(&mut self) -> &mut [Tensor<T>] {
        &mut self.tensors
    }

    pub fn names(&self) -> &[String] {
        &self.names
    }

    /// Total number of scalar parameters.
    pub fn count(&self) -> usize {
        self.tensors.iter().map(Tensor::numel).sum()
    }

    /// Records every tensor on `tape` as a tracked leaf.
    pub fn bind(&self, tape: &mut Tape<T>) -> Vec<Var> {
        self.tensors.iter().map(|t| tape.param(t)).collect()
    }

    /// Adds the gradients of `bound` (as returned by [`bind`](Self::bind)) into the tensors.
    pub fn attach(&mut self, grads: &Gradients<T>, bound: &[Var]) -> Result<()> {
        if bound.len() != self.tensors.len() {
            return Err(Error::Contract(format!(
                "{} bound variables for {} parameters",
                bound.len(),
                self.tensors.len()
            )));
        }
        for (t, &v) in self.tensors.iter_mut().zip(bound) {
            grads.attach(v, t)?;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    pub fn cast<U: Element>(&self) -> ParamSet<U> {
        ParamSet {
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
            names: self.names.clone(),
        }
    }

    /// Replaces values with same-shaped tensors in order (used when loading checkpoints).
    pub fn load(&mut self, values: Vec<Tensor<T>>) -> Result<()> {
        if values.len() != self.tensors.len() {
            return Err(Error::Data(format!(
                "expected {} parameter tensors, found {}",
                self.tensors.len(),
                values.len()
            )));
        }
        for (i, (dst, src)) in self.tensors.iter_mut().zip(values).enumerate() {
            if dst.shape() != src.shape() {
                return Err(Error::Data(format!(
                    "parameter {} has shape {:?}, checkpoint holds {:?}",
                    self.names[i],
                    dst.shape(),
                    src.shape()
                )));
            }
            *dst = src.with_grad();
        }
        Ok(())
    }
}
