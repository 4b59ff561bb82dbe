use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use super::NnError;

/// Ordered collection of trainable tensors.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: Vec<Matrix>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    /// Adds a tensor and returns its id.
    pub fn push(&mut self, m: Matrix) -> usize {
        self.tensors.push(m);
        self.tensors.len() - 1
    }

    pub fn get(&self, id: usize) -> &Matrix {
        &self.tensors[id]
    }

    pub fn get_mut(&mut self, id: usize) -> &mut Matrix {
        &mut self.tensors[id]
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut Matrix> {
        self.tensors.iter_mut()
    }

    /// Total number of scalar parameters.
    pub fn scalar_count(&self) -> usize {
        self.tensors.iter().map(Matrix::len).sum()
    }

    pub fn is_finite(&self) -> bool {
        self.tensors.iter().all(Matrix::is_finite)
    }
}

/// Gradients aligned one-to-one with a [`ParamStore`].
#[derive(Clone, Debug, PartialEq)]
pub struct Gradients {
    grads: Vec<Matrix>,
}

impl Gradients {
    pub fn zeros_like(store: &ParamStore) -> Self {
        Self {
            grads: store
                .iter()
                .map(|m| Matrix::zeros(m.rows(), m.cols()))
                .collect(),
        }
    }

    pub fn get(&self, id: usize) -> &Matrix {
        &self.grads[id]
    }

    pub fn len(&self) -> usize {
        self.grads.len()
    }

    pub fn is_empty(&self) -> bool {
        self.grads.is_empty()
    }

    pub fn iter(&self) -> impl Iterator<Item = &Matrix> {
        self.grads.iter()
    }

    pub(crate) fn accumulate(&mut self, id: usize, g: &Matrix) -> Result<(), NnError> {
        let slot = self
            .grads
            .get_mut(id)
            .ok_or_else(|| NnError::Usage(format!("unknown parameter id {id}")))?;
        if slot.shape() != g.shape() {
            return Err(NnError::Shape(format!(
                "gradient for parameter {id}: {:?} vs {:?}",
                g.shape(),
                slot.shape()
            )));
        }
        slot.add_assign(g);
        Ok(())
    }
}
