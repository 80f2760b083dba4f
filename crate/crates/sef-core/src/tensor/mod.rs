//! Dense row-major `f64` tensors and the reverse-mode autodiff graph the
//! rest of the crate is built on.
//!
//! [`Tensor`] is a plain value: a shape plus contiguous data. Differentiable
//! computation happens on a [`Graph`], an append-only arena of nodes; every
//! operation records its parents so [`Graph::backward`] can sweep the nodes
//! in reverse topological order and accumulate gradients.

mod gradcheck;
mod graph;
pub(crate) mod kernels;

pub use gradcheck::{finite_diff_check, GradCheckReport, ParamCheck};
pub use graph::{Graph, NodeId};

use crate::error::{Error, Result};

/// Dense row-major tensor of 64-bit floats.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Vec<f64>,
}

impl Tensor {
    /// Builds a tensor from a shape and exactly `product(shape)` values.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::InvalidOperand(format!(
                "zero-sized dimension in shape {shape:?}"
            )));
        }
        let product: usize = shape.iter().product();
        if data.len() != product {
            return Err(Error::LengthMismatch {
                values: data.len(),
                product,
            });
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![0.0; n],
        }
    }

    pub fn full(shape: Vec<usize>, value: f64) -> Self {
        let n = shape.iter().product();
        Tensor {
            shape,
            data: vec![value; n],
        }
    }

    /// Single-element tensor of shape `[1]`.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [f64] {
        &mut self.data
    }

    /// Value of a scalar (single-element) tensor.
    pub fn item(&self) -> Result<f64> {
        if self.numel() != 1 {
            return Err(Error::InvalidOperand(format!(
                "expected a scalar, got shape {:?}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }
}
