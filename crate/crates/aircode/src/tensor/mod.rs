//! Dense f64 tensors and a tape-based reverse-mode differentiation engine.
//!
//! Everything the encoder and losses need is expressed through the op set in
//! [`tape`]: matrix products, bias adds, elementwise arithmetic, ReLU,
//! row-softmax, L2 normalization, concatenation, slicing, and reductions.
//! Values are recorded on a [`Tape`] in execution order, which is a valid
//! topological order, so one reverse sweep visits every node after all of its
//! consumers and accumulates exact vector-Jacobian products.

mod gemm;
mod tape;

pub use tape::{Gradients, Tape, Var};

use crate::error::{Error, Result};
use std::sync::Arc;

/// Division guard used by L2 normalization: `x / max(||x||, EPS_L2)`.
pub const EPS_L2: f64 = 1e-12;

/// Row-major f64 buffer with a shape.
///
/// The tape operates on rank-2 tensors; scalars are `[1 x 1]` and row vectors
/// `[1 x n]`. The buffer sits behind an `Arc` so clones are reference bumps;
/// binding a large parameter set onto a tape copies nothing. [`data_mut`]
/// copies on write only while the buffer is shared.
///
/// [`data_mut`]: Tensor::data_mut
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor {
    shape: Vec<usize>,
    data: Arc<Vec<f64>>,
}

impl Tensor {
    /// Builds a tensor from a shape and a matching row-major buffer.
    pub fn new(shape: Vec<usize>, data: Vec<f64>) -> Result<Self> {
        let expect: usize = shape.iter().product();
        if expect != data.len() {
            return Err(Error::contract(format!(
                "tensor shape {:?} wants {} elements, got {}",
                shape,
                expect,
                data.len()
            )));
        }
        Ok(Tensor {
            shape,
            data: Arc::new(data),
        })
    }

    /// `rows x cols` matrix from a row-major buffer.
    pub fn matrix(rows: usize, cols: usize, data: Vec<f64>) -> Result<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn zeros(rows: usize, cols: usize) -> Self {
        Tensor {
            shape: vec![rows, cols],
            data: Arc::new(vec![0.0; rows * cols]),
        }
    }

    /// `[1 x 1]` tensor holding one value.
    pub fn scalar(value: f64) -> Self {
        Tensor {
            shape: vec![1, 1],
            data: Arc::new(vec![value]),
        }
    }

    /// `[1 x n]` row vector.
    pub fn row(data: Vec<f64>) -> Self {
        Tensor {
            shape: vec![1, data.len()],
            data: Arc::new(data),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Interprets the tensor as a matrix; errors on any other rank.
    pub fn dims2(&self) -> Result<(usize, usize)> {
        match self.shape.as_slice() {
            &[r, c] => Ok((r, c)),
            other => Err(Error::contract(format!(
                "expected a rank-2 tensor, got shape {other:?}"
            ))),
        }
    }

    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        self.shape[1]
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[f64] {
        &self.data
    }

    /// Mutable access; copies the buffer first if it is shared with a clone.
    pub fn data_mut(&mut self) -> &mut [f64] {
        Arc::<Vec<f64>>::make_mut(&mut self.data).as_mut_slice()
    }

    /// Value at `(row, col)`; rank-2 only.
    pub fn at(&self, row: usize, col: usize) -> f64 {
        debug_assert_eq!(self.shape.len(), 2);
        self.data[row * self.shape[1] + col]
    }

    /// The single element of a `[1 x 1]` tensor.
    pub fn item(&self) -> Result<f64> {
        if self.data.len() == 1 {
            Ok(self.data[0])
        } else {
            Err(Error::contract(format!(
                "expected a scalar tensor, got shape {:?}",
                self.shape
            )))
        }
    }

    pub fn iter(&self) -> std::slice::Iter<'_, f64> {
        self.data.iter()
    }

    /// True when every element is finite.
    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn new_checks_element_count() {
        let err = Tensor::new(vec![2, 3], vec![0.0; 5]).unwrap_err();
        let msg = err.to_string();
        assert!(msg.contains("[2, 3]"), "{msg}");
        assert!(msg.contains('6') && msg.contains('5'), "{msg}");
    }

    #[test]
    fn scalar_and_row_shapes() {
        assert_eq!(Tensor::scalar(3.0).shape(), &[1, 1]);
        assert_eq!(Tensor::row(vec![1.0, 2.0]).shape(), &[1, 2]);
        assert_eq!(Tensor::scalar(3.0).item().unwrap(), 3.0);
    }

    #[test]
    fn clones_share_until_written() {
        let a = Tensor::matrix(1, 2, vec![1.0, 2.0]).unwrap();
        let mut b = a.clone();
        b.data_mut()[0] = 9.0;
        assert_eq!(a.data(), &[1.0, 2.0]);
        assert_eq!(b.data(), &[9.0, 2.0]);
    }

    #[test]
    fn at_indexes_row_major() {
        let t = Tensor::matrix(2, 3, vec![0.0, 1.0, 2.0, 3.0, 4.0, 5.0]).unwrap();
        assert_eq!(t.at(0, 2), 2.0);
        assert_eq!(t.at(1, 0), 3.0);
    }
}
