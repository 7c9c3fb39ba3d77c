//! Dense tensors: flat row-major storage plus a shape. Gradients live in an
//! optional buffer of the same length so parameter containers can accumulate
//! across backward passes.

use crate::error::{SgaError, SgaResult};
use crate::scalar::Scalar;

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<S: Scalar> {
    shape: Vec<usize>,
    data: Vec<S>,
    grad: Option<Vec<S>>,
}

impl<S: Scalar> Tensor<S> {
    pub fn new(shape: Vec<usize>, data: Vec<S>) -> SgaResult<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(SgaError::contract(
                "tensor",
                format!("shape {:?} implies {} elements, data has {}", shape, n, data.len()),
            ));
        }
        Ok(Tensor { shape, data, grad: None })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n: usize = shape.iter().product();
        Tensor { shape, data: vec![S::zero(); n], grad: None }
    }

    pub fn scalar(v: S) -> Self {
        Tensor { shape: vec![1], data: vec![v], grad: None }
    }

    pub fn row(data: Vec<S>) -> Self {
        Tensor { shape: vec![1, data.len()], data, grad: None }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<S>) -> SgaResult<Self> {
        Tensor::new(vec![rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Rows of the 2-D interpretation: leading dim for rank >= 2, else 1.
    pub fn rows(&self) -> usize {
        if self.shape.len() >= 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of the 2-D interpretation: trailing dim, or total length for rank <= 1.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            0 | 1 => self.data.len(),
            _ => self.shape[self.shape.len() - 1],
        }
    }

    pub fn data(&self) -> &[S] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [S] {
        &mut self.data
    }

    pub fn grad(&self) -> Option<&[S]> {
        self.grad.as_deref()
    }

    /// Adds into the grad buffer, allocating zeros on first use.
    pub fn accumulate_grad(&mut self, delta: &[S]) -> SgaResult<()> {
        if delta.len() != self.data.len() {
            return Err(SgaError::contract(
                "tensor.accumulate_grad",
                format!("grad len {} != data len {}", delta.len(), self.data.len()),
            ));
        }
        let g = self.grad.get_or_insert_with(|| vec![S::zero(); delta.len()]);
        for (gi, di) in g.iter_mut().zip(delta) {
            *gi += *di;
        }
        Ok(())
    }

    pub fn zero_grad(&mut self) {
        self.grad = None;
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Converts element-wise; used by the f64 reference mode and checkpoint IO.
    pub fn cast<T: Scalar>(&self) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self
                .data
                .iter()
                .map(|v| T::from_f64(v.to_f64().expect("scalar to f64")).expect("f64 to scalar"))
                .collect(),
            grad: None,
        }
    }
}
