use super::Scalar;
use crate::error::{Error, Result};
use serde::{Deserialize, Serialize};

/// Dense n-dimensional buffer with an optional gradient of the same shape.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Option<Vec<T>>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, values: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("non-positive dimension in {shape:?}")));
        }
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {len} values, got {}",
                values.len()
            )));
        }
        Ok(Self {
            shape,
            values,
            grad: None,
        })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let len = shape.iter().product();
        Self {
            shape,
            values: vec![T::zero(); len],
            grad: None,
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    pub fn values(&self) -> &[T] {
        &self.values
    }

    pub fn values_mut(&mut self) -> &mut [T] {
        &mut self.values
    }

    pub fn grad(&self) -> Option<&[T]> {
        self.grad.as_deref()
    }

    pub fn grad_mut(&mut self) -> &mut Vec<T> {
        let len = self.values.len();
        self.grad.get_or_insert_with(|| vec![T::zero(); len])
    }

    pub fn clear_grad(&mut self) {
        self.grad = None;
    }

    pub fn is_finite(&self) -> bool {
        self.values.iter().all(|v| v.is_finite())
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum ParamKind {
    ConvWeight,
    BnGamma,
    BnBeta,
    LinearWeight,
    LinearBias,
}

impl ParamKind {
    /// Weights of conv and linear layers; the tensors pruning-style saliency
    /// scores are summed over.
    pub fn is_weight(self) -> bool {
        matches!(self, ParamKind::ConvWeight | ParamKind::LinearWeight)
    }
}

/// A trainable tensor plus its optimizer state.
#[derive(Debug, Clone)]
pub struct ParamGroup<T> {
    pub tensor: Tensor<T>,
    pub frozen: bool,
    pub kind: ParamKind,
    pub momentum_buffer: Vec<T>,
}

impl<T: Scalar> ParamGroup<T> {
    pub fn new(tensor: Tensor<T>, kind: ParamKind) -> Self {
        let momentum_buffer = vec![T::zero(); tensor.len()];
        Self {
            tensor,
            frozen: false,
            kind,
            momentum_buffer,
        }
    }

    pub fn len(&self) -> usize {
        self.tensor.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensor.is_empty()
    }
}
