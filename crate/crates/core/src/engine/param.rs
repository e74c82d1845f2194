use serde::{Deserialize, Serialize};

use super::matrix::Matrix;
use crate::error::{Error, Result};

/// Handle to a tensor inside a [`ParamStore`].
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, PartialOrd, Ord, Serialize, Deserialize)]
pub struct ParamId(pub usize);

/// A learnable tensor with its gradient accumulator and Adam moments.
///
/// One- and two-dimensional shapes are supported; a vector of length `n` is
/// stored as a `1 × n` matrix.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ParameterTensor {
    pub name: String,
    pub shape: Vec<usize>,
    pub values: Matrix,
    pub grad: Matrix,
    pub m: Matrix,
    pub v: Matrix,
    pub step_count: u64,
}

impl ParameterTensor {
    pub fn new(name: impl Into<String>, shape: &[usize], values: Matrix) -> Result<Self> {
        let name = name.into();
        let (rows, cols) = match *shape {
            [n] => (1, n),
            [r, c] => (r, c),
            _ => {
                return Err(Error::Config(format!(
                    "parameter {name}: unsupported rank {}",
                    shape.len()
                )))
            }
        };
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Config(format!("parameter {name}: zero dimension in {shape:?}")));
        }
        if values.shape() != (rows, cols) {
            return Err(Error::Config(format!(
                "parameter {name}: values {:?} do not match shape {shape:?}",
                values.shape()
            )));
        }
        if !values.is_finite() {
            return Err(Error::NonFinite(format!("initial values of {name}")));
        }
        Ok(Self {
            name,
            shape: shape.to_vec(),
            grad: Matrix::zeros(rows, cols),
            m: Matrix::zeros(rows, cols),
            v: Matrix::zeros(rows, cols),
            values,
            step_count: 0,
        })
    }

    pub fn zero_grad(&mut self) {
        self.grad.fill(0.0);
    }

    pub fn len(&self) -> usize {
        self.values.len()
    }

    pub fn is_empty(&self) -> bool {
        self.values.is_empty()
    }

    /// Overwrites values and resets optimizer state.
    pub fn reset_values(&mut self, values: Matrix) -> Result<()> {
        if values.shape() != self.values.shape() {
            return Err(Error::Config(format!(
                "parameter {}: replacement {:?} does not match {:?}",
                self.name,
                values.shape(),
                self.values.shape()
            )));
        }
        self.values = values;
        self.grad.fill(0.0);
        self.m.fill(0.0);
        self.v.fill(0.0);
        self.step_count = 0;
        Ok(())
    }
}

/// Owns every learnable tensor of a model.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ParamStore {
    tensors: Vec<ParameterTensor>,
}

impl ParamStore {
    pub fn new() -> Self {
        Self::default()
    }

    pub fn add(&mut self, tensor: ParameterTensor) -> Result<ParamId> {
        if self.tensors.iter().any(|t| t.name == tensor.name) {
            return Err(Error::Config(format!("duplicate parameter name {}", tensor.name)));
        }
        self.tensors.push(tensor);
        Ok(ParamId(self.tensors.len() - 1))
    }

    pub fn get(&self, id: ParamId) -> &ParameterTensor {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut ParameterTensor {
        &mut self.tensors[id.0]
    }

    pub fn values(&self, id: ParamId) -> &Matrix {
        &self.tensors[id.0].values
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.tensors.iter().position(|t| t.name == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = &ParameterTensor> {
        self.tensors.iter()
    }

    pub fn iter_mut(&mut self) -> impl Iterator<Item = &mut ParameterTensor> {
        self.tensors.iter_mut()
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn zero_grads(&mut self) {
        self.tensors.iter_mut().for_each(ParameterTensor::zero_grad);
    }

    /// Name of the first tensor holding a non-finite value, if any.
    pub fn first_non_finite(&self) -> Option<&str> {
        self.tensors
            .iter()
            .find(|t| !t.values.is_finite())
            .map(|t| t.name.as_str())
    }
}
