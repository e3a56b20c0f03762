use alloc::string::{String, ToString};
use alloc::vec;
use alloc::vec::Vec;

use crate::{Error, Real, Result};

/// Dense row-major array with a gradient buffer of the same length.
#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    values: Vec<T>,
    grad: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        let len = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            values: vec![T::zero(); len],
            grad: vec![T::zero(); len],
        }
    }

    pub fn from_values(shape: &[usize], values: Vec<T>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != values.len() {
            return Err(Error::Shape {
                op: "tensor",
                left: (len, 1),
                right: (values.len(), 1),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            grad: vec![T::zero(); len],
            values,
        })
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    /// Matrix view: the last extent is the column count, the rest are folded
    /// into rows. Scalars and vectors are single rows.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.split_last() {
            None => (1, 1),
            Some((&cols, rest)) => (rest.iter().product(), cols),
        }
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

    pub fn grad(&self) -> &[T] {
        &self.grad
    }

    pub fn grad_mut(&mut self) -> &mut [T] {
        &mut self.grad
    }

    pub fn zero_grad(&mut self) {
        self.grad.iter_mut().for_each(|g| *g = T::zero());
    }

    pub fn sum_squares(&self) -> T {
        self.values.iter().map(|&v| v * v).sum()
    }

    /// Converts to another precision. Narrowing uses the platform's
    /// round-to-nearest-even `as` conversion.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        let values = self
            .values
            .iter()
            .map(|v| U::lit(v.to_f64().unwrap_or(f64::NAN)))
            .collect::<Vec<_>>();
        Tensor {
            shape: self.shape.clone(),
            grad: vec![U::zero(); values.len()],
            values,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Eq, Hash, PartialOrd, Ord)]
pub struct ParamId(pub(crate) usize);

impl ParamId {
    pub fn index(self) -> usize {
        self.0
    }
}

/// Named, ordered collection of learnable tensors.
#[derive(Debug, Clone, PartialEq, Default)]
pub struct ParamStore<T> {
    names: Vec<String>,
    tensors: Vec<Tensor<T>>,
}

impl<T: Real> ParamStore<T> {
    pub fn new() -> Self {
        ParamStore {
            names: Vec::new(),
            tensors: Vec::new(),
        }
    }

    pub fn add(&mut self, name: &str, tensor: Tensor<T>) -> ParamId {
        self.names.push(name.to_string());
        self.tensors.push(tensor);
        ParamId(self.tensors.len() - 1)
    }

    pub fn len(&self) -> usize {
        self.tensors.len()
    }

    pub fn is_empty(&self) -> bool {
        self.tensors.is_empty()
    }

    pub fn get(&self, id: ParamId) -> &Tensor<T> {
        &self.tensors[id.0]
    }

    pub fn get_mut(&mut self, id: ParamId) -> &mut Tensor<T> {
        &mut self.tensors[id.0]
    }

    pub fn name(&self, id: ParamId) -> &str {
        &self.names[id.0]
    }

    pub fn find(&self, name: &str) -> Option<ParamId> {
        self.names.iter().position(|n| n == name).map(ParamId)
    }

    pub fn ids(&self) -> impl Iterator<Item = ParamId> {
        (0..self.tensors.len()).map(ParamId)
    }

    pub fn iter(&self) -> impl Iterator<Item = (ParamId, &str, &Tensor<T>)> {
        self.names
            .iter()
            .zip(&self.tensors)
            .enumerate()
            .map(|(i, (n, t))| (ParamId(i), n.as_str(), t))
    }

    pub fn zero_grad(&mut self) {
        self.tensors.iter_mut().for_each(Tensor::zero_grad);
    }

    /// Adds `grads` into the stored gradient buffers.
    pub fn accumulate(&mut self, grads: &Gradients<T>) {
        for (tensor, g) in self.tensors.iter_mut().zip(&grads.per_param) {
            if let Some(g) = g {
                for (dst, &src) in tensor.grad.iter_mut().zip(g) {
                    *dst += src;
                }
            }
        }
    }

    /// Plain SGD: `θ ← θ − lr·∇θ`.
    pub fn sgd_step(&mut self, lr: T) {
        if lr == T::zero() {
            return;
        }
        for t in &mut self.tensors {
            for (v, &g) in t.values.iter_mut().zip(&t.grad) {
                *v -= lr * g;
            }
        }
    }

    pub fn cast<U: Real>(&self) -> ParamStore<U> {
        ParamStore {
            names: self.names.clone(),
            tensors: self.tensors.iter().map(Tensor::cast).collect(),
        }
    }

    /// Replaces a tensor's values, keeping its shape.
    pub fn set_values(&mut self, id: ParamId, values: &[T]) -> Result<()> {
        let t = &mut self.tensors[id.0];
        if t.values.len() != values.len() {
            return Err(Error::Shape {
                op: "set_values",
                left: t.rows_cols(),
                right: (values.len(), 1),
            });
        }
        t.values.copy_from_slice(values);
        Ok(())
    }
}

/// Gradients produced by one backward pass. Parameters the loss does not
/// depend on have no entry.
#[derive(Debug, Clone, PartialEq)]
pub struct Gradients<T> {
    pub(crate) per_param: Vec<Option<Vec<T>>>,
}

impl<T: Real> Gradients<T> {
    pub(crate) fn new(n: usize) -> Self {
        Gradients {
            per_param: vec![None; n],
        }
    }

    pub fn get(&self, id: ParamId) -> Option<&[T]> {
        self.per_param.get(id.0).and_then(|g| g.as_deref())
    }

    pub(crate) fn slot(&mut self, id: usize, len: usize) -> &mut [T] {
        self.per_param[id].get_or_insert_with(|| vec![T::zero(); len])
    }
}
