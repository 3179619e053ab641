use std::fmt;

use crate::error::{Result, TensorError};
use crate::float::Float;

/// Tensor extents: one to four positive axes, read as `(N, C, H, W)` with
/// missing leading axes treated as 1.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: &[usize]) -> Result<Self> {
        if dims.is_empty() || dims.len() > 4 {
            return Err(TensorError::config(
                "shape",
                format!("expected 1 to 4 axes, got {}", dims.len()),
            ));
        }
        if let Some(pos) = dims.iter().position(|&d| d == 0) {
            return Err(TensorError::config(
                "shape",
                format!("axis {pos} has zero extent"),
            ));
        }
        Ok(Shape(dims.to_vec()))
    }

    pub fn dims(&self) -> &[usize] {
        &self.0
    }

    pub fn rank(&self) -> usize {
        self.0.len()
    }

    pub fn numel(&self) -> usize {
        self.0.iter().product()
    }

    /// `(N, C, H, W)` with missing leading axes filled with 1.
    pub fn nchw(&self) -> [usize; 4] {
        let mut out = [1; 4];
        let off = 4 - self.0.len();
        out[off..].copy_from_slice(&self.0);
        out
    }

    pub fn is_scalar(&self) -> bool {
        self.numel() == 1
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "{:?}", self.0)
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "{}", parts.join("x"))
    }
}

/// Dense row-major array, channel-major within each sample.
#[derive(Clone, PartialEq)]
pub struct Tensor<F = f32> {
    shape: Shape,
    data: Vec<F>,
}

impl<F: Float> Tensor<F> {
    pub fn from_vec(dims: &[usize], data: Vec<F>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(TensorError::shape(
                "tensor",
                "data",
                shape.numel(),
                data.len(),
            ));
        }
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: &[usize]) -> Result<Self> {
        Self::full(dims, F::zero())
    }

    pub fn ones(dims: &[usize]) -> Result<Self> {
        Self::full(dims, F::one())
    }

    pub fn full(dims: &[usize], value: F) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn scalar(value: F) -> Self {
        Tensor {
            shape: Shape(vec![1]),
            data: vec![value],
        }
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<F>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub(crate) fn zeros_like_shape(shape: &Shape) -> Self {
        Tensor {
            shape: shape.clone(),
            data: vec![F::zero(); shape.numel()],
        }
    }

    pub fn zeros_like(&self) -> Self {
        Self::zeros_like_shape(&self.shape)
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn nchw(&self) -> [usize; 4] {
        self.shape.nchw()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[F] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [F] {
        &mut self.data
    }

    pub fn into_vec(self) -> Vec<F> {
        self.data
    }

    /// The single value of a one-element tensor.
    pub fn item(&self) -> Result<F> {
        if self.data.len() != 1 {
            return Err(TensorError::Contract(format!(
                "item() on tensor of extents {}",
                self.shape
            )));
        }
        Ok(self.data[0])
    }

    pub fn reshape(&self, dims: &[usize]) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != self.data.len() {
            return Err(TensorError::shape(
                "reshape",
                "numel",
                self.data.len(),
                shape.numel(),
            ));
        }
        Ok(Tensor {
            shape,
            data: self.data.clone(),
        })
    }

    pub fn map(&self, f: impl Fn(F) -> F) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    /// Converts the element type (used to re-run a computation in `f64`).
    pub fn cast<G: Float>(&self) -> Tensor<G> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| G::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Errors unless every value is finite.
    pub fn check_finite(&self, what: &str) -> Result<()> {
        match self.data.iter().position(|v| !v.is_finite()) {
            None => Ok(()),
            Some(i) => Err(TensorError::Contract(format!(
                "{what}: non-finite value {} at flat index {i}",
                self.data[i]
            ))),
        }
    }

    pub fn sum(&self) -> F {
        self.data.iter().copied().sum()
    }

    pub fn dot(&self, other: &Self) -> Result<F> {
        if self.data.len() != other.data.len() {
            return Err(TensorError::shape(
                "dot",
                "numel",
                self.data.len(),
                other.data.len(),
            ));
        }
        Ok(self
            .data
            .iter()
            .zip(&other.data)
            .map(|(&a, &b)| a * b)
            .sum())
    }

    pub(crate) fn add_assign(&mut self, other: &Self) {
        debug_assert_eq!(self.data.len(), other.data.len());
        for (a, &b) in self.data.iter_mut().zip(&other.data) {
            *a += b;
        }
    }

    /// Samples `[start, start + len)` along the batch axis.
    pub fn narrow_batch(&self, start: usize, len: usize) -> Result<Self> {
        let [n, c, h, w] = self.nchw();
        if len == 0 || start + len > n {
            return Err(TensorError::config(
                "narrow_batch",
                format!("range {start}..{} outside batch of {n}", start + len),
            ));
        }
        let per = c * h * w;
        let mut dims = self.dims().to_vec();
        let batch_axis = dims.len().saturating_sub(4);
        if dims.len() == 4 {
            dims[batch_axis] = len;
        } else {
            dims = vec![len, c, h, w];
        }
        Ok(Tensor {
            shape: Shape(dims),
            data: self.data[start * per..(start + len) * per].to_vec(),
        })
    }

    /// Concatenates 4-axis tensors along the batch axis.
    pub fn concat_batch(parts: &[&Self]) -> Result<Self> {
        let first = parts
            .first()
            .ok_or_else(|| TensorError::config("concat_batch", "no inputs"))?;
        let [_, c, h, w] = first.nchw();
        let mut n = 0;
        let mut data = Vec::new();
        for p in parts {
            let [pn, pc, ph, pw] = p.nchw();
            if pc != c {
                return Err(TensorError::shape("concat_batch", "C", c, pc));
            }
            if ph != h {
                return Err(TensorError::shape("concat_batch", "H", h, ph));
            }
            if pw != w {
                return Err(TensorError::shape("concat_batch", "W", w, pw));
            }
            n += pn;
            data.extend_from_slice(&p.data);
        }
        Ok(Tensor {
            shape: Shape(vec![n, c, h, w]),
            data,
        })
    }
}

impl<F: fmt::Debug> fmt::Debug for Tensor<F> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const SHOWN: usize = 8;
        write!(f, "Tensor<{}>[{}] ", std::any::type_name::<F>(), self.shape)?;
        let head: Vec<String> = self
            .data
            .iter()
            .take(SHOWN)
            .map(|v| format!("{v:?}"))
            .collect();
        if self.data.len() > SHOWN {
            write!(f, "[{}, ...]", head.join(", "))
        } else {
            write!(f, "[{}]", head.join(", "))
        }
    }
}
