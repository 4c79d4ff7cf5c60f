//! Minimal reverse-mode differentiable numerics.
//!
//! Dense row-major tensors of rank 0..=2, a tape of eager operations with
//! exact backward passes, an Adam-backed [`ParamStore`], and a central
//! finite-difference gradient checker. Everything is generic over [`Real`]
//! so the same graph code runs in `f32` for training and `f64` for
//! verification.

mod adam;
mod gradcheck;
mod tape;

pub use adam::{AdamConfig, Param, ParamStore};
pub use gradcheck::{grad_check, grad_check_multi};
pub use tape::{Grads, Tape, Var};

use num_traits::Float;
use thiserror::Error;

/// Scalar type usable by the tape: `f32` for training, `f64` for checking.
pub trait Real:
    Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::fmt::Debug
    + std::fmt::Display
    + Default
    + Send
    + Sync
    + 'static
{
    fn from_f64(v: f64) -> Self;
    fn into_f64(self) -> f64;
}

impl Real for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn into_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn into_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Error)]
pub enum TensorError {
    #[error("shape mismatch: expected {expected:?}, got {got:?} in {op}")]
    ShapeMismatch {
        op: &'static str,
        expected: Vec<usize>,
        got: Vec<usize>,
    },
    #[error("non-finite value encountered in {0}")]
    NonFinite(&'static str),
    #[error("contract violation: {0}")]
    Contract(String),
}

pub type Result<V> = std::result::Result<V, TensorError>;

/// Dense row-major tensor. Rank 0 is a scalar, rank 1 a vector,
/// rank 2 a matrix.
#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(TensorError::Contract(format!(
                "shape {:?} implies {} elements, data has {}",
                shape,
                n,
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn scalar(v: T) -> Self {
        Self {
            shape: vec![],
            data: vec![v],
        }
    }

    pub fn vector(data: Vec<T>) -> Self {
        Self {
            shape: vec![data.len()],
            data,
        }
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn zeros(shape: &[usize]) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn full(shape: &[usize], v: T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![v; n],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n: usize = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: (0..n).map(&mut f).collect(),
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
    }

    pub fn rank(&self) -> usize {
        self.shape.len()
    }

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    pub fn data(&self) -> &[T] {
        &self.data
    }

    pub fn data_mut(&mut self) -> &mut [T] {
        &mut self.data
    }

    /// Rows of the matrix view: rank-0 and rank-1 tensors count as one row.
    pub fn rows(&self) -> usize {
        if self.shape.len() == 2 {
            self.shape[0]
        } else {
            1
        }
    }

    /// Columns of the matrix view.
    pub fn cols(&self) -> usize {
        match self.shape.len() {
            2 => self.shape[1],
            1 => self.shape[0],
            _ => 1,
        }
    }

    pub fn at(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols() + c]
    }

    pub fn row(&self, r: usize) -> &[T] {
        let c = self.cols();
        &self.data[r * c..(r + 1) * c]
    }

    /// The single element of a rank-0 (or one-element) tensor.
    pub fn item(&self) -> T {
        debug_assert_eq!(self.data.len(), 1);
        self.data[0]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Cast element type, e.g. to run an `f32` graph in `f64` for checks.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.into_f64())).collect(),
        }
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }
}

/// Cross-entropy of an explicit probability vector against a one-hot target:
/// `-sum(y * ln p)`. The target must be one-hot; training code uses the
/// fused softmax path on the tape instead.
pub fn cross_entropy<T: Real>(predicted: &Tensor<T>, target_one_hot: &Tensor<T>) -> Result<T> {
    if predicted.shape() != target_one_hot.shape() {
        return Err(TensorError::ShapeMismatch {
            op: "cross_entropy",
            expected: predicted.shape().to_vec(),
            got: target_one_hot.shape().to_vec(),
        });
    }
    let mut hot = None;
    for (i, &y) in target_one_hot.data().iter().enumerate() {
        if y == T::one() {
            if hot.is_some() {
                return Err(TensorError::Contract("target is not one-hot".into()));
            }
            hot = Some(i);
        } else if y != T::zero() {
            return Err(TensorError::Contract("target is not one-hot".into()));
        }
    }
    let hot = hot.ok_or_else(|| TensorError::Contract("target is not one-hot".into()))?;
    let p = predicted.data()[hot];
    if p <= T::zero() {
        return Err(TensorError::NonFinite("cross_entropy"));
    }
    Ok(-p.ln())
}
