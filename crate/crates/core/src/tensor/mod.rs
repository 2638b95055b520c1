//! Dense row-major tensors, reverse-mode differentiation and the handful of
//! operations the network and the data pipeline are built from.
//!
//! Two precisions are supported through [`Real`]: `f32` for training and
//! inference, `f64` for finite-difference gradient checks.

mod init;
mod kernels;
mod optim;
mod param;
mod resample;
mod tape;

use std::fmt;

use thiserror::Error;

pub use init::{orthogonal_conv_weight, orthogonal_init};
pub use kernels::{
    avgpool, concat_channels, conv2d, maxpool2, mse_loss, pixel_shuffle, pixel_unshuffle, relu,
};
pub use optim::sgd_step;
pub use param::{ParamGrads, ParamId, ParamStore, Parameter};
pub use resample::{bicubic_resize, cubic_kernel, flip_horizontal};
pub use tape::{Tape, Var};

/// Floating point element type of a [`Tensor`].
pub trait Real:
    num_traits::Float
    + std::ops::AddAssign
    + std::ops::SubAssign
    + std::ops::MulAssign
    + std::iter::Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    fn cst(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    #[inline]
    fn cst(v: f64) -> Self {
        v as f32
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    #[inline]
    fn cst(v: f64) -> Self {
        v
    }
    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

#[derive(Debug, Clone, PartialEq, Error)]
pub enum TensorError {
    #[error("{op}: {dim} mismatch: expected {expected}, found {found}")]
    ShapeMismatch {
        op: &'static str,
        dim: String,
        expected: usize,
        found: usize,
    },
    #[error("{op}: expected rank {expected}, found shape {found:?}")]
    Rank {
        op: &'static str,
        expected: usize,
        found: Vec<usize>,
    },
    #[error("{op}: {msg}")]
    Invalid { op: &'static str, msg: String },
    #[error("data length {len} does not match shape {shape:?}")]
    DataLength { len: usize, shape: Vec<usize> },
    #[error("backward requires a scalar loss, got shape {0:?}")]
    NonScalarLoss(Vec<usize>),
    #[error("non-finite value in {0}")]
    NonFinite(String),
    #[error("duplicate parameter name {0:?}")]
    DuplicateParameter(String),
    #[error("unknown parameter {0:?}")]
    UnknownParameter(String),
}

pub type Result<T, E = TensorError> = std::result::Result<T, E>;

/// Dense row-major array.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: &[usize], data: Vec<T>) -> Result<Self> {
        if shape.iter().product::<usize>() != data.len() || shape.contains(&0) {
            return Err(TensorError::DataLength {
                len: data.len(),
                shape: shape.to_vec(),
            });
        }
        Ok(Self {
            shape: shape.to_vec(),
            data,
        })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::full(shape, T::zero())
    }

    pub fn full(shape: &[usize], value: T) -> Self {
        assert!(!shape.contains(&0), "zero-sized dimension in {shape:?}");
        Self {
            shape: shape.to_vec(),
            data: vec![value; shape.iter().product()],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn from_fn(shape: &[usize], mut f: impl FnMut(usize) -> T) -> Self {
        let n = shape.iter().product();
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

    pub fn into_data(self) -> Vec<T> {
        self.data
    }

    /// Value of a single-element tensor.
    pub fn item(&self) -> T {
        assert_eq!(self.data.len(), 1, "item() on tensor of shape {:?}", self.shape);
        self.data[0]
    }

    pub fn reshape(mut self, shape: &[usize]) -> Result<Self> {
        if shape.iter().product::<usize>() != self.data.len() {
            return Err(TensorError::DataLength {
                len: self.data.len(),
                shape: shape.to_vec(),
            });
        }
        self.shape = shape.to_vec();
        Ok(self)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::cst(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// `(C, H, W)` of a rank-3 tensor.
    pub fn chw(&self, op: &'static str) -> Result<(usize, usize, usize)> {
        match *self.shape.as_slice() {
            [c, h, w] => Ok((c, h, w)),
            _ => Err(TensorError::Rank {
                op,
                expected: 3,
                found: self.shape.clone(),
            }),
        }
    }

    /// Channel `c` of a rank-3 tensor as a flat `H*W` slice.
    pub fn channel(&self, c: usize) -> &[T] {
        let plane: usize = self.shape[1..].iter().product();
        &self.data[c * plane..(c + 1) * plane]
    }

    pub fn channel_mut(&mut self, c: usize) -> &mut [T] {
        let plane: usize = self.shape[1..].iter().product();
        &mut self.data[c * plane..(c + 1) * plane]
    }

    /// Element at `[c, y, x]` of a rank-3 tensor.
    #[inline]
    pub fn at3(&self, c: usize, y: usize, x: usize) -> T {
        let (h, w) = (self.shape[1], self.shape[2]);
        self.data[(c * h + y) * w + x]
    }

    /// Keeps channels `range` of a rank-3 tensor.
    pub fn narrow_channels(&self, start: usize, count: usize) -> Result<Self> {
        let (c, h, w) = self.chw("narrow_channels")?;
        if start + count > c || count == 0 {
            return Err(TensorError::Invalid {
                op: "narrow_channels",
                msg: format!("channels {start}..{} out of range for {c}", start + count),
            });
        }
        let plane = h * w;
        Ok(Self {
            shape: vec![count, h, w],
            data: self.data[start * plane..(start + count) * plane].to_vec(),
        })
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    pub fn max_abs_diff(&self, other: &Self) -> T {
        self.data
            .iter()
            .zip(&other.data)
            .fold(T::zero(), |m, (&a, &b)| m.max((a - b).abs()))
    }
}
