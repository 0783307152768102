//! Dense row-major tensors and the numeric kernels every layer builds on.
//!
//! Tensors are generic over [`Real`] so the same kernels run in `f32` for
//! training and in `f64` for finite-difference gradient checks.

pub mod kernels;
pub mod lct1;

use std::fmt;

use crate::error::{Error, Result};

/// Scalar element type: `f32` for training, `f64` for gradient checking.
pub trait Real:
    num_traits::Float
    + num_traits::NumAssign
    + std::iter::Sum
    + Default
    + fmt::Debug
    + fmt::Display
    + Send
    + Sync
    + 'static
{
    const NAME: &'static str;

    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;
}

impl Real for f32 {
    const NAME: &'static str = "f32";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v as f32
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Real for f64 {
    const NAME: &'static str = "f64";

    #[inline]
    fn from_f64(v: f64) -> Self {
        v
    }

    #[inline]
    fn as_f64(self) -> f64 {
        self
    }
}

pub const MAX_RANK: usize = 4;

/// Tensor extents: rank 1 to 4, every dim at least 1.
///
/// Rank-4 tensors are `[batch, channels, height, width]`, rank-2 tensors
/// are `[batch, features]`.
#[derive(Clone, PartialEq, Eq, Hash)]
pub struct Shape(Vec<usize>);

impl Shape {
    pub fn new(dims: impl Into<Vec<usize>>) -> Result<Self> {
        let dims = dims.into();
        if dims.is_empty() || dims.len() > MAX_RANK {
            return Err(Error::Dimension(format!(
                "rank must be 1..={MAX_RANK}, got {} (dims {dims:?})",
                dims.len()
            )));
        }
        if let Some(i) = dims.iter().position(|&d| d == 0) {
            return Err(Error::Dimension(format!(
                "dim {i} of {dims:?} is zero; every dim must be >= 1"
            )));
        }
        Ok(Shape(dims))
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

    pub fn dim(&self, axis: usize) -> usize {
        self.0[axis]
    }

    /// `(n, c, h, w)` of a rank-4 shape.
    pub fn nchw(&self) -> Result<(usize, usize, usize, usize)> {
        match self.0[..] {
            [n, c, h, w] => Ok((n, c, h, w)),
            _ => Err(Error::Dimension(format!(
                "expected rank-4 [N, C, H, W], got {self}"
            ))),
        }
    }

    /// `(rows, cols)` of a rank-2 shape.
    pub fn matrix(&self) -> Result<(usize, usize)> {
        match self.0[..] {
            [r, c] => Ok((r, c)),
            _ => Err(Error::Dimension(format!(
                "expected rank-2 matrix, got {self}"
            ))),
        }
    }
}

impl fmt::Display for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        let parts: Vec<String> = self.0.iter().map(|d| d.to_string()).collect();
        write!(f, "[{}]", parts.join("x"))
    }
}

impl fmt::Debug for Shape {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        fmt::Display::fmt(self, f)
    }
}

/// Elementwise operations over one or two tensors.
#[derive(Debug, Clone, Copy)]
pub enum Elementwise<T> {
    Add,
    Sub,
    Mul,
    Scale(T),
    Relu,
}

/// Dense row-major tensor.
///
/// Operations take `&self` and return fresh tensors; the only mutating
/// entry points are the explicit `*_mut` accessors used by layers and the
/// optimizer.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Shape,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn from_vec(dims: impl Into<Vec<usize>>, data: Vec<T>) -> Result<Self> {
        let shape = Shape::new(dims)?;
        if shape.numel() != data.len() {
            return Err(Error::Dimension(format!(
                "shape {shape} needs {} elements, got {}",
                shape.numel(),
                data.len()
            )));
        }
        Ok(Tensor { shape, data })
    }

    pub fn full(dims: impl Into<Vec<usize>>, value: T) -> Result<Self> {
        let shape = Shape::new(dims)?;
        let data = vec![value; shape.numel()];
        Ok(Tensor { shape, data })
    }

    pub fn zeros(dims: impl Into<Vec<usize>>) -> Result<Self> {
        Self::full(dims, T::zero())
    }

    pub fn zeros_like(other: &Tensor<T>) -> Self {
        Tensor {
            shape: other.shape.clone(),
            data: vec![T::zero(); other.data.len()],
        }
    }

    pub fn identity(n: usize) -> Result<Self> {
        let mut t = Self::zeros(vec![n, n])?;
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        Ok(t)
    }

    pub(crate) fn from_parts(shape: Shape, data: Vec<T>) -> Self {
        debug_assert_eq!(shape.numel(), data.len());
        Tensor { shape, data }
    }

    pub fn shape(&self) -> &Shape {
        &self.shape
    }

    pub fn dims(&self) -> &[usize] {
        self.shape.dims()
    }

    pub fn numel(&self) -> usize {
        self.data.len()
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

    pub fn reshape(&self, dims: impl Into<Vec<usize>>) -> Result<Self> {
        Tensor::from_vec(dims, self.data.clone())
    }

    /// Element-for-element precision conversion.
    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn fill(&mut self, value: T) {
        self.data.iter_mut().for_each(|v| *v = value);
    }

    fn same_shape(&self, other: &Tensor<T>, op: &str) -> Result<()> {
        if self.shape != other.shape {
            return Err(Error::Dimension(format!(
                "{op}: shapes {} and {} differ",
                self.shape, other.shape
            )));
        }
        Ok(())
    }

    /// Applies `op` per element. Binary ops require `other` with an equal
    /// shape; `Scale` and `Relu` ignore it.
    pub fn elementwise(&self, op: Elementwise<T>, other: Option<&Tensor<T>>) -> Result<Self> {
        let binary = |f: fn(T, T) -> T, name: &str| -> Result<Self> {
            let other = other.ok_or_else(|| {
                Error::Dimension(format!("{name}: second operand missing"))
            })?;
            self.same_shape(other, name)?;
            let data = self
                .data
                .iter()
                .zip(&other.data)
                .map(|(&a, &b)| f(a, b))
                .collect();
            Ok(Tensor::from_parts(self.shape.clone(), data))
        };
        match op {
            Elementwise::Add => binary(|a, b| a + b, "add"),
            Elementwise::Sub => binary(|a, b| a - b, "sub"),
            Elementwise::Mul => binary(|a, b| a * b, "mul"),
            Elementwise::Scale(s) => Ok(self.map(|v| v * s)),
            Elementwise::Relu => Ok(self.map(|v| if v > T::zero() { v } else { T::zero() })),
        }
    }

    pub fn add(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(Elementwise::Add, Some(other))
    }

    pub fn sub(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(Elementwise::Sub, Some(other))
    }

    pub fn mul(&self, other: &Tensor<T>) -> Result<Self> {
        self.elementwise(Elementwise::Mul, Some(other))
    }

    pub fn scale(&self, s: T) -> Self {
        self.map(|v| v * s)
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Tensor::from_parts(self.shape.clone(), self.data.iter().map(|&v| f(v)).collect())
    }

    pub fn sum(&self) -> T {
        self.data.iter().copied().sum()
    }

    /// `[M, K] x [K, N] -> [M, N]`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Self> {
        let (m, k) = self.shape.matrix()?;
        let (k2, n) = other.shape.matrix()?;
        if k != k2 {
            return Err(Error::Dimension(format!(
                "matmul: inner dims differ, {} x {}",
                self.shape, other.shape
            )));
        }
        let mut out = vec![T::zero(); m * n];
        kernels::gemm_nn(m, k, n, &self.data, &other.data, &mut out);
        Tensor::from_vec(vec![m, n], out)
    }

    pub fn transpose(&self) -> Result<Self> {
        let (r, c) = self.shape.matrix()?;
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Tensor::from_vec(vec![c, r], out)
    }

    /// Row-wise argmax of a `[N, K]` matrix; ties go to the lowest index.
    pub fn argmax_rows(&self) -> Result<Vec<usize>> {
        let (_, k) = self.shape.matrix()?;
        Ok(self.data.chunks_exact(k).map(argmax).collect())
    }
}

/// Index of the maximum; first occurrence wins on ties.
pub(crate) fn argmax<T: PartialOrd + Copy>(row: &[T]) -> usize {
    let mut best = 0;
    for (i, &v) in row.iter().enumerate().skip(1) {
        if v > row[best] {
            best = i;
        }
    }
    best
}

impl<T: Real> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        const PREVIEW: usize = 8;
        write!(f, "Tensor<{}>{} ", T::NAME, self.shape)?;
        let head: Vec<String> = self.data.iter().take(PREVIEW).map(|v| format!("{v}")).collect();
        if self.data.len() > PREVIEW {
            write!(f, "[{}, ...]", head.join(", "))
        } else {
            write!(f, "[{}]", head.join(", "))
        }
    }
}
