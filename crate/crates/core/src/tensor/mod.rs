//! Dense row-major tensors with the arithmetic the trainer and solver need.
//!
//! Training runs in `f32`; gradient checks and projection oracles instantiate
//! the same code at `f64`. All reductions accumulate left-to-right in index
//! order so results are bit-reproducible run to run.

mod rng;

pub use rng::Rng;

use crate::error::{Error, Result};
use num_traits::Float;
use std::fmt;

/// Scalar types the tensor stack is generic over.
pub trait Element:
    Float + num_traits::NumAssign + fmt::Debug + fmt::Display + Default + Send + Sync + 'static
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
}

impl Element for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn to_f64(self) -> f64 {
        self as f64
    }
}

impl Element for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn to_f64(self) -> f64 {
        self
    }
}

/// Dense N-dimensional array, row-major, shape extents all positive.
#[derive(Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Element> fmt::Debug for Tensor<T> {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        write!(f, "Tensor{:?}", self.shape)?;
        if self.data.len() <= 16 {
            write!(f, " {:?}", self.data)?;
        }
        Ok(())
    }
}

fn check_shape(shape: &[usize]) -> Result<()> {
    if shape.is_empty() || shape.iter().any(|&e| e == 0) {
        return Err(Error::InvalidInput(format!(
            "tensor shape must have positive extents, got {shape:?}"
        )));
    }
    Ok(())
}

impl<T: Element> Tensor<T> {
    pub fn zeros(shape: &[usize]) -> Self {
        check_shape(shape).expect("zeros: bad shape");
        let n = shape.iter().product();
        Tensor {
            shape: shape.to_vec(),
            data: vec![T::zero(); n],
        }
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        let mut t = Self::zeros(shape);
        t.data.fill(value);
        t
    }

    pub fn from_vec(shape: &[usize], data: Vec<T>) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != data.len() {
            return Err(Error::ShapeMismatch {
                context: "from_vec",
                expected: vec![n],
                actual: vec![data.len()],
            });
        }
        let t = Tensor {
            shape: shape.to_vec(),
            data,
        };
        t.validate_finite("from_vec")?;
        Ok(t)
    }

    /// 2-D convenience constructor used all over the tests.
    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::from_vec(&[rows, cols], data)
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    pub fn rows(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[0]
    }

    pub fn cols(&self) -> usize {
        debug_assert_eq!(self.shape.len(), 2);
        self.shape[1]
    }

    pub fn is_matrix(&self) -> bool {
        self.shape.len() == 2
    }

    /// Same data, new shape; element count must match.
    pub fn reshape(&self, shape: &[usize]) -> Result<Self> {
        check_shape(shape)?;
        let n: usize = shape.iter().product();
        if n != self.data.len() {
            return Err(Error::ShapeMismatch {
                context: "reshape",
                expected: self.shape.clone(),
                actual: shape.to_vec(),
            });
        }
        Ok(Tensor {
            shape: shape.to_vec(),
            data: self.data.clone(),
        })
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn validate_finite(&self, context: &str) -> Result<()> {
        if self.all_finite() {
            Ok(())
        } else {
            Err(Error::Numeric {
                context: context.to_string(),
                detail: "tensor contains NaN or Inf".to_string(),
            })
        }
    }

    pub fn count_nonzero(&self) -> usize {
        self.data.iter().filter(|v| !v.is_zero()).count()
    }

    /// Matrix product of two 2-D tensors. For fixed (i, j) the contraction
    /// accumulates over k in increasing order, so the result is bit-identical
    /// to the naive triple loop while still vectorizing over j.
    pub fn matmul(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.is_matrix() || !rhs.is_matrix() || self.cols() != rhs.rows() {
            return Err(Error::ShapeMismatch {
                context: "matmul",
                expected: self.shape.clone(),
                actual: rhs.shape.clone(),
            });
        }
        let (m, n, p) = (self.rows(), self.cols(), rhs.cols());
        let mut out = vec![T::zero(); m * p];
        for i in 0..m {
            let a_row = &self.data[i * n..(i + 1) * n];
            let c_row = &mut out[i * p..(i + 1) * p];
            for (k, &aik) in a_row.iter().enumerate() {
                let b_row = &rhs.data[k * p..(k + 1) * p];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c = *c + aik * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, p],
            data: out,
        })
    }

    /// `self * rhs^T` without materializing the transpose: (m,n)·(p,n) -> (m,p).
    pub fn matmul_transpose_b(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.is_matrix() || !rhs.is_matrix() || self.cols() != rhs.cols() {
            return Err(Error::ShapeMismatch {
                context: "matmul_transpose_b",
                expected: self.shape.clone(),
                actual: rhs.shape.clone(),
            });
        }
        let (m, n, p) = (self.rows(), self.cols(), rhs.rows());
        let mut out = vec![T::zero(); m * p];
        for i in 0..m {
            let a_row = &self.data[i * n..(i + 1) * n];
            let c_row = &mut out[i * p..(i + 1) * p];
            for (j, c) in c_row.iter_mut().enumerate() {
                let b_row = &rhs.data[j * n..(j + 1) * n];
                let mut acc = T::zero();
                for (&a, &b) in a_row.iter().zip(b_row) {
                    acc = acc + a * b;
                }
                *c = acc;
            }
        }
        Ok(Tensor {
            shape: vec![m, p],
            data: out,
        })
    }

    /// `self^T * rhs` without materializing the transpose: (n,m)·(n,p) -> (m,p).
    pub fn matmul_transpose_a(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        if !self.is_matrix() || !rhs.is_matrix() || self.rows() != rhs.rows() {
            return Err(Error::ShapeMismatch {
                context: "matmul_transpose_a",
                expected: self.shape.clone(),
                actual: rhs.shape.clone(),
            });
        }
        let (n, m, p) = (self.rows(), self.cols(), rhs.cols());
        let mut out = vec![T::zero(); m * p];
        for k in 0..n {
            let a_row = &self.data[k * m..(k + 1) * m];
            let b_row = &rhs.data[k * p..(k + 1) * p];
            for (i, &aki) in a_row.iter().enumerate() {
                let c_row = &mut out[i * p..(i + 1) * p];
                for (c, &b) in c_row.iter_mut().zip(b_row) {
                    *c = *c + aki * b;
                }
            }
        }
        Ok(Tensor {
            shape: vec![m, p],
            data: out,
        })
    }

    pub fn transpose(&self) -> Tensor<T> {
        debug_assert!(self.is_matrix());
        let (m, n) = (self.rows(), self.cols());
        let mut out = vec![T::zero(); m * n];
        for i in 0..m {
            for j in 0..n {
                out[j * m + i] = self.data[i * n + j];
            }
        }
        Tensor {
            shape: vec![n, m],
            data: out,
        }
    }

    /// Entrywise max(0, x); shape preserved; input untouched.
    pub fn relu(&self) -> Tensor<T> {
        let data = self
            .data
            .iter()
            .map(|&v| if v > T::zero() { v } else { T::zero() })
            .collect();
        Tensor {
            shape: self.shape.clone(),
            data,
        }
    }

    /// Sum of squared entries, accumulated in index order.
    pub fn frobenius_norm_sq(&self) -> T {
        let mut acc = T::zero();
        for &v in &self.data {
            acc = acc + v * v;
        }
        acc
    }

    pub fn add(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(rhs, "add", |a, b| a + b)
    }

    pub fn sub(&self, rhs: &Tensor<T>) -> Result<Tensor<T>> {
        self.zip_with(rhs, "sub", |a, b| a - b)
    }

    pub fn scale(&self, c: T) -> Tensor<T> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| v * c).collect(),
        }
    }

    fn zip_with(
        &self,
        rhs: &Tensor<T>,
        context: &'static str,
        f: impl Fn(T, T) -> T,
    ) -> Result<Tensor<T>> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                context,
                expected: self.shape.clone(),
                actual: rhs.shape.clone(),
            });
        }
        let data = self
            .data
            .iter()
            .zip(&rhs.data)
            .map(|(&a, &b)| f(a, b))
            .collect();
        Ok(Tensor {
            shape: self.shape.clone(),
            data,
        })
    }

    /// In-place `self += c * rhs`; shapes must match.
    pub fn add_scaled_in_place(&mut self, rhs: &Tensor<T>, c: T) -> Result<()> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                context: "add_scaled_in_place",
                expected: self.shape.clone(),
                actual: rhs.shape.clone(),
            });
        }
        for (a, &b) in self.data.iter_mut().zip(&rhs.data) {
            *a += c * b;
        }
        Ok(())
    }

    /// Squared Frobenius distance `||self - rhs||_F^2`.
    pub fn distance_sq(&self, rhs: &Tensor<T>) -> Result<T> {
        if self.shape != rhs.shape {
            return Err(Error::ShapeMismatch {
                context: "distance_sq",
                expected: self.shape.clone(),
                actual: rhs.shape.clone(),
            });
        }
        let mut acc = T::zero();
        for (&a, &b) in self.data.iter().zip(&rhs.data) {
            let d = a - b;
            acc = acc + d * d;
        }
        Ok(acc)
    }

    /// Element-type conversion (f32 <-> f64).
    pub fn cast<U: Element>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| U::from_f64(v.to_f64())).collect(),
        }
    }
}
