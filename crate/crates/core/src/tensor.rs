//! Dense row-major tensors over `f32` (experiments) or `f64` (gradient checks).

use std::fmt::Debug;
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use crate::error::{Error, Result};

/// Floating-point element type used by the network engine.
pub trait Real:
    Copy
    + Default
    + Debug
    + PartialOrd
    + Send
    + Sync
    + 'static
    + std::ops::Add<Output = Self>
    + std::ops::Sub<Output = Self>
    + std::ops::Mul<Output = Self>
    + std::ops::Div<Output = Self>
    + std::ops::Neg<Output = Self>
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
{
    fn from_f64(v: f64) -> Self;
    fn to_f64(self) -> f64;
    fn exp(self) -> Self;
    fn ln(self) -> Self;
    fn sqrt(self) -> Self;
    fn is_finite(self) -> bool;

    fn zero() -> Self {
        Self::from_f64(0.0)
    }
    fn one() -> Self {
        Self::from_f64(1.0)
    }
    fn max(self, other: Self) -> Self {
        if self >= other {
            self
        } else {
            other
        }
    }
}

macro_rules! impl_real {
    ($t:ty) => {
        impl Real for $t {
            #[inline]
            fn from_f64(v: f64) -> Self {
                v as $t
            }
            #[inline]
            fn to_f64(self) -> f64 {
                self as f64
            }
            #[inline]
            fn exp(self) -> Self {
                <$t>::exp(self)
            }
            #[inline]
            fn ln(self) -> Self {
                <$t>::ln(self)
            }
            #[inline]
            fn sqrt(self) -> Self {
                <$t>::sqrt(self)
            }
            #[inline]
            fn is_finite(self) -> bool {
                <$t>::is_finite(self)
            }
        }
    };
}

impl_real!(f32);
impl_real!(f64);

#[derive(Debug, Clone, PartialEq)]
pub struct Tensor<T = f32> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Real> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.iter().any(|&d| d == 0) {
            return Err(Error::Shape(format!("zero dimension in {shape:?}")));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::Shape(format!(
                "shape {shape:?} needs {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: Vec<usize>) -> Self {
        let n = shape.iter().product();
        Self {
            shape,
            data: vec![T::zero(); n],
        }
    }

    pub fn shape(&self) -> &[usize] {
        &self.shape
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

    /// Leading dimension.
    pub fn rows(&self) -> usize {
        self.shape[0]
    }

    /// Number of elements per row (product of the trailing dimensions).
    pub fn row_len(&self) -> usize {
        self.shape[1..].iter().product()
    }

    pub fn row(&self, i: usize) -> &[T] {
        let w = self.row_len();
        &self.data[i * w..(i + 1) * w]
    }

    pub fn all_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    /// Index of the largest entry in each row; ties resolve to the lowest index.
    pub fn argmax_rows(&self) -> Vec<usize> {
        (0..self.rows())
            .map(|i| {
                let row = self.row(i);
                let mut best = 0;
                for (j, &v) in row.iter().enumerate() {
                    if v > row[best] {
                        best = j;
                    }
                }
                best
            })
            .collect()
    }

    pub fn cast<U: Real>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.to_f64())).collect(),
        }
    }

    /// Stacks rows selected by `indices` into a new tensor.
    pub fn gather_rows(&self, indices: &[usize]) -> Tensor<T> {
        let w = self.row_len();
        let mut data = Vec::with_capacity(indices.len() * w);
        for &i in indices {
            data.extend_from_slice(self.row(i));
        }
        let mut shape = self.shape.clone();
        shape[0] = indices.len();
        Tensor { shape, data }
    }

    /// Concatenates along the leading dimension.
    pub fn concat_rows(parts: &[&Tensor<T>]) -> Result<Tensor<T>> {
        let first = parts
            .first()
            .ok_or_else(|| Error::Shape("concat of zero tensors".into()))?;
        let tail = &first.shape[1..];
        let mut data = Vec::new();
        let mut rows = 0;
        for p in parts {
            if &p.shape[1..] != tail {
                return Err(Error::Shape(format!(
                    "cannot concat {:?} with {:?}",
                    p.shape, first.shape
                )));
            }
            rows += p.rows();
            data.extend_from_slice(&p.data);
        }
        let mut shape = first.shape.clone();
        shape[0] = rows;
        Ok(Tensor { shape, data })
    }
}

/// Row-wise numerically stable softmax.
pub fn softmax_rows<T: Real>(logits: &Tensor<T>) -> Tensor<T> {
    let c = logits.row_len();
    let mut out = logits.clone();
    for row in out.data.chunks_mut(c) {
        softmax_in_place(row);
    }
    out
}

pub(crate) fn softmax_in_place<T: Real>(row: &mut [T]) {
    let mut m = row[0];
    for &v in row.iter() {
        if v > m {
            m = v;
        }
    }
    let mut sum = T::zero();
    for v in row.iter_mut() {
        *v = (*v - m).exp();
        sum += *v;
    }
    for v in row.iter_mut() {
        *v /= sum;
    }
}

/// Row-wise log-softmax.
pub(crate) fn log_softmax<T: Real>(row: &[T]) -> Vec<T> {
    let mut m = row[0];
    for &v in row {
        if v > m {
            m = v;
        }
    }
    let lse = row.iter().map(|&v| (v - m).exp()).sum::<T>().ln() + m;
    row.iter().map(|&v| v - lse).collect()
}
