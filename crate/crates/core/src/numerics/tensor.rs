//! Dense row-major tensors.

use std::fmt::{Debug, Display};

use num_traits::Float;
use twofloat::TwoFloat;

use crate::error::{Error, Result};

/// Floating-point element type. Training runs in `f32`; gradient checks in
/// `f64`, with [`TwoFloat`] as the high-precision finite-difference reference.
pub trait Scalar: Float + Debug + Display + Default + Send + Sync + 'static {
    fn from_f64(v: f64) -> Self;
    fn as_f64(self) -> f64;

    /// Exponential used by every graph nonlinearity.
    fn exp_fn(self) -> Self {
        self.exp()
    }

    fn tanh_fn(self) -> Self {
        self.tanh()
    }

    fn recip_fn(self) -> Self {
        self.recip()
    }
}

impl Scalar for f32 {
    fn from_f64(v: f64) -> Self {
        v as f32
    }
    fn as_f64(self) -> f64 {
        self as f64
    }
}

impl Scalar for f64 {
    fn from_f64(v: f64) -> Self {
        v
    }
    fn as_f64(self) -> f64 {
        self
    }
}

impl Scalar for TwoFloat {
    fn from_f64(v: f64) -> Self {
        TwoFloat::from(v)
    }
    fn as_f64(self) -> f64 {
        self.hi() + self.lo()
    }
    fn exp_fn(self) -> Self {
        dd_exp(self)
    }
    fn tanh_fn(self) -> Self {
        if self.hi() < 0.0 {
            return -(-self).tanh_fn();
        }
        let e = dd_exp(self * -2.0);
        (TwoFloat::from(1.0) - e) * (TwoFloat::from(1.0) + e).recip_fn()
    }
    /// `TwoFloat`'s own division drops the low-order correction, so the
    /// reciprocal is refined here with two Newton steps.
    fn recip_fn(self) -> Self {
        let one = TwoFloat::from(1.0);
        let r0 = 1.0 / self.hi();
        if !r0.is_finite() || r0 == 0.0 {
            return TwoFloat::from(r0);
        }
        let r = TwoFloat::from(r0) + (one - self * r0) * r0;
        r + r * (one - self * r)
    }
}

/// Double-double exponential accurate to roughly 1e-29 relative and smooth
/// in its argument, unlike `TwoFloat::exp`, whose `f64`-level error makes
/// finite differences noisy.
fn dd_exp(x: TwoFloat) -> TwoFloat {
    const SQUARINGS: i32 = 10;
    let hi = x.hi();
    if hi.is_nan() {
        return x;
    }
    if hi > 709.0 {
        return TwoFloat::from(f64::INFINITY);
    }
    if hi < -745.0 {
        return TwoFloat::from(0.0);
    }
    let k = (hi / std::f64::consts::LN_2).round();
    // |r| <= ln2/2, scaled down by 2^10 so a short Taylor series converges
    let r = (x - twofloat::consts::LN_2 * k) * (0.5f64).powi(SQUARINGS);
    let mut term = TwoFloat::from(1.0);
    let mut sum = TwoFloat::from(1.0);
    for n in 1..=12 {
        term = term * r / n as f64;
        sum += term;
    }
    for _ in 0..SQUARINGS {
        sum = sum * sum;
    }
    // split the power of two so neither factor overflows
    let k = k as i32;
    let half = k / 2;
    sum * 2f64.powi(half) * 2f64.powi(k - half)
}

#[derive(Clone, Debug, PartialEq)]
pub struct Tensor<T> {
    shape: Vec<usize>,
    data: Vec<T>,
}

impl<T: Scalar> Tensor<T> {
    pub fn new(shape: Vec<usize>, data: Vec<T>) -> Result<Self> {
        if shape.is_empty() || shape.contains(&0) {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} must be a nonempty list of positive sizes"
            )));
        }
        let expected: usize = shape.iter().product();
        if expected != data.len() {
            return Err(Error::InvalidTensor(format!(
                "shape {shape:?} holds {expected} values, got {}",
                data.len()
            )));
        }
        Ok(Self { shape, data })
    }

    pub fn zeros(shape: &[usize]) -> Self {
        Self::filled(shape, T::zero())
    }

    pub fn filled(shape: &[usize], value: T) -> Self {
        assert!(
            !shape.is_empty() && !shape.contains(&0),
            "invalid shape {shape:?}"
        );
        let len = shape.iter().product();
        Self {
            shape: shape.to_vec(),
            data: vec![value; len],
        }
    }

    pub fn scalar(value: T) -> Self {
        Self {
            shape: vec![1],
            data: vec![value],
        }
    }

    pub fn vector(data: Vec<T>) -> Result<Self> {
        Self::new(vec![data.len()], data)
    }

    pub fn matrix(rows: usize, cols: usize, data: Vec<T>) -> Result<Self> {
        Self::new(vec![rows, cols], data)
    }

    pub fn from_rows(rows: &[Vec<T>]) -> Result<Self> {
        let Some(first) = rows.first() else {
            return Err(Error::Empty { op: "from_rows" });
        };
        let cols = first.len();
        let mut data = Vec::with_capacity(rows.len() * cols);
        for row in rows {
            if row.len() != cols {
                return Err(Error::InvalidTensor(format!(
                    "ragged rows: expected {cols} columns, got {}",
                    row.len()
                )));
            }
            data.extend_from_slice(row);
        }
        Self::matrix(rows.len(), cols, data)
    }

    pub fn identity(n: usize) -> Self {
        let mut t = Self::zeros(&[n, n]);
        for i in 0..n {
            t.data[i * n + i] = T::one();
        }
        t
    }

    pub fn from_f64_slice(shape: &[usize], values: &[f64]) -> Result<Self> {
        Self::new(shape.to_vec(), values.iter().map(|&v| T::from_f64(v)).collect())
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

    pub fn len(&self) -> usize {
        self.data.len()
    }

    pub fn is_empty(&self) -> bool {
        self.data.is_empty()
    }

    /// Views the tensor as a matrix: vectors are a single row, and higher
    /// ranks fold every trailing axis into the columns.
    pub fn rows_cols(&self) -> (usize, usize) {
        match self.shape.len() {
            1 => (1, self.shape[0]),
            _ => (self.shape[0], self.shape[1..].iter().product()),
        }
    }

    pub fn at(&self, row: usize, col: usize) -> T {
        let (_, cols) = self.rows_cols();
        self.data[row * cols + col]
    }

    pub fn row(&self, row: usize) -> &[T] {
        let (_, cols) = self.rows_cols();
        &self.data[row * cols..(row + 1) * cols]
    }

    pub fn reshape(mut self, shape: Vec<usize>) -> Result<Self> {
        let len: usize = shape.iter().product();
        if len != self.data.len() || shape.contains(&0) {
            return Err(Error::Shape {
                op: "reshape",
                lhs: self.shape,
                rhs: shape,
            });
        }
        self.shape = shape;
        Ok(self)
    }

    pub fn is_finite(&self) -> bool {
        self.data.iter().all(|v| v.is_finite())
    }

    pub fn cast<U: Scalar>(&self) -> Tensor<U> {
        Tensor {
            shape: self.shape.clone(),
            data: self.data.iter().map(|v| U::from_f64(v.as_f64())).collect(),
        }
    }

    pub fn to_f64_vec(&self) -> Vec<f64> {
        self.data.iter().map(|v| v.as_f64()).collect()
    }

    pub fn map(&self, f: impl Fn(T) -> T) -> Self {
        Self {
            shape: self.shape.clone(),
            data: self.data.iter().map(|&v| f(v)).collect(),
        }
    }

    pub fn max_abs(&self) -> T {
        self.data.iter().fold(T::zero(), |m, v| m.max(v.abs()))
    }

    pub fn transpose(&self) -> Self {
        let (r, c) = self.rows_cols();
        let mut out = vec![T::zero(); r * c];
        for i in 0..r {
            for j in 0..c {
                out[j * r + i] = self.data[i * c + j];
            }
        }
        Self {
            shape: vec![c, r],
            data: out,
        }
    }

    /// Matrix product `self · other`.
    pub fn matmul(&self, other: &Tensor<T>) -> Result<Tensor<T>> {
        let (r, s) = self.rows_cols();
        let (s2, c) = other.rows_cols();
        if s != s2 {
            return Err(Error::Shape {
                op: "matmul",
                lhs: self.shape.clone(),
                rhs: other.shape.clone(),
            });
        }
        let mut out = vec![T::zero(); r * c];
        gemm_nn(&self.data, &other.data, &mut out, r, s, c);
        Tensor::matrix(r, c, out)
    }
}

/// `out += a[r×s] · b[s×c]`
pub(crate) fn gemm_nn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, s: usize, c: usize) {
    for i in 0..r {
        let out_row = &mut out[i * c..(i + 1) * c];
        for k in 0..s {
            let aik = a[i * s + k];
            if aik == T::zero() {
                continue;
            }
            let b_row = &b[k * c..(k + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aik * bv;
            }
        }
    }
}

/// `out += a[r×s] · b[c×s]ᵀ`
pub(crate) fn gemm_nt<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, s: usize, c: usize) {
    for i in 0..r {
        let a_row = &a[i * s..(i + 1) * s];
        for j in 0..c {
            let b_row = &b[j * s..(j + 1) * s];
            let dot = a_row
                .iter()
                .zip(b_row)
                .fold(T::zero(), |acc, (&x, &y)| acc + x * y);
            out[i * c + j] = out[i * c + j] + dot;
        }
    }
}

/// `out += a[s×r]ᵀ · b[s×c]`
pub(crate) fn gemm_tn<T: Scalar>(a: &[T], b: &[T], out: &mut [T], r: usize, s: usize, c: usize) {
    for k in 0..s {
        let a_row = &a[k * r..(k + 1) * r];
        let b_row = &b[k * c..(k + 1) * c];
        for (i, &aki) in a_row.iter().enumerate() {
            if aki == T::zero() {
                continue;
            }
            let out_row = &mut out[i * c..(i + 1) * c];
            for (o, &bv) in out_row.iter_mut().zip(b_row) {
                *o = *o + aki * bv;
            }
        }
    }
}

/// Numerically stable softmax of one row, written into `out`.
pub(crate) fn softmax_into<T: Scalar>(scores: &[T], out: &mut [T]) {
    let max = scores.iter().fold(T::neg_infinity(), |m, &v| m.max(v));
    let mut total = T::zero();
    for (o, &s) in out.iter_mut().zip(scores) {
        *o = (s - max).exp_fn();
        total = total + *o;
    }
    for o in out.iter_mut() {
        *o = *o * total.recip_fn();
    }
}

/// Softmax over a score vector, stabilized by subtracting the maximum.
pub fn softmax<T: Scalar>(scores: &Tensor<T>) -> Result<Tensor<T>> {
    if scores.is_empty() {
        return Err(Error::Empty { op: "softmax" });
    }
    if !scores.is_finite() {
        return Err(Error::NonFinite { op: "softmax" });
    }
    let mut out = vec![T::zero(); scores.len()];
    softmax_into(scores.data(), &mut out);
    Tensor::new(scores.shape().to_vec(), out)
}
