//! Dense row-major matrices and the handful of vector kernels the encoders need.
//!
//! Everything is generic over [`Real`] so the same model code runs in `f32` for
//! training and in `f64` for finite-difference verification.

use std::fmt::{Debug, Display};
use std::iter::Sum;
use std::ops::{AddAssign, DivAssign, MulAssign, SubAssign};

use num_traits::{Float, FromPrimitive, ToPrimitive};

pub trait Real:
    Float
    + FromPrimitive
    + ToPrimitive
    + AddAssign
    + SubAssign
    + MulAssign
    + DivAssign
    + Sum
    + Default
    + Debug
    + Display
    + Send
    + Sync
    + 'static
{
    fn lit(x: f64) -> Self {
        Self::from_f64(x).expect("f64 literal representable")
    }

    fn as_f64(self) -> f64 {
        self.to_f64().unwrap_or(f64::NAN)
    }
}

impl Real for f32 {}
impl Real for f64 {}

#[derive(Clone, Debug, PartialEq)]
pub struct Matrix<T> {
    rows: usize,
    cols: usize,
    data: Vec<T>,
}

impl<T: Real> Matrix<T> {
    pub fn zeros(rows: usize, cols: usize) -> Self {
        Matrix {
            rows,
            cols,
            data: vec![T::zero(); rows * cols],
        }
    }

    pub fn from_vec(rows: usize, cols: usize, data: Vec<T>) -> Self {
        assert_eq!(data.len(), rows * cols, "matrix payload size");
        Matrix { rows, cols, data }
    }

    pub fn identity(n: usize) -> Self {
        let mut m = Self::zeros(n, n);
        for i in 0..n {
            m.data[i * n + i] = T::one();
        }
        m
    }

    pub fn rows(&self) -> usize {
        self.rows
    }

    pub fn cols(&self) -> usize {
        self.cols
    }

    pub fn as_slice(&self) -> &[T] {
        &self.data
    }

    pub fn as_mut_slice(&mut self) -> &mut [T] {
        &mut self.data
    }

    pub fn get(&self, r: usize, c: usize) -> T {
        self.data[r * self.cols + c]
    }

    pub fn set(&mut self, r: usize, c: usize, v: T) {
        self.data[r * self.cols + c] = v;
    }

    pub fn row(&self, r: usize) -> &[T] {
        &self.data[r * self.cols..(r + 1) * self.cols]
    }

    /// `out = self · x`
    pub fn matvec(&self, x: &[T], out: &mut [T]) {
        self.matvec_cols(0, x, out);
    }

    /// `out = self[:, off..off+len(x)] · x`
    pub fn matvec_cols(&self, off: usize, x: &[T], out: &mut [T]) {
        debug_assert!(off + x.len() <= self.cols);
        debug_assert_eq!(out.len(), self.rows);
        for (r, o) in out.iter_mut().enumerate() {
            *o = dot(&self.row(r)[off..off + x.len()], x);
        }
    }

    /// `out += self[:, off..off+len(out)]ᵀ · g`
    pub fn matvec_t_cols_add(&self, off: usize, g: &[T], out: &mut [T]) {
        debug_assert_eq!(g.len(), self.rows);
        let n = out.len();
        for (r, &gr) in g.iter().enumerate() {
            if gr == T::zero() {
                continue;
            }
            axpy(gr, &self.row(r)[off..off + n], out);
        }
    }

    /// `out += selfᵀ · g`
    pub fn matvec_t_add(&self, g: &[T], out: &mut [T]) {
        self.matvec_t_cols_add(0, g, out);
    }

    /// `self[:, off..off+len(v)] += scale · u ⊗ v`
    pub fn add_outer_cols(&mut self, off: usize, scale: T, u: &[T], v: &[T]) {
        debug_assert_eq!(u.len(), self.rows);
        let cols = self.cols;
        for (r, &ur) in u.iter().enumerate() {
            let a = scale * ur;
            if a == T::zero() {
                continue;
            }
            let row = &mut self.data[r * cols + off..r * cols + off + v.len()];
            axpy(a, v, row);
        }
    }

    pub fn add_outer(&mut self, scale: T, u: &[T], v: &[T]) {
        self.add_outer_cols(0, scale, u, v);
    }

    pub fn cast<U: Real>(&self) -> Matrix<U> {
        Matrix {
            rows: self.rows,
            cols: self.cols,
            data: self.data.iter().map(|&x| U::lit(x.as_f64())).collect(),
        }
    }
}

#[inline]
pub fn dot<T: Real>(a: &[T], b: &[T]) -> T {
    debug_assert_eq!(a.len(), b.len());
    let mut acc = T::zero();
    for (&x, &y) in a.iter().zip(b) {
        acc += x * y;
    }
    acc
}

/// `y += a · x`
#[inline]
pub fn axpy<T: Real>(a: T, x: &[T], y: &mut [T]) {
    debug_assert_eq!(x.len(), y.len());
    for (yi, &xi) in y.iter_mut().zip(x) {
        *yi += a * xi;
    }
}

#[inline]
pub fn is_zero<T: Real>(x: &[T]) -> bool {
    x.iter().all(|v| *v == T::zero())
}

#[inline]
pub fn all_finite<T: Real>(x: &[T]) -> bool {
    x.iter().all(|v| v.is_finite())
}

#[inline]
pub fn sigmoid<T: Real>(x: T) -> T {
    if x >= T::zero() {
        T::one() / (T::one() + (-x).exp())
    } else {
        let e = x.exp();
        e / (T::one() + e)
    }
}

/// `ln(1 + e^x)` without overflow.
#[inline]
pub fn softplus<T: Real>(x: T) -> T {
    x.max(T::zero()) + (-x.abs()).exp().ln_1p()
}
