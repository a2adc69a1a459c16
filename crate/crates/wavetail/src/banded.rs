//! Banded LU factorization with partial pivoting, generic over real and
//! complex scalars.

use std::fmt::Debug;
use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub, SubAssign};

use num_complex::Complex64;
use thiserror::Error;

#[derive(Debug, Error, PartialEq)]
pub enum BandedError {
    #[error("matrix is singular at pivot {0}")]
    Singular(usize),
    #[error("entry ({i}, {j}) lies outside the band")]
    OutsideBand { i: usize, j: usize },
    #[error("dimension mismatch: expected {expected}, got {got}")]
    Dimension { expected: usize, got: usize },
}

pub trait Scalar:
    Copy
    + Debug
    + PartialEq
    + Send
    + Sync
    + Add<Output = Self>
    + Sub<Output = Self>
    + Mul<Output = Self>
    + Div<Output = Self>
    + Neg<Output = Self>
    + AddAssign
    + SubAssign
    + Mul<f64, Output = Self>
{
    fn zero() -> Self;
    fn from_real(v: f64) -> Self;
    fn modulus(&self) -> f64;
}

impl Scalar for f64 {
    fn zero() -> Self {
        0.0
    }
    fn from_real(v: f64) -> Self {
        v
    }
    fn modulus(&self) -> f64 {
        self.abs()
    }
}

impl Scalar for Complex64 {
    fn zero() -> Self {
        Complex64::new(0.0, 0.0)
    }
    fn from_real(v: f64) -> Self {
        Complex64::new(v, 0.0)
    }
    fn modulus(&self) -> f64 {
        self.norm()
    }
}

/// Square band matrix with `kl` sub- and `ku` super-diagonals. Storage
/// holds `kl` extra super-diagonals for pivoting fill-in.
#[derive(Clone, Debug)]
pub struct BandMatrix<T: Scalar> {
    n: usize,
    kl: usize,
    ku: usize,
    width: usize,
    data: Vec<T>,
}

impl<T: Scalar> BandMatrix<T> {
    pub fn zeros(n: usize, kl: usize, ku: usize) -> Self {
        let width = 2 * kl + ku + 1;
        BandMatrix { n, kl, ku, width, data: vec![T::zero(); n * width] }
    }

    pub fn n(&self) -> usize {
        self.n
    }

    pub fn lower(&self) -> usize {
        self.kl
    }

    pub fn upper(&self) -> usize {
        self.ku
    }

    #[inline]
    fn idx(&self, i: usize, j: usize) -> usize {
        i * self.width + (j + self.kl - i)
    }

    pub fn in_band(&self, i: usize, j: usize) -> bool {
        i < self.n && j < self.n && j + self.kl >= i && j <= i + self.ku
    }

    #[inline]
    pub fn get(&self, i: usize, j: usize) -> T {
        if self.in_band(i, j) {
            self.data[self.idx(i, j)]
        } else {
            T::zero()
        }
    }

    pub fn set(&mut self, i: usize, j: usize, v: T) -> Result<(), BandedError> {
        if !self.in_band(i, j) {
            return Err(BandedError::OutsideBand { i, j });
        }
        let k = self.idx(i, j);
        self.data[k] = v;
        Ok(())
    }

    /// Adds `v` to entry `(i, j)`; panics outside the band.
    #[inline]
    pub fn add_to(&mut self, i: usize, j: usize, v: T) {
        assert!(self.in_band(i, j), "entry ({i}, {j}) outside band");
        let k = self.idx(i, j);
        self.data[k] += v;
    }

    pub fn matvec(&self, x: &[T]) -> Result<Vec<T>, BandedError> {
        if x.len() != self.n {
            return Err(BandedError::Dimension { expected: self.n, got: x.len() });
        }
        Ok((0..self.n)
            .map(|i| {
                let lo = i.saturating_sub(self.kl);
                let hi = (i + self.ku).min(self.n - 1);
                let mut s = T::zero();
                for j in lo..=hi {
                    s += self.data[self.idx(i, j)] * x[j];
                }
                s
            })
            .collect())
    }

    pub fn transpose(&self) -> BandMatrix<T> {
        let mut t = BandMatrix::zeros(self.n, self.ku, self.kl);
        for i in 0..self.n {
            let lo = i.saturating_sub(self.kl);
            let hi = (i + self.ku).min(self.n - 1);
            for j in lo..=hi {
                let k = t.idx(j, i);
                t.data[k] = self.get(i, j);
            }
        }
        t
    }

    pub fn factor(mut self) -> Result<BandLu<T>, BandedError> {
        let n = self.n;
        let kl = self.kl;
        let span = kl + self.ku;
        let mut piv = vec![0usize; n];
        for k in 0..n {
            let last = (k + kl).min(n - 1);
            let mut p = k;
            let mut best = self.data[self.idx(k, k)].modulus();
            for i in k + 1..=last {
                let m = self.data[self.idx(i, k)].modulus();
                if m > best {
                    best = m;
                    p = i;
                }
            }
            if !(best > 0.0) || !best.is_finite() {
                return Err(BandedError::Singular(k));
            }
            piv[k] = p;
            let jend = (k + span).min(n - 1);
            if p != k {
                for j in k..=jend {
                    let a = self.idx(k, j);
                    let b = self.idx(p, j);
                    self.data.swap(a, b);
                }
            }
            let pivot = self.data[self.idx(k, k)];
            for i in k + 1..=last {
                let ik = self.idx(i, k);
                let l = self.data[ik] / pivot;
                self.data[ik] = l;
                if l == T::zero() {
                    continue;
                }
                for j in k + 1..=jend {
                    let kj = self.data[self.idx(k, j)];
                    let ij = self.idx(i, j);
                    self.data[ij] -= l * kj;
                }
            }
        }
        Ok(BandLu { a: self, piv })
    }
}

/// Factored band matrix.
#[derive(Clone, Debug)]
pub struct BandLu<T: Scalar> {
    a: BandMatrix<T>,
    piv: Vec<usize>,
}

impl<T: Scalar> BandLu<T> {
    pub fn solve(&self, b: &[T]) -> Result<Vec<T>, BandedError> {
        let n = self.a.n;
        if b.len() != n {
            return Err(BandedError::Dimension { expected: n, got: b.len() });
        }
        let kl = self.a.kl;
        let span = kl + self.a.ku;
        let mut x = b.to_vec();
        for k in 0..n {
            let p = self.piv[k];
            if p != k {
                x.swap(k, p);
            }
            let xk = x[k];
            for i in k + 1..=(k + kl).min(n - 1) {
                x[i] -= self.a.data[self.a.idx(i, k)] * xk;
            }
        }
        for i in (0..n).rev() {
            let mut s = x[i];
            for j in i + 1..=(i + span).min(n - 1) {
                s -= self.a.data[self.a.idx(i, j)] * x[j];
            }
            x[i] = s / self.a.data[self.a.idx(i, i)];
        }
        Ok(x)
    }
}
