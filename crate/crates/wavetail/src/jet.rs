//! Truncated Taylor arithmetic.
//!
//! A [`Jet`] holds the normalized Taylor coefficients `f^(k)(x0) / k!` of a
//! function around a base point. Arithmetic on jets propagates exact
//! derivatives through compositions up to [`JET_LEN`]` - 1`.

use std::ops::{Add, AddAssign, Div, Mul, Neg, Sub};

/// Number of stored coefficients (value plus derivatives up to order 8).
pub const JET_LEN: usize = 9;

/// Highest derivative order carried by a jet.
pub const MAX_JET_ORDER: usize = JET_LEN - 1;

#[derive(Clone, Copy, Debug, PartialEq)]
pub struct Jet {
    pub c: [f64; JET_LEN],
}

impl Default for Jet {
    fn default() -> Self {
        Jet::constant(0.0)
    }
}

impl Jet {
    pub const fn constant(v: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = v;
        Jet { c }
    }

    /// The identity function expanded at `x0`.
    pub const fn variable(x0: f64) -> Self {
        let mut c = [0.0; JET_LEN];
        c[0] = x0;
        c[1] = 1.0;
        Jet { c }
    }

    pub fn from_coeffs(c: [f64; JET_LEN]) -> Self {
        Jet { c }
    }

    pub fn value(&self) -> f64 {
        self.c[0]
    }

    /// `j`-th derivative at the base point.
    pub fn deriv(&self, j: usize) -> f64 {
        self.c[j] * factorial(j)
    }

    pub fn is_zero(&self) -> bool {
        self.c.iter().all(|&v| v == 0.0)
    }

    /// Derivative as a jet; the top coefficient is lost.
    pub fn derivative(&self) -> Jet {
        let mut c = [0.0; JET_LEN];
        for k in 1..JET_LEN {
            c[k - 1] = self.c[k] * k as f64;
        }
        Jet { c }
    }

    /// Antiderivative with prescribed value at the base point; the top
    /// coefficient of `self` is dropped.
    pub fn integral(&self, value: f64) -> Jet {
        let mut c = [0.0; JET_LEN];
        c[0] = value;
        for k in 1..JET_LEN {
            c[k] = self.c[k - 1] / k as f64;
        }
        Jet { c }
    }

    pub fn scale(&self, s: f64) -> Jet {
        let mut c = self.c;
        c.iter_mut().for_each(|v| *v *= s);
        Jet { c }
    }

    pub fn add_scalar(&self, s: f64) -> Jet {
        let mut c = self.c;
        c[0] += s;
        Jet { c }
    }

    /// `f(self)` where `taylor` are the normalized Taylor coefficients of `f`
    /// at `self.value()`.
    pub fn compose(&self, taylor: &[f64; JET_LEN]) -> Jet {
        let mut d = *self;
        d.c[0] = 0.0;
        let mut acc = Jet::constant(taylor[JET_LEN - 1]);
        for k in (0..JET_LEN - 1).rev() {
            acc = acc * d;
            acc.c[0] += taylor[k];
        }
        acc
    }

    /// Evaluate the truncated series at offset `dx` from the base point.
    pub fn eval_offset(&self, dx: f64) -> f64 {
        self.c.iter().rev().fold(0.0, |acc, &v| acc * dx + v)
    }

    pub fn recip(&self) -> Jet {
        let x0 = self.c[0];
        let mut t = [0.0; JET_LEN];
        let mut p = 1.0 / x0;
        for (k, tk) in t.iter_mut().enumerate() {
            *tk = if k % 2 == 0 { p } else { -p };
            p /= x0;
        }
        self.compose(&t)
    }

    pub fn exp(&self) -> Jet {
        let e = self.c[0].exp();
        let mut t = [0.0; JET_LEN];
        let mut f = 1.0;
        for (k, tk) in t.iter_mut().enumerate() {
            if k > 0 {
                f *= k as f64;
            }
            *tk = e / f;
        }
        self.compose(&t)
    }

    pub fn ln(&self) -> Jet {
        let x0 = self.c[0];
        let mut t = [0.0; JET_LEN];
        t[0] = x0.ln();
        let mut p = 1.0;
        for (k, tk) in t.iter_mut().enumerate().skip(1) {
            p /= x0;
            let sign = if k % 2 == 1 { 1.0 } else { -1.0 };
            *tk = sign * p / k as f64;
        }
        self.compose(&t)
    }

    /// `self^p` for real `p`; requires a positive base value unless `p` is a
    /// nonnegative integer.
    pub fn powf(&self, p: f64) -> Jet {
        if p == 0.0 {
            return Jet::constant(1.0);
        }
        if p.fract() == 0.0 && p > 0.0 && p <= 16.0 {
            return self.powi(p as u32);
        }
        let x0 = self.c[0];
        let mut t = [0.0; JET_LEN];
        let mut binom = 1.0;
        for (k, tk) in t.iter_mut().enumerate() {
            if k > 0 {
                binom *= (p - (k as f64 - 1.0)) / k as f64;
            }
            *tk = binom * x0.powf(p - k as f64);
        }
        self.compose(&t)
    }

    pub fn powi(&self, n: u32) -> Jet {
        let mut acc = Jet::constant(1.0);
        let mut base = *self;
        let mut n = n;
        while n > 0 {
            if n & 1 == 1 {
                acc = acc * base;
            }
            base = base * base;
            n >>= 1;
        }
        acc
    }

    pub fn sqrt(&self) -> Jet {
        self.powf(0.5)
    }

    pub fn sinh(&self) -> Jet {
        let e = self.exp();
        (e - e.recip()).scale(0.5)
    }

    pub fn cosh(&self) -> Jet {
        let e = self.exp();
        (e + e.recip()).scale(0.5)
    }

    pub fn asinh(&self) -> Jet {
        (*self + (*self * *self).add_scalar(1.0).sqrt()).ln()
    }

    /// Series reversion: given `self = y(x)` expanded at `x0` (with
    /// `y'(x0) != 0`), return the jet of `x(y)` expanded at `y(x0)`.
    pub fn invert(&self, x0: f64) -> Jet {
        let p1 = self.c[1];
        // x(y) = x0 + d(eta), eta = y - y0; fixed point d = (eta - N(d)) / p1
        // where N holds the nonlinear part of y; each sweep fixes one order.
        let mut nonlinear = *self;
        nonlinear.c[0] = 0.0;
        nonlinear.c[1] = 0.0;
        let eta = Jet::variable(0.0);
        let mut d = eta.scale(1.0 / p1);
        for _ in 0..JET_LEN {
            let mut n = nonlinear.compose_series(&d);
            n.c[0] = 0.0;
            d = (eta - n).scale(1.0 / p1);
        }
        d.add_scalar(x0)
    }

    /// Evaluate the polynomial with coefficients `self.c` at the jet
    /// `inner` (constant term included).
    pub fn compose_series(&self, inner: &Jet) -> Jet {
        let mut acc = Jet::constant(self.c[JET_LEN - 1]);
        for k in (0..JET_LEN - 1).rev() {
            acc = acc * *inner;
            acc.c[0] += self.c[k];
        }
        acc
    }
}

pub fn factorial(k: usize) -> f64 {
    (1..=k).fold(1.0, |a, b| a * b as f64)
}

impl Add for Jet {
    type Output = Jet;
    fn add(self, o: Jet) -> Jet {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(o.c.iter()) {
            *a += b;
        }
        Jet { c }
    }
}

impl AddAssign for Jet {
    fn add_assign(&mut self, o: Jet) {
        for (a, b) in self.c.iter_mut().zip(o.c.iter()) {
            *a += b;
        }
    }
}

impl Sub for Jet {
    type Output = Jet;
    fn sub(self, o: Jet) -> Jet {
        let mut c = self.c;
        for (a, b) in c.iter_mut().zip(o.c.iter()) {
            *a -= b;
        }
        Jet { c }
    }
}

impl Neg for Jet {
    type Output = Jet;
    fn neg(self) -> Jet {
        self.scale(-1.0)
    }
}

impl Mul for Jet {
    type Output = Jet;
    fn mul(self, o: Jet) -> Jet {
        let mut c = [0.0; JET_LEN];
        for i in 0..JET_LEN {
            if self.c[i] == 0.0 {
                continue;
            }
            for j in 0..JET_LEN - i {
                c[i + j] += self.c[i] * o.c[j];
            }
        }
        Jet { c }
    }
}

impl Div for Jet {
    type Output = Jet;
    fn div(self, o: Jet) -> Jet {
        let mut q = [0.0; JET_LEN];
        let b0 = o.c[0];
        for k in 0..JET_LEN {
            let mut s = self.c[k];
            for j in 1..=k {
                s -= o.c[j] * q[k - j];
            }
            q[k] = s / b0;
        }
        Jet { c: q }
    }
}

impl Mul<f64> for Jet {
    type Output = Jet;
    fn mul(self, s: f64) -> Jet {
        self.scale(s)
    }
}

impl Add<f64> for Jet {
    type Output = Jet;
    fn add(self, s: f64) -> Jet {
        self.add_scalar(s)
    }
}

impl Sub<f64> for Jet {
    type Output = Jet;
    fn sub(self, s: f64) -> Jet {
        self.add_scalar(-s)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn exp_derivatives_match() {
        let j = Jet::variable(0.3).scale(2.0).exp();
        for k in 0..JET_LEN {
            let exact = 2f64.powi(k as i32) * (0.6f64).exp();
            assert!((j.deriv(k) - exact).abs() < 1e-12 * exact.abs().max(1.0));
        }
    }

    #[test]
    fn reversion_of_exp_is_log() {
        let x0 = 0.7;
        let y = Jet::variable(x0).exp();
        let x = y.invert(x0);
        let lg = Jet::variable(x0.exp()).ln();
        for k in 0..JET_LEN {
            assert!((x.c[k] - lg.c[k]).abs() < 1e-10 * lg.c[k].abs().max(1.0), "k={k}");
        }
    }

    #[test]
    fn division_inverts_product() {
        let a = Jet::variable(1.2).sinh();
        let b = Jet::variable(1.2).cosh();
        let q = (a * b) / b;
        for k in 0..JET_LEN {
            assert!((q.c[k] - a.c[k]).abs() < 1e-12);
        }
    }
}
