//! Radial profiles with exact derivative access.

use std::fmt;
use std::sync::Arc;

use crate::jet::{Jet, MAX_JET_ORDER};
use crate::symbolic::cutoff::{bracket_jet, chi_above_scaled, chi_below_scaled};
use crate::symbolic::SymbolicError;

pub type JetFn = dyn Fn(Jet) -> Jet + Send + Sync;

/// Claimed decay class of a radial profile.
#[derive(Clone, Copy, Debug, PartialEq)]
pub enum SymbolClass {
    /// `|d^j f| <~ <r>^(q-j)`
    S(f64),
    /// dyadically summable version of `S`
    L1S(f64),
    /// radial symbol class, tested like `S`
    SRad(f64),
    /// `|f| <~ log <r>`, `|d^j f| <~ <r>^-j` for `j >= 1`
    SLog,
}

impl SymbolClass {
    pub fn exponent(&self) -> f64 {
        match *self {
            SymbolClass::S(q) | SymbolClass::L1S(q) | SymbolClass::SRad(q) => q,
            SymbolClass::SLog => 0.0,
        }
    }
}

impl fmt::Display for SymbolClass {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        match self {
            SymbolClass::S(q) => write!(f, "S(r^{q})"),
            SymbolClass::L1S(q) => write!(f, "l1S(r^{q})"),
            SymbolClass::SRad(q) => write!(f, "S_rad(r^{q})"),
            SymbolClass::SLog => write!(f, "S(log r)"),
        }
    }
}

/// A radial function `r -> f(r)` evaluated through jets, so every
/// derivative up to `max_order` is exact to rounding.
#[derive(Clone)]
pub struct RadialProfile {
    f: Arc<JetFn>,
    max_order: usize,
    class: SymbolClass,
    support: Option<(f64, f64)>,
    breakpoints: Vec<f64>,
}

impl fmt::Debug for RadialProfile {
    fn fmt(&self, f: &mut fmt::Formatter<'_>) -> fmt::Result {
        f.debug_struct("RadialProfile")
            .field("max_order", &self.max_order)
            .field("class", &self.class)
            .field("support", &self.support)
            .finish()
    }
}

impl RadialProfile {
    pub fn new<F>(f: F, class: SymbolClass) -> Self
    where
        F: Fn(Jet) -> Jet + Send + Sync + 'static,
    {
        RadialProfile {
            f: Arc::new(f),
            max_order: MAX_JET_ORDER,
            class,
            support: None,
            breakpoints: Vec::new(),
        }
    }

    pub fn with_support(mut self, lo: f64, hi: f64) -> Self {
        self.support = Some((lo, hi));
        self
    }

    pub fn with_class(mut self, class: SymbolClass) -> Self {
        self.class = class;
        self
    }

    pub fn with_max_order(mut self, order: usize) -> Self {
        self.max_order = order.min(MAX_JET_ORDER);
        self
    }

    /// Radii where the profile is only piecewise smooth; quadratures split
    /// there.
    pub fn with_breakpoints(mut self, mut pts: Vec<f64>) -> Self {
        self.breakpoints.append(&mut pts);
        self.breakpoints.sort_by(f64::total_cmp);
        self.breakpoints.dedup();
        self
    }

    pub fn max_order(&self) -> usize {
        self.max_order
    }

    pub fn claimed_class(&self) -> SymbolClass {
        self.class
    }

    pub fn support_hint(&self) -> Option<(f64, f64)> {
        self.support
    }

    pub fn breakpoints(&self) -> &[f64] {
        &self.breakpoints
    }

    pub fn eval(&self, r: f64) -> f64 {
        (self.f)(Jet::constant(r)).value()
    }

    pub fn jet(&self, r: f64) -> Jet {
        (self.f)(Jet::variable(r))
    }

    pub fn apply(&self, x: Jet) -> Jet {
        (self.f)(x)
    }

    pub fn deriv(&self, j: usize, r: f64) -> Result<f64, SymbolicError> {
        if j > self.max_order {
            return Err(SymbolicError::InsufficientOrder {
                needed: j,
                available: self.max_order,
            });
        }
        Ok(self.jet(r).deriv(j))
    }

    pub fn zero() -> Self {
        RadialProfile::new(|_| Jet::constant(0.0), SymbolClass::L1S(-8.0)).with_support(0.0, 0.0)
    }

    pub fn constant(v: f64) -> Self {
        RadialProfile::new(move |_| Jet::constant(v), SymbolClass::S(0.0))
    }

    /// `<r>^q`.
    pub fn bracket_power(q: f64) -> Self {
        RadialProfile::new(move |r| bracket_jet(r).powf(q), SymbolClass::S(q))
    }

    /// `log <r>`.
    pub fn bracket_log() -> Self {
        RadialProfile::new(|r| bracket_jet(r).ln(), SymbolClass::SLog)
    }

    /// `chi_above(r / scale)`.
    pub fn cutoff_above(scale: f64) -> Self {
        RadialProfile::new(move |r| chi_above_scaled(r, scale), SymbolClass::S(0.0))
    }

    /// `chi_below(r / scale)`.
    pub fn cutoff_below(scale: f64) -> Self {
        RadialProfile::new(move |r| chi_below_scaled(r, scale), SymbolClass::L1S(-8.0))
            .with_support(0.0, 2.0 * scale)
    }

    /// The coordinate function `r`.
    pub fn radius() -> Self {
        RadialProfile::new(|r| r, SymbolClass::S(1.0))
    }

    pub fn map<F>(&self, g: F, class: SymbolClass) -> Self
    where
        F: Fn(Jet) -> Jet + Send + Sync + 'static,
    {
        let f = self.f.clone();
        RadialProfile {
            f: Arc::new(move |r| g(f(r))),
            max_order: self.max_order,
            class,
            support: self.support,
            breakpoints: self.breakpoints.clone(),
        }
    }

    fn combine<F>(&self, other: &RadialProfile, op: F, class: SymbolClass, support: Option<(f64, f64)>) -> Self
    where
        F: Fn(Jet, Jet) -> Jet + Send + Sync + 'static,
    {
        let a = self.f.clone();
        let b = other.f.clone();
        let mut bp = self.breakpoints.clone();
        bp.extend_from_slice(&other.breakpoints);
        bp.sort_by(f64::total_cmp);
        bp.dedup();
        RadialProfile {
            f: Arc::new(move |r| op(a(r), b(r))),
            max_order: self.max_order.min(other.max_order),
            class,
            support,
            breakpoints: bp,
        }
    }

    pub fn add(&self, other: &RadialProfile) -> Self {
        let class = weaker(self.class, other.class);
        self.combine(other, |a, b| a + b, class, union(self.support, other.support))
    }

    pub fn sub(&self, other: &RadialProfile) -> Self {
        let class = weaker(self.class, other.class);
        self.combine(other, |a, b| a - b, class, union(self.support, other.support))
    }

    pub fn mul(&self, other: &RadialProfile) -> Self {
        let class = product_class(self.class, other.class);
        self.combine(other, |a, b| a * b, class, intersect(self.support, other.support))
    }

    pub fn div(&self, other: &RadialProfile) -> Self {
        let class = product_class(self.class, invert_class(other.class));
        self.combine(other, |a, b| a / b, class, self.support)
    }

    pub fn scale(&self, s: f64) -> Self {
        let f = self.f.clone();
        RadialProfile {
            f: Arc::new(move |r| f(r).scale(s)),
            max_order: self.max_order,
            class: self.class,
            support: self.support,
            breakpoints: self.breakpoints.clone(),
        }
    }

    /// `self(inner(r))`.
    pub fn compose(&self, inner: &RadialProfile) -> Self {
        let f = self.f.clone();
        let g = inner.f.clone();
        RadialProfile {
            f: Arc::new(move |r| f(g(r))),
            max_order: self.max_order.min(inner.max_order),
            class: self.class,
            support: None,
            breakpoints: inner.breakpoints.clone(),
        }
    }

    /// Profile whose value is `self'(r)`; one derivative order is used up.
    pub fn derivative(&self) -> Self {
        let f = self.f.clone();
        let q = self.class.exponent() - 1.0;
        let class = match self.class {
            SymbolClass::L1S(_) => SymbolClass::L1S(q),
            SymbolClass::SRad(_) => SymbolClass::SRad(q),
            SymbolClass::SLog => SymbolClass::S(-1.0),
            SymbolClass::S(_) => SymbolClass::S(q),
        };
        RadialProfile {
            f: Arc::new(move |r: Jet| {
                // chain rule through the input jet: d/dr f(x(r)) = f'(x) x'(r)
                let x0 = r.value();
                let inner = f(Jet::variable(x0)).derivative();
                r.compose(&inner.c)
            }),
            max_order: self.max_order.saturating_sub(1),
            class,
            support: self.support,
            breakpoints: self.breakpoints.clone(),
        }
    }

    /// Piecewise polynomial interpolant of a table `r, value[, d1, d2, ...]`.
    /// Beyond the last node the profile continues as `v_N (r_N / r)^p` when
    /// `tail_exponent = Some(p)`, and as zero otherwise.
    pub fn from_table(
        r: Vec<f64>,
        columns: Vec<Vec<f64>>,
        tail_exponent: Option<f64>,
        class: SymbolClass,
    ) -> Result<Self, SymbolicError> {
        let table = Arc::new(TableInterp::new(r, columns, tail_exponent)?);
        let lo = table.r[0];
        let hi = *table.r.last().unwrap_or(&lo);
        let order = if table.derivs.is_empty() { 5 } else { 2 * table.derivs.len() + 1 }.min(MAX_JET_ORDER);
        let t = table.clone();
        let mut p = RadialProfile::new(move |x| t.eval(x), class).with_max_order(order);
        if tail_exponent.is_none() {
            p = p.with_support(lo, hi);
        }
        Ok(p)
    }
}

fn union(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> Option<(f64, f64)> {
    match (a, b) {
        (Some(x), Some(y)) => Some((x.0.min(y.0), x.1.max(y.1))),
        _ => None,
    }
}

fn intersect(a: Option<(f64, f64)>, b: Option<(f64, f64)>) -> Option<(f64, f64)> {
    match (a, b) {
        (Some(x), Some(y)) => Some((x.0.max(y.0), x.1.min(y.1).max(x.0.max(y.0)))),
        (Some(x), None) | (None, Some(x)) => Some(x),
        _ => None,
    }
}

fn weaker(a: SymbolClass, b: SymbolClass) -> SymbolClass {
    use SymbolClass::*;
    match (a, b) {
        (SLog, _) | (_, SLog) => SLog,
        (L1S(p), L1S(q)) => L1S(p.max(q)),
        (SRad(p), SRad(q)) => SRad(p.max(q)),
        (x, y) => S(x.exponent().max(y.exponent())),
    }
}

fn product_class(a: SymbolClass, b: SymbolClass) -> SymbolClass {
    use SymbolClass::*;
    let q = a.exponent() + b.exponent();
    match (a, b) {
        (SLog, _) | (_, SLog) => S(q + 1e-9),
        (L1S(_), _) | (_, L1S(_)) => L1S(q),
        (SRad(_), _) | (_, SRad(_)) => SRad(q),
        _ => S(q),
    }
}

fn invert_class(a: SymbolClass) -> SymbolClass {
    SymbolClass::S(-a.exponent())
}

/// Local polynomial interpolation over a table, using Hermite data when
/// derivative columns are present.
struct TableInterp {
    r: Vec<f64>,
    values: Vec<f64>,
    derivs: Vec<Vec<f64>>,
    tail: Option<f64>,
}

impl TableInterp {
    fn new(r: Vec<f64>, mut columns: Vec<Vec<f64>>, tail: Option<f64>) -> Result<Self, SymbolicError> {
        if columns.is_empty() || r.len() < 6 {
            return Err(SymbolicError::InvalidTable("need at least 6 rows and a value column".into()));
        }
        if columns.iter().any(|c| c.len() != r.len()) {
            return Err(SymbolicError::InvalidTable("ragged columns".into()));
        }
        if r.windows(2).any(|w| !(w[1] > w[0])) || r[0] < 0.0 {
            return Err(SymbolicError::InvalidTable("radii must be nonnegative and strictly increasing".into()));
        }
        let values = columns.remove(0);
        Ok(TableInterp { r, values, derivs: columns, tail })
    }

    fn eval(&self, x: Jet) -> Jet {
        let v = x.value();
        let n = self.r.len();
        let last = self.r[n - 1];
        if v > last {
            return match self.tail {
                Some(p) => x.recip().scale(last).powf(p).scale(self.values[n - 1]),
                None => Jet::constant(0.0),
            };
        }
        let i = match self.r.binary_search_by(|a| a.total_cmp(&v)) {
            Ok(i) => i.min(n - 2),
            Err(i) => i.saturating_sub(1).min(n - 2),
        };
        if self.derivs.is_empty() {
            let lo = i.saturating_sub(2).min(n - 6);
            let nodes: Vec<f64> = self.r[lo..lo + 6].to_vec();
            let vals: Vec<f64> = self.values[lo..lo + 6].to_vec();
            newton_eval(&nodes, &divided_differences(&nodes, &vals), x)
        } else {
            let k = self.derivs.len();
            let mut z = Vec::with_capacity(2 * (k + 1));
            let mut data = Vec::with_capacity(2 * (k + 1));
            for idx in [i, i + 1] {
                for _ in 0..=k {
                    z.push(self.r[idx]);
                }
                let mut d = vec![self.values[idx]];
                d.extend(self.derivs.iter().map(|c| c[idx]));
                data.push(d);
            }
            let coeffs = hermite_differences(&z, &data, k + 1);
            newton_eval(&z, &coeffs, x)
        }
    }
}

fn divided_differences(x: &[f64], y: &[f64]) -> Vec<f64> {
    let n = x.len();
    let mut c = y.to_vec();
    for j in 1..n {
        for i in (j..n).rev() {
            c[i] = (c[i] - c[i - 1]) / (x[i] - x[i - j]);
        }
    }
    c
}

/// Divided differences with each node repeated `mult` times; `data[g]`
/// holds value and derivatives for node group `g`.
fn hermite_differences(z: &[f64], data: &[Vec<f64>], mult: usize) -> Vec<f64> {
    let n = z.len();
    let mut table = vec![vec![0.0; n]; n];
    for i in 0..n {
        table[i][0] = data[i / mult][0];
    }
    for j in 1..n {
        for i in j..n {
            if z[i] == z[i - j] {
                table[i][j] = data[i / mult][j] / crate::jet::factorial(j);
            } else {
                table[i][j] = (table[i][j - 1] - table[i - 1][j - 1]) / (z[i] - z[i - j]);
            }
        }
    }
    (0..n).map(|i| table[i][i]).collect()
}

fn newton_eval(nodes: &[f64], coeffs: &[f64], x: Jet) -> Jet {
    let n = coeffs.len();
    let mut acc = Jet::constant(coeffs[n - 1]);
    for i in (0..n - 1).rev() {
        acc = acc * (x - nodes[i]);
        acc.c[0] += coeffs[i];
    }
    acc
}

/// Smooth compactly supported pulse `exp(-(r-center)^2 / (2 width^2))`
/// multiplied by a window vanishing outside `[lo, hi]`.
pub fn windowed_gaussian(center: f64, width: f64, lo: f64, hi: f64) -> RadialProfile {
    let taper = ((hi - lo) * 0.05).max(1e-3);
    RadialProfile::new(
        move |r| {
            let v = r.value();
            if v <= lo || v >= hi {
                return Jet::constant(0.0);
            }
            let d = (r - center).scale(1.0 / width);
            let g = (-(d * d).scale(0.5)).exp();
            let left = chi_above_scaled((r - lo).scale(1.0 / taper), 1.0);
            let right = chi_above_scaled((Jet::constant(hi) - r).scale(1.0 / taper), 1.0);
            g * left * right
        },
        SymbolClass::L1S(-8.0),
    )
    .with_support(lo, hi)
}

/// Compact bump `exp(1 - 1/(1 - x^2))` with `x` mapping `[lo, hi]` onto
/// `[-1, 1]`; peak value 1 at the midpoint.
pub fn bump_pulse(lo: f64, hi: f64) -> RadialProfile {
    let (mid, half) = (0.5 * (lo + hi), 0.5 * (hi - lo));
    RadialProfile::new(
        move |r| {
            let x = (r - mid).scale(1.0 / half);
            if x.value().abs() >= 1.0 {
                return Jet::constant(0.0);
            }
            let d = Jet::constant(1.0) - x * x;
            (-d.recip()).add_scalar(1.0).exp()
        },
        SymbolClass::L1S(-8.0),
    )
    .with_support(lo, hi)
}

/// Unit-mass indicator of the ball of radius `a` with the `1/(4 pi)`
/// kernel convention: `3 / (4 pi a^3)` inside.
pub fn ball_source(a: f64) -> RadialProfile {
    let h = 3.0 / (4.0 * std::f64::consts::PI * a * a * a);
    RadialProfile::new(
        move |r| if r.value() < a { Jet::constant(h) } else { Jet::constant(0.0) },
        SymbolClass::L1S(-8.0),
    )
    .with_support(0.0, a)
    .with_breakpoints(vec![a])
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn table_hermite_reproduces_cubic() {
        let r: Vec<f64> = (0..10).map(|i| i as f64 * 0.5).collect();
        let v: Vec<f64> = r.iter().map(|x| x * x * x - x).collect();
        let d1: Vec<f64> = r.iter().map(|x| 3.0 * x * x - 1.0).collect();
        let p = RadialProfile::from_table(r, vec![v, d1], None, SymbolClass::S(3.0)).unwrap();
        let x = 1.37;
        assert!((p.eval(x) - (x * x * x - x)).abs() < 1e-12);
        assert!((p.deriv(2, x).unwrap() - 6.0 * x).abs() < 1e-10);
    }

    #[test]
    fn derivative_profile_chain_rule() {
        let p = RadialProfile::bracket_power(-2.0);
        let d = p.derivative();
        for &r in &[0.3, 1.4, 5.0] {
            assert!((d.eval(r) - p.deriv(1, r).unwrap()).abs() < 1e-13);
            assert!((d.deriv(1, r).unwrap() - p.deriv(2, r).unwrap()).abs() < 1e-12);
        }
    }
}
