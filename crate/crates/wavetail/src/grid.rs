//! Radial grids `r = r(s)` over uniformly spaced `s`.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::jet::Jet;

#[derive(Debug, Error, PartialEq)]
pub enum GridError {
    #[error("grid spacing must be positive, got {0}")]
    BadSpacing(f64),
    #[error("grid extent {0} too small")]
    BadExtent(f64),
    #[error("radius {r} outside grid [0, {r_max}]")]
    OutOfRange { r: f64, r_max: f64 },
    #[error("grid needs at least {needed} nodes, has {have}")]
    TooCoarse { needed: usize, have: usize },
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum GridKind {
    /// `r = s`
    Uniform,
    /// `r = b sinh(s / b)`: spacing `ds` near the origin, geometric growth
    /// beyond `r ~ b`.
    Sinh { b: f64 },
}

#[derive(Clone, Debug)]
pub struct Grid1D {
    kind: GridKind,
    ds: f64,
    r: Vec<f64>,
    rs: Vec<f64>,
    rss: Vec<f64>,
}

impl Grid1D {
    pub fn uniform(h: f64, r_max: f64) -> Result<Self, GridError> {
        if !(h > 0.0) {
            return Err(GridError::BadSpacing(h));
        }
        if !(r_max > 4.0 * h) {
            return Err(GridError::BadExtent(r_max));
        }
        let n = (r_max / h).ceil() as usize;
        Ok(Self::build(GridKind::Uniform, h, n))
    }

    /// Graded grid with spacing `ds` at the origin and `per_doubling`
    /// nodes per doubling of `r` far out.
    pub fn sinh(ds: f64, per_doubling: f64, r_max: f64) -> Result<Self, GridError> {
        if !(ds > 0.0) {
            return Err(GridError::BadSpacing(ds));
        }
        if !(r_max > 4.0 * ds) {
            return Err(GridError::BadExtent(r_max));
        }
        let b = per_doubling * ds / std::f64::consts::LN_2;
        let s_max = b * (r_max / b).asinh();
        let n = (s_max / ds).ceil() as usize;
        Ok(Self::build(GridKind::Sinh { b }, ds, n))
    }

    /// Composite grid with at least 64 nodes in every dyadic annulus.
    pub fn composite(r_max: f64) -> Result<Self, GridError> {
        Self::sinh(1.0 / 32.0, 64.0, r_max)
    }

    fn build(kind: GridKind, ds: f64, n: usize) -> Self {
        let mut r = Vec::with_capacity(n + 1);
        let mut rs = Vec::with_capacity(n + 1);
        let mut rss = Vec::with_capacity(n + 1);
        for i in 0..=n {
            let j = map_jet(kind, Jet::variable(i as f64 * ds));
            r.push(j.c[0]);
            rs.push(j.c[1]);
            rss.push(2.0 * j.c[2]);
        }
        Grid1D { kind, ds, r, rs, rss }
    }

    pub fn kind(&self) -> GridKind {
        self.kind
    }

    pub fn ds(&self) -> f64 {
        self.ds
    }

    /// Index of the last node (nodes are `0..=n`).
    pub fn n(&self) -> usize {
        self.r.len() - 1
    }

    pub fn len(&self) -> usize {
        self.r.len()
    }

    pub fn is_empty(&self) -> bool {
        self.r.is_empty()
    }

    pub fn r(&self) -> &[f64] {
        &self.r
    }

    pub fn rs(&self) -> &[f64] {
        &self.rs
    }

    pub fn rss(&self) -> &[f64] {
        &self.rss
    }

    pub fn r_max(&self) -> f64 {
        *self.r.last().unwrap()
    }

    /// Jet of `r(s)` at node `i`, in the `s` variable.
    pub fn map_jet_at(&self, i: usize) -> Jet {
        map_jet(self.kind, Jet::variable(i as f64 * self.ds))
    }

    /// Continuous index coordinate `s / ds` of radius `r`.
    pub fn index_of(&self, r: f64) -> f64 {
        match self.kind {
            GridKind::Uniform => r / self.ds,
            GridKind::Sinh { b } => b * (r / b).asinh() / self.ds,
        }
    }

    /// Index of the node nearest to `r`.
    pub fn nearest(&self, r: f64) -> usize {
        (self.index_of(r).round().max(0.0) as usize).min(self.n())
    }

    /// Six-point Lagrange interpolation in `s` of a sampled field.
    pub fn interpolate<T>(&self, values: &[T], r: f64) -> Result<T, GridError>
    where
        T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T>,
    {
        if r < 0.0 || r > self.r_max() * (1.0 + 1e-12) {
            return Err(GridError::OutOfRange { r, r_max: self.r_max() });
        }
        let n = self.n();
        if n < 6 {
            return Err(GridError::TooCoarse { needed: 7, have: n + 1 });
        }
        let x = self.index_of(r);
        let i0 = (x.floor() as isize - 2).clamp(0, n as isize - 5) as usize;
        let mut acc: Option<T> = None;
        for k in 0..6 {
            let mut w = 1.0;
            for m in 0..6 {
                if m != k {
                    w *= (x - (i0 + m) as f64) / (k as f64 - m as f64);
                }
            }
            let term = values[i0 + k] * w;
            acc = Some(match acc {
                None => term,
                Some(a) => a + term,
            });
        }
        Ok(acc.unwrap())
    }

    /// Trapezoid weights `r_s ds` (half weight at the two ends).
    pub fn trapezoid_weights(&self) -> Vec<f64> {
        let n = self.n();
        (0..=n)
            .map(|i| {
                let w = self.rs[i] * self.ds;
                if i == 0 || i == n {
                    0.5 * w
                } else {
                    w
                }
            })
            .collect()
    }
}

impl Grid1D {
    /// Running integrals `F_i = int_0^{r_i} f dr` of a sampled field, by
    /// exact integration of the local six-point interpolant in `s`.
    pub fn cumulative(&self, f: &[f64]) -> Vec<f64> {
        let n = self.n();
        let w = cumulative_weights();
        let g: Vec<f64> = f.iter().zip(&self.rs).map(|(a, b)| a * b).collect();
        let mut out = vec![0.0; n + 1];
        for i in 0..n {
            let j0 = i.saturating_sub(2).min(n.saturating_sub(5));
            let a = i - j0;
            let seg: f64 = (0..6).map(|k| w[a][k] * g[j0 + k]).sum();
            out[i + 1] = out[i] + seg * self.ds;
        }
        out
    }
}

/// `w[a][k] = int_a^{a+1} l_k(x) dx` for the Lagrange basis on nodes `0..6`.
fn cumulative_weights() -> &'static [[f64; 6]; 5] {
    static W: std::sync::OnceLock<[[f64; 6]; 5]> = std::sync::OnceLock::new();
    W.get_or_init(|| {
        let rule = crate::quad::gl16();
        let mut w = [[0.0; 6]; 5];
        for (a, row) in w.iter_mut().enumerate() {
            for (k, wk) in row.iter_mut().enumerate() {
                *wk = rule.integrate(a as f64, a as f64 + 1.0, |x| {
                    (0..6).filter(|&m| m != k).map(|m| (x - m as f64) / (k as f64 - m as f64)).product()
                });
            }
        }
        w
    })
}

fn map_jet(kind: GridKind, s: Jet) -> Jet {
    match kind {
        GridKind::Uniform => s,
        GridKind::Sinh { b } => s.scale(1.0 / b).sinh().scale(b),
    }
}

/// Fourth-order first derivative `d/dr` of a sampled field. Near the origin
/// the field is extended with the given parity (`+1` even, `-1` odd); the
/// outer end uses one-sided stencils.
pub fn d_dr<T>(grid: &Grid1D, v: &[T], parity: f64) -> Vec<T>
where
    T: Copy + std::ops::Mul<f64, Output = T> + std::ops::Add<Output = T> + std::ops::Sub<Output = T>,
{
    let n = grid.n();
    let h = grid.ds();
    let at = |i: isize| -> T {
        if i < 0 {
            v[(-i) as usize] * parity
        } else {
            v[i as usize]
        }
    };
    let mut out = Vec::with_capacity(n + 1);
    for i in 0..=n {
        let ii = i as isize;
        let ds = if i + 2 <= n {
            (at(ii - 2) - at(ii + 2)) * (1.0 / 12.0) + (at(ii + 1) - at(ii - 1)) * (8.0 / 12.0)
        } else {
            // one-sided 5-point, backward
            let b = |k: usize| v[i - k];
            if i == n {
                b(0) * (25.0 / 12.0) + b(1) * (-4.0) + b(2) * 3.0 + b(3) * (-4.0 / 3.0) + b(4) * 0.25
            } else {
                b(0) * (10.0 / 12.0) + v[i + 1] * 0.25 + b(1) * (-18.0 / 12.0) + b(2) * 0.5 + b(3) * (-1.0 / 12.0)
            }
        };
        out.push(ds * (1.0 / (h * grid.rs()[i])));
    }
    out
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn cumulative_integral_is_high_order() {
        let g = Grid1D::sinh(0.05, 64.0, 50.0).unwrap();
        let f: Vec<f64> = g.r().iter().map(|r| (-r * r / 8.0).exp() * r * r).collect();
        let c = g.cumulative(&f);
        // int_0^inf r^2 e^{-r^2/8} dr = sqrt(pi) 8^{3/2} / 4
        let exact = std::f64::consts::PI.sqrt() * 8f64.powf(1.5) / 4.0;
        assert!((c[g.n()] - exact).abs() < 1e-9 * exact);
    }

    #[test]
    fn sinh_grid_reaches_extent_and_is_graded() {
        let g = Grid1D::sinh(0.05, 64.0, 1.0e5).unwrap();
        assert!(g.r_max() >= 1.0e5);
        let i = g.nearest(1.0e4);
        let ratio = g.r()[i + 1] / g.r()[i];
        assert!((ratio - 2f64.powf(1.0 / 64.0)).abs() < 1e-3);
    }

    #[test]
    fn derivative_is_fourth_order() {
        let mut errs = Vec::new();
        for &h in &[0.02, 0.01] {
            let g = Grid1D::uniform(h, 4.0).unwrap();
            let v: Vec<f64> = g.r().iter().map(|r| r.sin()).collect();
            let d = d_dr(&g, &v, -1.0);
            let e = g.r().iter().zip(d.iter()).map(|(r, d)| (d - r.cos()).abs()).fold(0.0, f64::max);
            errs.push(e);
        }
        let order = (errs[0] / errs[1]).log2();
        assert!(order > 3.5, "order {order}");
    }

    #[test]
    fn interpolation_exact_for_quintics() {
        let g = Grid1D::sinh(0.1, 16.0, 50.0).unwrap();
        let f = |s: f64| 1.0 + s - 0.3 * s.powi(5);
        let vals: Vec<f64> = (0..=g.n()).map(|i| f(i as f64)).collect();
        let r = 7.3;
        let x = g.index_of(r);
        assert!((g.interpolate(&vals, r).unwrap() - f(x)).abs() < 1e-8 * f(x).abs());
    }
}
