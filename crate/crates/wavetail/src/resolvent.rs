//! Outgoing resolvent `R_tau = P_tau^-1` of one harmonic, local energy
//! norms, the low-frequency error scan and pointwise bound tables.
//!
//! The discrete system acts on `psi = r v`. Beyond `R_max` the operator is
//! taken flat, so the outgoing condition is imposed exactly through the
//! Riccati-Hankel function `e^{-i tau r} w(tau r)` and the source tail
//! beyond the grid enters through the inhomogeneous term `gamma`.

use num_complex::Complex64;
use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::banded::{BandLu, BandedError};
use crate::grid::{d_dr, Grid1D, GridError};
use crate::jet::Jet;
use crate::operator::{assemble_discrete, DiscreteOperator, OperatorError, RadialOperator, D1_END};
use crate::par::{map_slice, ExecMode};
use crate::quad::{integrate_panels, integrate_to_infinity};
use crate::symbolic::{japanese_bracket, RadialProfile};

type C64 = Complex64;

#[derive(Debug, Error)]
pub enum ResolventError {
    #[error("tau = {0} has positive imaginary part")]
    UpperHalfPlane(C64),
    #[error("singular discrete system at tau = {tau}")]
    Singular { tau: C64 },
    #[error("source has {got} samples, grid has {expected}")]
    SourceLength { expected: usize, got: usize },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("error curve is not monotone in tau near tau = {tau}")]
    NonMonotone { tau: f64 },
    #[error("tau difference step {step} underflows at tau = {tau}")]
    StepUnderflow { tau: f64, step: f64 },
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Right-hand side of `P_tau v = g`.
#[derive(Clone, Debug)]
pub enum Source {
    /// Exact profile; its tail beyond the grid enters the boundary term.
    Profile(RadialProfile),
    /// Samples at the grid nodes, taken to vanish beyond the grid.
    Sampled(Vec<f64>),
}

impl Source {
    fn samples(&self, grid: &Grid1D) -> Result<Vec<f64>, ResolventError> {
        match self {
            Source::Profile(p) => Ok(grid.r().iter().map(|&r| p.eval(r)).collect()),
            Source::Sampled(v) => {
                if v.len() != grid.len() {
                    return Err(ResolventError::SourceLength { expected: grid.len(), got: v.len() });
                }
                Ok(v.clone())
            }
        }
    }
}

#[derive(Clone, Debug)]
pub struct ResolventSolution {
    pub tau: C64,
    pub ell: u32,
    pub grid: Grid1D,
    /// `r v` at the nodes.
    pub psi: Vec<C64>,
    pub v: Vec<C64>,
    /// `|r (d_r + i tau) v|` at `R_max`.
    pub radiation_residual: f64,
    /// `||P_tau v - g|| / ||g||` over the interior nodes.
    pub defect: f64,
    pub le_tau_norm: f64,
}

/// Coefficients of `w(z) = sum_k a_k z^-k` with `e^{-iz} w(z)` the outgoing
/// Riccati-Hankel function of order `ell`.
pub fn hankel_coeffs(ell: u32) -> Vec<C64> {
    let l = (ell * (ell + 1)) as f64;
    let mut a = vec![C64::new(1.0, 0.0)];
    for m in 0..ell as usize {
        let mf = m as f64;
        let next = a[m] * (l - mf * (mf + 1.0)) / C64::new(0.0, 2.0 * (mf + 1.0));
        a.push(next);
    }
    a
}

fn hankel_w(a: &[C64], z: C64) -> (C64, C64) {
    let zi = z.inv();
    let mut w = C64::new(0.0, 0.0);
    let mut wz = C64::new(0.0, 0.0);
    for (k, &c) in a.iter().enumerate() {
        w += c * zi.powu(k as u32);
        wz -= c * (k as f64) * zi.powu(k as u32 + 1);
    }
    (w, wz)
}

/// Resolvent solver for one harmonic on a fixed grid; the discretization is
/// assembled once and reused for every `tau`.
#[derive(Clone, Debug)]
pub struct ResolventSolver {
    d: DiscreteOperator,
}

impl ResolventSolver {
    pub fn new(rop: &RadialOperator, grid: &Grid1D) -> Result<Self, ResolventError> {
        Ok(ResolventSolver { d: assemble_discrete(rop, grid)? })
    }

    pub fn grid(&self) -> &Grid1D {
        &self.d.grid
    }

    pub fn ell(&self) -> u32 {
        self.d.ell
    }

    pub fn discrete(&self) -> &DiscreteOperator {
        &self.d
    }

    /// `psi'(R) + beta psi(R)` is the outgoing boundary functional.
    fn beta(&self, tau: C64) -> C64 {
        let r = self.grid().r_max();
        if tau == C64::new(0.0, 0.0) {
            return C64::new(self.ell() as f64 / r, 0.0);
        }
        let a = hankel_coeffs(self.ell());
        let (w, wz) = hankel_w(&a, tau * r);
        C64::i() * tau - tau * wz / w
    }

    /// Boundary datum `gamma = -(1 / h(R)) int_R^inf h(s) s g(s) ds` for the
    /// outgoing solution `h`.
    fn gamma(&self, tau: C64, g: &Source) -> C64 {
        let p = match g {
            Source::Profile(p) => p,
            Source::Sampled(_) => return C64::new(0.0, 0.0),
        };
        let r = self.grid().r_max();
        if let Some((_, hi)) = p.support_hint() {
            if hi <= r {
                return C64::new(0.0, 0.0);
            }
        }
        let ell = self.ell() as i32;
        if tau == C64::new(0.0, 0.0) {
            let tail = integrate_to_infinity(r, |s| s.powi(1 - ell) * p.eval(s));
            return C64::new(-r.powi(ell) * tail, 0.0);
        }
        let a = hankel_coeffs(self.ell());
        let (w_r, _) = hankel_w(&a, tau * r);
        // int_R^inf e^{-i tau (s - R)} w(tau s) s g(s) ds
        let at = tau.norm();
        let s_switch = (IBP_THRESHOLD / at).max(r);
        let mut near = C64::new(0.0, 0.0);
        if s_switch > r {
            let cap = std::f64::consts::PI / at;
            let pts = fine_panels(r, s_switch, cap);
            let re = integrate_panels(&pts, |s| (hankel_kernel(&a, tau, r, s) * s * p.eval(s)).re);
            let im = integrate_panels(&pts, |s| (hankel_kernel(&a, tau, r, s) * s * p.eval(s)).im);
            near = C64::new(re, im);
        }
        let far = ibp_tail(&a, tau, r, s_switch, p);
        -(near + far) / w_r
    }

    /// Solve `P_tau v = g` with the outgoing condition at `R_max`.
    pub fn solve(&self, tau: C64, g: &Source) -> Result<ResolventSolution, ResolventError> {
        if tau.im > 0.0 {
            return Err(ResolventError::UpperHalfPlane(tau));
        }
        let grid = self.grid();
        let n = grid.n();
        let gs = g.samples(grid)?;
        let lu = self.factor(tau)?;
        let r = grid.r();
        let rs = grid.rs();
        let mut rhs: Vec<C64> = (1..=n).map(|i| C64::new(rs[i] * r[i] * gs[i], 0.0)).collect();
        rhs[n - 1] = self.gamma(tau, g);
        let sol = lu.solve(&rhs).map_err(|_| ResolventError::Singular { tau })?;
        let mut psi = vec![C64::new(0.0, 0.0)];
        psi.extend(sol);
        Ok(self.finish(tau, psi, &gs))
    }

    /// `r v` at the nodes for each source, sharing one factorization.
    pub fn solve_psi(&self, tau: C64, sources: &[Source]) -> Result<Vec<Vec<C64>>, ResolventError> {
        if tau.im > 0.0 {
            return Err(ResolventError::UpperHalfPlane(tau));
        }
        let grid = self.grid();
        let n = grid.n();
        let lu = self.factor(tau)?;
        let (r, rs) = (grid.r(), grid.rs());
        sources
            .iter()
            .map(|g| {
                let gs = g.samples(grid)?;
                let mut rhs: Vec<C64> = (1..=n).map(|i| C64::new(rs[i] * r[i] * gs[i], 0.0)).collect();
                rhs[n - 1] = self.gamma(tau, g);
                let sol = lu.solve(&rhs).map_err(|_| ResolventError::Singular { tau })?;
                let mut psi = Vec::with_capacity(n + 1);
                psi.push(C64::new(0.0, 0.0));
                psi.extend(sol);
                Ok(psi)
            })
            .collect()
    }

    fn factor(&self, tau: C64) -> Result<BandLu<C64>, ResolventError> {
        let grid = self.grid();
        let n = grid.n();
        let mut m = self.d.band(tau);
        let scale = 1.0 / (grid.ds() * grid.rs()[n]);
        for (k, c) in D1_END.iter().enumerate() {
            m.add_to(n - 1, n - 1 - k, C64::new(c * scale, 0.0));
        }
        m.add_to(n - 1, n - 1, self.beta(tau));
        m.factor().map_err(|e| match e {
            BandedError::Singular(_) => ResolventError::Singular { tau },
            other => ResolventError::Operator(other.into()),
        })
    }

    /// Discrete `P_tau v` at the interior nodes (zero at the two ends).
    pub fn apply(&self, tau: C64, psi: &[C64]) -> Vec<C64> {
        let grid = self.grid();
        let n = grid.n();
        let m = self.d.band(tau);
        let out = m.matvec(&psi[1..]).expect("length matches grid");
        let mut pv = vec![C64::new(0.0, 0.0); n + 1];
        for i in 1..n {
            pv[i] = out[i - 1] / (grid.rs()[i] * grid.r()[i]);
        }
        pv
    }

    fn finish(&self, tau: C64, psi: Vec<C64>, gs: &[f64]) -> ResolventSolution {
        let grid = self.grid().clone();
        let n = grid.n();
        let r = grid.r();
        let ell = self.ell();
        let mut v: Vec<C64> = (0..=n).map(|i| if i == 0 { C64::new(0.0, 0.0) } else { psi[i] / r[i] }).collect();
        if ell == 0 {
            v[0] = (psi[1] * 16.0 - psi[2] * 2.0) / (12.0 * grid.ds() * grid.rs()[0]);
        }
        let dpsi_end = (0..5).fold(C64::new(0.0, 0.0), |acc, k| acc + psi[n - k] * D1_END[k])
            / (grid.ds() * grid.rs()[n]);
        let radiation_residual = (dpsi_end - psi[n] / r[n] + C64::i() * tau * psi[n]).norm();
        let pv = self.apply(tau, &psi);
        let w = grid.trapezoid_weights();
        let (mut num, mut den) = (0.0, 0.0);
        for i in 1..n {
            let m = w[i] * r[i] * r[i];
            num += m * (pv[i] - gs[i]).norm_sqr();
            den += m * gs[i] * gs[i];
        }
        let defect = if den > 0.0 { (num / den).sqrt() } else { num.sqrt() };
        let le = le_tau_norm(&v, tau, &grid, ell);
        ResolventSolution { tau, ell, grid, psi, v, radiation_residual, defect, le_tau_norm: le }
    }
}

const IBP_THRESHOLD: f64 = 40.0;

fn hankel_kernel(a: &[C64], tau: C64, r0: f64, s: f64) -> C64 {
    let (w, _) = hankel_w(a, tau * s);
    (-C64::i() * tau * (s - r0)).exp() * w
}

fn fine_panels(a: f64, b: f64, cap: f64) -> Vec<f64> {
    let mut pts = vec![a];
    let mut cur = a;
    while cur < b {
        let next = (cur + (0.5 * cur).min(cap).max(1e-3)).min(b);
        pts.push(next);
        cur = next;
    }
    pts
}

/// `int_S^inf e^{-i tau (s - R)} w(tau s) s g(s) ds` by repeated
/// integration by parts at `S` (valid for `|tau| S` large).
fn ibp_tail(a: &[C64], tau: C64, r0: f64, s0: f64, g: &RadialProfile) -> C64 {
    let gj = g.jet(s0);
    if gj.is_zero() {
        return C64::new(0.0, 0.0);
    }
    let s = Jet::variable(s0);
    let mut derivs = [C64::new(0.0, 0.0); crate::jet::JET_LEN];
    for (k, &c) in a.iter().enumerate() {
        let f = s.powf(1.0 - k as f64) * gj;
        let coef = c * tau.powi(-(k as i32));
        for (j, d) in derivs.iter_mut().enumerate() {
            *d += coef * f.deriv(j);
        }
    }
    let it = C64::i() * tau;
    let mut sum = C64::new(0.0, 0.0);
    let mut prev = f64::INFINITY;
    for (j, d) in derivs.iter().enumerate() {
        let term = d / it.powi(j as i32 + 1);
        if term.norm() > prev {
            break;
        }
        prev = term.norm();
        sum += term;
    }
    (-it * (s0 - r0)).exp() * sum
}

/// Solve `P_tau v = g` on `grid` with the outgoing condition.
pub fn solve_resolvent(
    rop: &RadialOperator,
    tau: C64,
    g: &Source,
    grid: &Grid1D,
) -> Result<ResolventSolution, ResolventError> {
    ResolventSolver::new(rop, grid)?.solve(tau, g)
}

/// `||(|tau| + <r>^-1) v|| + ||v'|| + ||(|tau| + <r>^-1)^-1 D^2 v||`, each in
/// the local energy norm `sup_m || <r>^-1/2 . ||_{L^2(A_m)}` with measure
/// `4 pi r^2 dr`; `|D^2 v|^2 = |v''|^2 + 2 |v' / r|^2` for radial fields.
pub fn le_tau_norm(v: &[C64], tau: C64, grid: &Grid1D, ell: u32) -> f64 {
    let parity = if ell.is_multiple_of(2) { 1.0 } else { -1.0 };
    let d1 = d_dr(grid, v, parity);
    let d2 = d_dr(grid, &d1, -parity);
    let r = grid.r();
    let w = grid.trapezoid_weights();
    let at = tau.norm();
    let n_ann = annulus_index(grid.r_max()) + 1;
    let mut acc = vec![[0.0f64; 3]; n_ann];
    for i in 0..r.len() {
        let br = japanese_bracket(r[i]).unwrap_or(1.0);
        let weight = at + 1.0 / br;
        let hess = if r[i] > 0.0 { d2[i].norm_sqr() + 2.0 * (d1[i] / r[i]).norm_sqr() } else { 3.0 * d2[i].norm_sqr() };
        let m = 4.0 * std::f64::consts::PI * r[i] * r[i] * w[i] / br;
        let k = annulus_index(r[i]);
        acc[k][0] += m * weight * weight * v[i].norm_sqr();
        acc[k][1] += m * d1[i].norm_sqr();
        acc[k][2] += m * hess / (weight * weight);
    }
    (0..3).map(|t| acc.iter().map(|a| a[t]).fold(0.0, f64::max).sqrt()).sum()
}

fn annulus_index(r: f64) -> usize {
    if r < 1.0 {
        0
    } else {
        r.log2().floor() as usize + 1
    }
}

/// Source with decay order `lambda`: `<r>^(-lambda-2.5) chi_>1(r/4)` plus a
/// bump on `[1, 3]`.
pub fn z_source(lambda: u32) -> RadialProfile {
    let p = -(lambda as f64) - 2.5;
    let tail = RadialProfile::bracket_power(p).mul(&RadialProfile::cutoff_above(4.0));
    tail.add(&crate::symbolic::profile::bump_pulse(1.0, 3.0))
        .with_class(crate::symbolic::SymbolClass::L1S(p))
}

/// Geometric grid `tau_k = 2^(-k/2) tau0` for `k = 0..count`.
pub fn geometric_taus(tau0: f64, count: usize) -> Vec<f64> {
    (0..count).map(|k| tau0 * 2f64.powf(-(k as f64) / 2.0)).collect()
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LogFit {
    pub r: f64,
    /// Coefficient of `log(1/tau)` in the rescaled residual.
    pub slope: f64,
    pub intercept: f64,
    pub r_squared: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct LowFreqErrorReport {
    pub lambda: u32,
    pub kappa: u32,
    pub tau_grid: Vec<f64>,
    pub error_norms: Vec<f64>,
    pub radiation_residuals: Vec<f64>,
    pub le_tau_norms: Vec<f64>,
    pub fitted_slope: f64,
    /// Log-template fits at fixed radii, present for `lambda = kappa + 1`.
    pub epsilon_profile: Vec<LogFit>,
}

/// Radii where the log template is tested.
pub const EPSILON_RADII: [f64; 4] = [2.0, 4.0, 8.0, 16.0];

/// Sup over `r in [2, 32]` of `|R_tau g - (R_0 g) e^{-i tau <r>}|` along
/// `tau_grid`, with the slope of `log E` against `log tau`.
pub fn low_freq_scan(
    rop: &RadialOperator,
    g: &RadialProfile,
    lambda: u32,
    tau_grid: &[f64],
    grid: &Grid1D,
    mode: ExecMode,
) -> Result<LowFreqErrorReport, ResolventError> {
    if lambda < 1 || lambda > rop.kappa + 1 {
        return Err(ResolventError::Parameter(format!("lambda = {lambda} outside 1..={}", rop.kappa + 1)));
    }
    if tau_grid.len() < 3 || tau_grid.iter().any(|&t| !(t > 0.0 && t <= 1.0)) {
        return Err(ResolventError::Parameter("tau grid needs at least 3 values in (0, 1]".into()));
    }
    if grid.r_max() < 64.0 {
        return Err(ResolventError::Parameter("grid must reach r = 64".into()));
    }
    let solver = ResolventSolver::new(rop, grid)?;
    let src = Source::Profile(g.clone());
    let v0 = solver.solve(C64::new(0.0, 0.0), &src)?;
    let r = grid.r();
    let window: Vec<usize> = (0..r.len()).filter(|&i| r[i] >= 2.0 && r[i] <= 32.0).collect();
    let bracket: Vec<f64> = r.iter().map(|&x| japanese_bracket(x).unwrap_or(1.0)).collect();
    let sols = map_slice(mode, tau_grid, |&t| solver.solve(C64::new(t, 0.0), &src));
    let mut error_norms = Vec::with_capacity(tau_grid.len());
    let mut radiation_residuals = Vec::new();
    let mut le_tau_norms = Vec::new();
    let mut errors: Vec<Vec<C64>> = Vec::new();
    for (sol, &t) in sols.into_iter().zip(tau_grid) {
        let sol = sol?;
        let e: Vec<C64> = window
            .iter()
            .map(|&i| sol.v[i] - v0.v[i] * (C64::new(0.0, -t * bracket[i])).exp())
            .collect();
        error_norms.push(e.iter().map(|z| z.norm()).fold(0.0, f64::max));
        radiation_residuals.push(sol.radiation_residual);
        le_tau_norms.push(sol.le_tau_norm);
        errors.push(e);
    }
    let mut order: Vec<usize> = (0..tau_grid.len()).collect();
    order.sort_by(|&a, &b| tau_grid[a].total_cmp(&tau_grid[b]));
    for w in order.windows(2) {
        if error_norms[w[1]] < error_norms[w[0]] * (1.0 - 1e-3) {
            return Err(ResolventError::NonMonotone { tau: tau_grid[w[1]] });
        }
    }
    let xs: Vec<f64> = tau_grid.iter().map(|t| t.ln()).collect();
    let ys: Vec<f64> = error_norms.iter().map(|e| e.ln()).collect();
    let fitted_slope = linear_fit(&xs, &ys).0;
    let mut epsilon_profile = Vec::new();
    if lambda == rop.kappa + 1 {
        for &rr in &EPSILON_RADII {
            let k = window.iter().position(|&i| r[i] >= rr).unwrap_or(0);
            let e: Vec<C64> = errors.iter().map(|row| row[k]).collect();
            epsilon_profile.push(log_template_fit(tau_grid, &e, rop.kappa, r[window[k]]));
        }
    }
    Ok(LowFreqErrorReport {
        lambda,
        kappa: rop.kappa,
        tau_grid: tau_grid.to_vec(),
        error_norms,
        radiation_residuals,
        le_tau_norms,
        fitted_slope,
        epsilon_profile,
    })
}

/// Least squares `y = a x + b`; returns `(a, b, R^2)`.
pub fn linear_fit(x: &[f64], y: &[f64]) -> (f64, f64, f64) {
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let sxy: f64 = x.iter().zip(y).map(|(a, b)| (a - mx) * (b - my)).sum();
    let sxx: f64 = x.iter().map(|a| (a - mx) * (a - mx)).sum();
    let syy: f64 = y.iter().map(|b| (b - my) * (b - my)).sum();
    let a = sxy / sxx;
    let r2 = if syy > 0.0 { sxy * sxy / (sxx * syy) } else { 1.0 };
    (a, my - a * mx, r2)
}

/// Fits `E(tau) = sum_{j<=kappa} a_j tau^j + tau^(kappa+1) (A + B log(1/tau))`
/// jointly (complex least squares, rows weighted by `tau^-(kappa+1)` so
/// every `tau` counts equally), then reports how well the rescaled
/// residual `(E - sum a_j tau^j) / tau^(kappa+1)` follows an affine function
/// of `log(1/tau)`. At fixed `r` the `tau^kappa <r>^-1 eps_1(r)` piece of the
/// template is a constant multiple of `tau^kappa`; the logarithm enters
/// through `tau^(kappa+1) eps_2(1/tau)`.
pub fn log_template_fit(taus: &[f64], e: &[C64], kappa: u32, r: f64) -> LogFit {
    let k = kappa as usize;
    let cols = k + 2;
    let basis = |t: f64| -> Vec<f64> {
        let mut b: Vec<f64> = (1..=k).map(|j| t.powi(j as i32)).collect();
        let tk = t.powi(k as i32 + 1);
        b.push(tk);
        b.push(tk * (1.0 / t).ln());
        b.iter().map(|x| x / tk).collect::<Vec<f64>>()
    };
    let rows: Vec<Vec<f64>> = taus.iter().map(|&t| basis(t)).collect();
    // Normal equations in scaled columns keep the conditioning sane.
    let scale: Vec<f64> = (0..cols).map(|c| rows.iter().map(|b| b[c] * b[c]).sum::<f64>().sqrt()).collect();
    let mut ata = vec![vec![0.0; cols]; cols];
    let mut atb = vec![C64::new(0.0, 0.0); cols];
    for ((b, y), &t) in rows.iter().zip(e).zip(taus) {
        let y = y / t.powi(k as i32 + 1);
        for i in 0..cols {
            for j in 0..cols {
                ata[i][j] += b[i] / scale[i] * b[j] / scale[j];
            }
            atb[i] += y * (b[i] / scale[i]);
        }
    }
    let coef = solve_dense(ata, atb);
    let poly: Vec<C64> = (0..k).map(|j| coef[j] / scale[j]).collect();
    let xs: Vec<f64> = taus.iter().map(|t| (1.0 / t).ln()).collect();
    let resid: Vec<C64> = taus
        .iter()
        .zip(e)
        .map(|(&t, y)| {
            let p: C64 = poly.iter().enumerate().map(|(j, a)| a * t.powi(j as i32 + 1)).sum();
            (y - p) / t.powi(k as i32 + 1)
        })
        .collect();
    // complex affine regression in log(1/tau)
    let n = xs.len() as f64;
    let mx = xs.iter().sum::<f64>() / n;
    let my: C64 = resid.iter().sum::<C64>() / n;
    let sxx: f64 = xs.iter().map(|x| (x - mx) * (x - mx)).sum();
    let sxy: C64 = xs.iter().zip(&resid).map(|(x, y)| (y - my) * (x - mx)).sum();
    let slope = sxy / sxx;
    let intercept = my - slope * mx;
    let ss_tot: f64 = resid.iter().map(|y| (y - my).norm_sqr()).sum();
    let ss_res: f64 = xs.iter().zip(&resid).map(|(x, y)| (y - intercept - slope * x).norm_sqr()).sum();
    let r_squared = if ss_tot > 0.0 { 1.0 - ss_res / ss_tot } else { 0.0 };
    LogFit { r, slope: slope.norm(), intercept: intercept.norm(), r_squared }
}

fn solve_dense(mut a: Vec<Vec<f64>>, mut b: Vec<C64>) -> Vec<C64> {
    let n = b.len();
    for k in 0..n {
        let p = (k..n).max_by(|&i, &j| a[i][k].abs().total_cmp(&a[j][k].abs())).unwrap_or(k);
        a.swap(k, p);
        b.swap(k, p);
        for i in k + 1..n {
            let f = a[i][k] / a[k][k];
            for j in k..n {
                a[i][j] -= f * a[k][j];
            }
            let bk = b[k];
            b[i] -= bk * f;
        }
    }
    let mut x = vec![C64::new(0.0, 0.0); n];
    for k in (0..n).rev() {
        let mut s = b[k];
        for j in k + 1..n {
            s -= x[j] * a[k][j];
        }
        x[k] = s / a[k][k];
    }
    x
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    /// `|tau| >= 1`: `sup_r |(tau d_tau)^p (v e^{i tau <r>})| <r> |tau|^(1-p)`
    High,
    /// `|tau| <= 1`: `sup_{<r> <= 1/|tau|} |(tau d_tau)^p v|`
    Low,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointwiseRow {
    pub tau: f64,
    pub p: u32,
    pub regime: Regime,
    pub value: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TableSpread {
    pub p: u32,
    pub regime: Regime,
    /// Largest entry over the entry nearest `|tau| = 1`: growth in the
    /// asymptotic direction of the regime.
    pub growth: f64,
    /// Largest over smallest entry.
    pub spread: f64,
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct PointwiseTable {
    pub rows: Vec<PointwiseRow>,
    pub spreads: Vec<TableSpread>,
}

impl PointwiseTable {
    /// No table grows by `factor` or more away from `|tau| = 1`.
    pub fn bounded(&self, factor: f64) -> bool {
        self.spreads.iter().all(|s| s.growth < factor)
    }
}

/// Relative step of the centered `tau` difference.
pub const TAU_STEP: f64 = 1e-3;

/// Tables of the pointwise resolvent bounds for `p = 0..=p_max` over the
/// real `tau` set; `tau d_tau` is a centered difference with relative step
/// [`TAU_STEP`].
pub fn pointwise_bound_check(
    rop: &RadialOperator,
    g: &RadialProfile,
    tau_set: &[f64],
    p_max: u32,
    grid: &Grid1D,
    mode: ExecMode,
) -> Result<PointwiseTable, ResolventError> {
    if p_max > 1 {
        return Err(ResolventError::Parameter("p_max must be 0 or 1".into()));
    }
    for &t in tau_set {
        if !(t.abs() * TAU_STEP > 1e-12) {
            return Err(ResolventError::StepUnderflow { tau: t, step: t * TAU_STEP });
        }
    }
    let solver = ResolventSolver::new(rop, grid)?;
    let src = Source::Profile(g.clone());
    let r = grid.r();
    let bracket: Vec<f64> = r.iter().map(|&x| japanese_bracket(x).unwrap_or(1.0)).collect();
    let rows = map_slice(mode, tau_set, |&t| -> Result<Vec<PointwiseRow>, ResolventError> {
        let at = t.abs();
        let regime = if at >= 1.0 { Regime::High } else { Regime::Low };
        let field = |tt: f64| -> Result<Vec<C64>, ResolventError> {
            let s = solver.solve(C64::new(tt, 0.0), &src)?;
            Ok(match regime {
                Regime::High => s.v.iter().zip(&bracket).map(|(v, b)| v * C64::new(0.0, tt * b).exp()).collect(),
                Regime::Low => s.v,
            })
        };
        let f0 = field(t)?;
        let mut derivs = vec![f0];
        if p_max >= 1 {
            let fp = field(t * (1.0 + TAU_STEP))?;
            let fm = field(t * (1.0 - TAU_STEP))?;
            derivs.push(fp.iter().zip(&fm).map(|(a, b)| (a - b) / (2.0 * TAU_STEP)).collect());
        }
        Ok(derivs
            .iter()
            .enumerate()
            .map(|(p, f)| {
                let value = match regime {
                    Regime::High => f
                        .iter()
                        .zip(&bracket)
                        .map(|(z, b)| z.norm() * b * at.powi(1 - p as i32))
                        .fold(0.0, f64::max),
                    Regime::Low => f
                        .iter()
                        .zip(&bracket)
                        .filter(|(_, &b)| b * at <= 1.0)
                        .map(|(z, _)| z.norm())
                        .fold(0.0, f64::max),
                };
                PointwiseRow { tau: t, p: p as u32, regime, value }
            })
            .collect())
    });
    let mut all = Vec::new();
    for r in rows {
        all.extend(r?);
    }
    let mut spreads = Vec::new();
    for p in 0..=p_max {
        for regime in [Regime::High, Regime::Low] {
            let rows: Vec<&PointwiseRow> = all.iter().filter(|x| x.p == p && x.regime == regime).collect();
            let Some(reference) = rows.iter().min_by(|a, b| a.tau.abs().ln().abs().total_cmp(&b.tau.abs().ln().abs()))
            else {
                continue;
            };
            let hi = rows.iter().map(|x| x.value).fold(0.0, f64::max);
            let lo = rows.iter().map(|x| x.value).fold(f64::INFINITY, f64::min);
            let ratio = |a: f64, b: f64| if a == 0.0 { 1.0 } else { a / b };
            spreads.push(TableSpread { p, regime, growth: ratio(hi, reference.value), spread: ratio(hi, lo) });
        }
    }
    Ok(PointwiseTable { rows: all, spreads })
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::quad::panels;

    fn shell(r0: f64, width: f64) -> RadialProfile {
        // unit-mass smooth shell: total 4 pi int r^2 g dr = 1
        let b = crate::symbolic::profile::bump_pulse(r0 - width, r0 + width);
        let mass = 4.0 * std::f64::consts::PI * integrate_panels(&panels(r0 - width, r0 + width, &[], 0.05, 0.1), |r| {
            r * r * b.eval(r)
        });
        b.scale(1.0 / mass)
    }

    /// Flat `l = 0` Green function: `psi(r) = int G(r, s) s g(s) ds` with
    /// `G = u(r_<) h(r_>) / W`, `u = sin(tau r)`, `h = e^{-i tau r}`.
    fn flat_green(tau: C64, g: &RadialProfile, lo: f64, hi: f64, r: f64) -> C64 {
        let u = |x: f64| (tau * x).sin();
        let h = |x: f64| (-C64::i() * tau * x).exp();
        // W = u h' - u' h = -tau (i sin + cos) e^{-i tau x} = -tau
        let wr = -tau;
        let pts = panels(lo, hi, &[r], 0.02, 0.01);
        let re = integrate_panels(&pts, |s| {
            let k = if s < r { u(s) * h(r) } else { u(r) * h(s) };
            (k * s * g.eval(s) / wr).re
        });
        let im = integrate_panels(&pts, |s| {
            let k = if s < r { u(s) * h(r) } else { u(r) * h(s) };
            (k * s * g.eval(s) / wr).im
        });
        C64::new(re, im) / r
    }

    #[test]
    fn flat_green_function_damped() {
        let g = shell(5.0, 1.0);
        let tau = C64::new(0.0, -0.5);
        let grid = Grid1D::uniform(0.02, 60.0).unwrap();
        let sol = solve_resolvent(&RadialOperator::flat(0), tau, &Source::Profile(g.clone()), &grid).unwrap();
        let mut worst: f64 = 0.0;
        let mut peak: f64 = 0.0;
        for &r in &[1.0, 3.0, 4.5, 5.0, 6.2, 8.0, 12.0] {
            let exact = flat_green(tau, &g, 4.0, 6.0, r);
            let got = sol.v[grid.nearest(r)];
            worst = worst.max((got - exact).norm());
            peak = peak.max(exact.norm());
        }
        assert!(worst < 1e-6 * peak, "worst {worst:e} peak {peak:e}");
        assert!(sol.defect < 1e-8, "defect {:e}", sol.defect);
    }

    #[test]
    fn flat_green_function_real_tau() {
        let g = shell(5.0, 1.0);
        let tau = C64::new(0.7, 0.0);
        let grid = Grid1D::uniform(0.02, 40.0).unwrap();
        let sol = solve_resolvent(&RadialOperator::flat(0), tau, &Source::Profile(g.clone()), &grid).unwrap();
        for &r in &[2.0, 5.0, 9.0, 30.0] {
            let exact = flat_green(tau, &g, 4.0, 6.0, r);
            let got = sol.v[grid.nearest(r)];
            assert!((got - exact).norm() < 1e-6 * exact.norm().max(1e-3), "r = {r}: {got} vs {exact}");
        }
    }

    #[test]
    fn outgoing_phase_and_residual() {
        let g = shell(5.0, 1.0);
        let grid = Grid1D::uniform(0.05, 2.0e4).unwrap();
        let sol = solve_resolvent(&RadialOperator::flat(0), C64::new(0.4, 0.0), &Source::Profile(g), &grid).unwrap();
        let peak = sol.psi.iter().map(|z| z.norm()).fold(0.0, f64::max);
        assert!(sol.radiation_residual < 1e-4 * peak);
        // arg(psi) advances like -tau r in the outer decade
        let i = grid.nearest(1.0e4);
        let j = grid.nearest(1.5e4);
        let ratio = sol.psi[j] / sol.psi[i];
        let expect = C64::new(0.0, -0.4 * (grid.r()[j] - grid.r()[i])).exp();
        assert!((ratio - expect).norm() < 1e-4);
    }

    #[test]
    fn higher_harmonic_and_tail_source() {
        // l = 2 flat, source with an algebraic tail crossing R_max: compare
        // against a solve on a twice longer grid.
        let g = z_source(1);
        let rop = RadialOperator::flat(2);
        let tau = C64::new(0.3, -0.05);
        let a = solve_resolvent(&rop, tau, &Source::Profile(g.clone()), &Grid1D::uniform(0.05, 80.0).unwrap()).unwrap();
        let grid_b = Grid1D::uniform(0.05, 160.0).unwrap();
        let b = solve_resolvent(&rop, tau, &Source::Profile(g), &grid_b).unwrap();
        for &r in &[1.0, 5.0, 20.0, 60.0] {
            let va = a.v[a.grid.nearest(r)];
            let vb = b.v[grid_b.nearest(r)];
            assert!((va - vb).norm() < 1e-7 * vb.norm(), "r = {r}: {va} vs {vb}");
        }
    }

    #[test]
    fn conjugate_symmetry() {
        let g = shell(3.0, 1.0);
        let grid = Grid1D::uniform(0.05, 30.0).unwrap();
        let s = ResolventSolver::new(&RadialOperator::flat(1), &grid).unwrap();
        let a = s.solve(C64::new(0.8, 0.0), &Source::Profile(g.clone())).unwrap();
        let b = s.solve(C64::new(-0.8, 0.0), &Source::Profile(g)).unwrap();
        let err = a.v.iter().zip(&b.v).map(|(x, y)| (x - y.conj()).norm()).fold(0.0, f64::max);
        assert!(err < 1e-10);
    }

    #[test]
    fn upper_half_plane_is_rejected() {
        let grid = Grid1D::uniform(0.1, 10.0).unwrap();
        let r = solve_resolvent(&RadialOperator::flat(0), C64::new(0.1, 0.2), &Source::Sampled(vec![0.0; grid.len()]), &grid);
        assert!(matches!(r, Err(ResolventError::UpperHalfPlane(_))));
    }

    #[test]
    fn le_norm_zero_and_monotone() {
        let grid = Grid1D::uniform(0.05, 20.0).unwrap();
        let zero = vec![C64::new(0.0, 0.0); grid.len()];
        assert_eq!(le_tau_norm(&zero, C64::new(0.5, 0.0), &grid, 0), 0.0);
    }
}
