//! The conjugated wave operator, its per-harmonic radial reduction and the
//! banded discretization on `psi = r phi`.
//!
//! With `F = f + h` the reduced spatial operator is
//! `L psi = (K_r psi')' - (K_r'/r + K_t l(l+1)/r^2 - c) psi`, where
//! `K_r = (1 + F_rr)/(1 - F_tt)`, `K_t = (1 + F_ww)/(1 - F_tt)` and `c` collects
//! the conjugation scalar `A r^-2 (r^2 B^rr A')'` and the potential. The
//! time coupling is `(2 p d_r + p') d_t` with `p = F_tr / (1 - F_tt)`.

use std::sync::Arc;

use num_complex::Complex64;
use thiserror::Error;

use crate::banded::{BandMatrix, BandedError};
use crate::grid::{Grid1D, GridError};
use crate::jet::Jet;
use crate::metric::{FieldJets, MetricError, NormalizedMetric};
use crate::par::{map_slice, ExecMode};
use crate::symbolic::{RadialProfile, SymbolClass};

#[derive(Debug, Error)]
pub enum OperatorError {
    #[error("1 - F_tt = {value} is not positive at rho = {rho}")]
    TimeFunction { rho: f64, value: f64 },
    #[error("metric determinant has the wrong sign at rho = {0}")]
    Determinant(f64),
    #[error("grid too coarse: {0} nodes, need at least 8")]
    GridTooCoarse(usize),
    #[error("tau = {0} has positive imaginary part")]
    UpperHalfPlane(Complex64),
    #[error(transparent)]
    Metric(#[from] MetricError),
    #[error(transparent)]
    Banded(#[from] BandedError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Coefficient jets (Taylor in `rho`) at one point.
#[derive(Clone, Copy, Debug)]
pub struct LocalCoeffs {
    pub k_r: Jet,
    pub k_t: Jet,
    pub c: Jet,
    pub p: Jet,
}

impl LocalCoeffs {
    pub fn flat() -> Self {
        LocalCoeffs { k_r: Jet::constant(1.0), k_t: Jet::constant(1.0), c: Jet::constant(0.0), p: Jet::constant(0.0) }
    }
}

/// Evaluate the operator coefficients from component jets at `rho0`.
pub fn local_from_fields(fj: &FieldJets, rho0: f64) -> Result<LocalCoeffs, OperatorError> {
    let [tt, tr, rr, ww] = fj.total();
    let one = Jet::constant(1.0);
    let lapse = one - tt;
    if !(lapse.value() > 0.0) {
        return Err(OperatorError::TimeFunction { rho: rho0, value: lapse.value() });
    }
    let det = (tt - 1.0) * (rr + 1.0) - tr * tr;
    if !(det.value() < 0.0) {
        return Err(OperatorError::Determinant(rho0));
    }
    let k_r = (rr + 1.0) / lapse;
    let k_t = (ww + 1.0) / lapse;
    let p = tr / lapse;
    let flat_part = tt.is_zero() && tr.is_zero() && rr.is_zero() && ww.is_zero();
    let conj = if flat_part {
        Jet::constant(0.0)
    } else {
        let sqrt_g = ((-det).sqrt() * (ww + 1.0)).recip();
        let a = lapse.powf(-0.5) * sqrt_g.powf(-0.5);
        let b = sqrt_g * (rr + 1.0);
        let ap = a.derivative();
        let app = ap.derivative();
        let bp = b.derivative();
        if rho0 > 1e-8 {
            let r = Jet::variable(rho0);
            a * (b * app + bp * ap + b * ap.scale(2.0) / r)
        } else {
            a * (b * app.scale(3.0) + bp * ap)
        }
    };
    let c = conj + fj.v / lapse;
    Ok(LocalCoeffs { k_r, k_t, c, p })
}

type Sampler = dyn Fn(&[f64]) -> Result<Vec<LocalCoeffs>, OperatorError> + Send + Sync;

/// Coefficients of the conjugated operator for a radial metric, as
/// functions of the normalized radius.
#[derive(Clone)]
pub struct OperatorCoeffs {
    pub kappa: u32,
    /// `A = (-g^tt)^(-1/2) |g|^(-1/4)`
    pub a: RadialProfile,
    /// `|g|^(1/2) g^rr`
    pub b_rr: RadialProfile,
    /// Radial part of `p_1`: `p_1^i = p1 x^i / r`.
    pub p1: RadialProfile,
    /// `p_2^ij = p2_radial x^i x^j / r^2 + (p2_perp + r^2 p2_omega)(delta^ij - x^i x^j / r^2)`
    pub p2_radial: RadialProfile,
    pub p2_perp: RadialProfile,
    /// `(h^tt + h^ww) / r^2`
    pub p2_omega: RadialProfile,
    /// Conjugation scalar `A r^-2 (r^2 B^rr A')'`.
    pub conj: RadialProfile,
    pub v_r: RadialProfile,
    pub v_ell: RadialProfile,
    sampler: Arc<Sampler>,
}

impl std::fmt::Debug for OperatorCoeffs {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("OperatorCoeffs").field("kappa", &self.kappa).finish()
    }
}

impl OperatorCoeffs {
    /// Local coefficient jets at increasing radii.
    pub fn sample(&self, rho: &[f64]) -> Result<Vec<LocalCoeffs>, OperatorError> {
        (self.sampler)(rho)
    }

    pub fn flat() -> Self {
        let z = RadialProfile::zero();
        OperatorCoeffs {
            kappa: 1,
            a: RadialProfile::constant(1.0),
            b_rr: RadialProfile::constant(1.0),
            p1: z.clone(),
            p2_radial: z.clone(),
            p2_perp: z.clone(),
            p2_omega: z.clone(),
            conj: z.clone(),
            v_r: z.clone(),
            v_ell: z,
            sampler: Arc::new(|rho: &[f64]| Ok(vec![LocalCoeffs::flat(); rho.len()])),
        }
    }
}

fn field_profile<F>(nm: &NormalizedMetric, class: SymbolClass, f: F) -> RadialProfile
where
    F: Fn(&FieldJets, f64) -> Jet + Send + Sync + 'static,
{
    let nm = nm.clone();
    RadialProfile::new(
        move |y| {
            let rho0 = y.value();
            let fj = nm.fields(Jet::variable(rho0));
            y.compose(&f(&fj, rho0).c)
        },
        class,
    )
}

fn local_profile<F>(nm: &NormalizedMetric, class: SymbolClass, pick: F) -> RadialProfile
where
    F: Fn(&LocalCoeffs) -> Jet + Send + Sync + 'static,
{
    field_profile(nm, class, move |fj, rho0| {
        local_from_fields(fj, rho0).map(|l| pick(&l)).unwrap_or(Jet::constant(f64::NAN))
    })
}

/// Coefficients of `P` for a normalized radial metric.
pub fn build_operator(nm: &NormalizedMetric) -> Result<OperatorCoeffs, OperatorError> {
    let kq = -(nm.kappa() as f64);
    // validate on the test radii before handing out lazy profiles
    let probe: Vec<f64> = (0..=400).map(|i| 0.05 * i as f64).chain((1..=60).map(|k| 20.0 * 1.2f64.powi(k))).collect();
    for &rho in &probe {
        local_from_fields(&nm.fields(Jet::variable(rho)), rho)?;
    }
    let a = field_profile(nm, SymbolClass::S(0.0), |fj, _| {
        let [tt, tr, rr, ww] = fj.total();
        let lapse = Jet::constant(1.0) - tt;
        let det = (tt - 1.0) * (rr + 1.0) - tr * tr;
        let sqrt_g = ((-det).sqrt() * (ww + 1.0)).recip();
        lapse.powf(-0.5) * sqrt_g.powf(-0.5)
    });
    let b_rr = field_profile(nm, SymbolClass::S(0.0), |fj, _| {
        let [tt, tr, rr, ww] = fj.total();
        let det = (tt - 1.0) * (rr + 1.0) - tr * tr;
        ((-det).sqrt() * (ww + 1.0)).recip() * (rr + 1.0)
    });
    let p1 = local_profile(nm, SymbolClass::L1S(kq), |l| l.p);
    let p2_radial = local_profile(nm, SymbolClass::L1S(kq), |l| l.k_r - Jet::constant(1.0));
    let p2_omega = field_profile(nm, SymbolClass::SRad(kq - 2.0), |fj, rho0| {
        let r = Jet::variable(rho0.max(1e-8));
        (fj.h[0] + fj.h[3]) / (r * r)
    });
    let p2_perp = field_profile(nm, SymbolClass::L1S(kq), |fj, rho0| {
        local_from_fields(fj, rho0)
            .map(|l| l.k_t - Jet::constant(1.0) - fj.h[0] - fj.h[3])
            .unwrap_or(Jet::constant(f64::NAN))
    });
    let v_r = field_profile(nm, SymbolClass::SRad(kq - 2.0), |fj, _| {
        let lapse = Jet::constant(1.0) - fj.h[0] - fj.f[0];
        fj.v / lapse
    });
    let conj = field_profile(nm, SymbolClass::SRad(kq - 2.0), move |fj, rho0| {
        let lapse = Jet::constant(1.0) - fj.h[0] - fj.f[0];
        local_from_fields(fj, rho0).map(|l| l.c - fj.v / lapse).unwrap_or(Jet::constant(f64::NAN))
    });
    let v_ell = match &nm.spec.v_ell {
        Some(v) => {
            let (v, nm2) = (v.clone(), nm.clone());
            RadialProfile::new(
                move |y| {
                    let fj = nm2.fields(y);
                    v.apply(y) / (Jet::constant(1.0) - fj.h[0] - fj.f[0])
                },
                SymbolClass::L1S(kq - 2.0),
            )
        }
        None => RadialProfile::zero(),
    };
    let nm2 = nm.clone();
    let v_ell2 = v_ell.clone();
    let sampler = move |rho: &[f64]| -> Result<Vec<LocalCoeffs>, OperatorError> {
        let radii = nm2.radii_at(rho);
        let out: Vec<Result<LocalCoeffs, OperatorError>> = map_slice(ExecMode::Parallel, &radii, |&r0| {
            let (rho0, fj) = nm2.fields_at_r(r0);
            let mut l = local_from_fields(&fj, rho0)?;
            if nm2.spec.v_ell.is_some() {
                l.c += v_ell2.jet(rho0);
            }
            Ok(l)
        });
        out.into_iter().collect()
    };
    Ok(OperatorCoeffs {
        kappa: nm.kappa(),
        a,
        b_rr,
        p1,
        p2_radial,
        p2_perp,
        p2_omega,
        conj,
        v_r,
        v_ell,
        sampler: Arc::new(sampler),
    })
}

/// Per-harmonic reduction
/// `L phi = (1 + a2) phi'' + (2/r + a1) phi' - (1 + w) l(l+1)/r^2 phi + c phi`
/// with `b1` the coefficient of the `d_t` coupling.
#[derive(Clone)]
pub struct RadialOperator {
    pub ell: u32,
    pub kappa: u32,
    pub a2: RadialProfile,
    pub a1: RadialProfile,
    pub w: RadialProfile,
    pub c: RadialProfile,
    pub b1: RadialProfile,
    sampler: Arc<Sampler>,
}

impl std::fmt::Debug for RadialOperator {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("RadialOperator").field("ell", &self.ell).field("kappa", &self.kappa).finish()
    }
}

/// Reduce to the harmonic `ell`.
pub fn radial_reduce(oc: &OperatorCoeffs, ell: u32) -> RadialOperator {
    let kr = oc.p2_radial.clone();
    let a1 = RadialProfile::new(
        move |y| {
            let rho0 = y.value().max(1e-8);
            let a2 = kr.jet(rho0);
            let r = Jet::variable(rho0);
            let v = a2.scale(2.0) / r + a2.derivative();
            y.compose(&v.c)
        },
        SymbolClass::L1S(-(oc.kappa as f64) - 1.0),
    );
    let w = oc.p2_perp.add(&oc.p2_omega.mul(&RadialProfile::radius().mul(&RadialProfile::radius())));
    let c = oc.conj.add(&oc.v_r).add(&oc.v_ell);
    RadialOperator {
        ell,
        kappa: oc.kappa,
        a2: oc.p2_radial.clone(),
        a1,
        w,
        c,
        b1: oc.p1.clone(),
        sampler: oc.sampler.clone(),
    }
}

impl RadialOperator {
    pub fn flat(ell: u32) -> Self {
        radial_reduce(&OperatorCoeffs::flat(), ell)
    }

    pub fn sample(&self, rho: &[f64]) -> Result<Vec<LocalCoeffs>, OperatorError> {
        (self.sampler)(rho)
    }

    /// `L_l phi` at `r` for an exact profile `phi`.
    pub fn apply(&self, phi: &RadialProfile, r: f64) -> f64 {
        let j = phi.jet(r);
        let l = (self.ell * (self.ell + 1)) as f64;
        (1.0 + self.a2.eval(r)) * j.deriv(2) + (2.0 / r + self.a1.eval(r)) * j.deriv(1)
            - (1.0 + self.w.eval(r)) * l / (r * r) * j.value()
            + self.c.eval(r) * j.value()
    }

    /// Coefficient table rows `(r, a2, a1, w, c, b1)` at the grid nodes
    /// (the origin row is skipped).
    pub fn coefficient_table(&self, grid: &Grid1D) -> Result<Vec<[f64; 6]>, OperatorError> {
        let rho = &grid.r()[1..];
        let loc = self.sample(rho)?;
        Ok(rho
            .iter()
            .zip(loc.iter())
            .map(|(&r, l)| {
                let a2 = l.k_r.value() - 1.0;
                [r, a2, 2.0 * a2 / r + l.k_r.deriv(1), l.k_t.value() - 1.0, l.c.value(), l.p.value()]
            })
            .collect())
    }
}

const D2_5: [f64; 5] = [-1.0 / 12.0, 4.0 / 3.0, -2.5, 4.0 / 3.0, -1.0 / 12.0];
const D1_5: [f64; 5] = [1.0 / 12.0, -2.0 / 3.0, 0.0, 2.0 / 3.0, -1.0 / 12.0];
const D2_3: [f64; 5] = [0.0, 1.0, -2.0, 1.0, 0.0];
const D1_3: [f64; 5] = [0.0, -0.5, 0.0, 0.5, 0.0];
/// One-sided fourth-order first derivative at the last node, acting on
/// `psi_N, psi_(N-1), ..., psi_(N-4)`.
pub const D1_END: [f64; 5] = [25.0 / 12.0, -4.0, 3.0, -4.0 / 3.0, 0.25];

/// Discretized weighted operator: row `i` of `H` and `A` holds the
/// coefficients of `psi_(i-2) .. psi_(i+2)` in
/// `r_s (L psi)_i = (H psi)_i` and `r_s (2 p psi' + p' psi)_i = (A psi)_i`.
/// Rows `1..N-1` are assembled; `psi_0 = 0` and row `N` is left to the
/// caller's boundary condition.
#[derive(Clone, Debug)]
pub struct DiscreteOperator {
    pub ell: u32,
    pub grid: Grid1D,
    pub h: Vec<[f64; 5]>,
    pub a: Vec<[f64; 5]>,
    /// `r_s` at the nodes.
    pub weight: Vec<f64>,
    /// Row sums of `H`, computed from differences of the coefficients so
    /// a constant field costs no rounding (rows `3..N-1`).
    pub row_sum: Vec<f64>,
    pub has_coupling: bool,
}

impl DiscreteOperator {
    pub fn n(&self) -> usize {
        self.grid.n()
    }

    /// `(H psi)_i` for rows `1..N-1` written into `out` (other rows zero).
    pub fn apply_h(&self, psi: &[f64], out: &mut [f64]) {
        apply_rows(&self.h, psi, out, 1, 2.min(self.n() - 1));
        let n = self.n();
        for i in 3..n - 1 {
            out[i] = self.h_row(psi, i);
        }
        let (i, c) = (n - 1, &self.h[n - 1]);
        let p = psi[i];
        out[i] = c[0] * (psi[i - 2] - p) + c[1] * (psi[i - 1] - p) + c[3] * (psi[i + 1] - p) + self.row_sum[i] * p;
    }

    /// `(H psi)_i` in difference form, for `3 <= i <= N - 1`; `psi` must
    /// extend to index `i + 2`.
    #[inline]
    pub fn h_row(&self, psi: &[f64], i: usize) -> f64 {
        let c = &self.h[i];
        let p = psi[i];
        c[0] * (psi[i - 2] - p) + c[1] * (psi[i - 1] - p) + c[3] * (psi[i + 1] - p) + c[4] * (psi[i + 2] - p)
            + self.row_sum[i] * p
    }

    pub fn apply_a(&self, psi: &[f64], out: &mut [f64]) {
        apply_rows(&self.a, psi, out, 1, self.n() - 1);
    }

    /// Band matrix of `H + i tau A + tau^2 W` on unknowns `psi_1..psi_N`
    /// (matrix index `i - 1`), with an empty last row.
    pub fn band(&self, tau: Complex64) -> BandMatrix<Complex64> {
        let n = self.n();
        let mut m = BandMatrix::zeros(n, 4, 2);
        let it = Complex64::i() * tau;
        for i in 1..n {
            for k in 0..5 {
                let j = i + k;
                if j < 2 || j - 2 == 0 || j - 2 > n {
                    continue;
                }
                let col = j - 2;
                let v = Complex64::new(self.h[i][k], 0.0) + it * self.a[i][k];
                if v != Complex64::new(0.0, 0.0) {
                    m.add_to(i - 1, col - 1, v);
                }
            }
            m.add_to(i - 1, i - 1, tau * tau * self.weight[i]);
        }
        m
    }

    /// Real band matrices of `H` and `A` (last row empty).
    pub fn real_parts(&self) -> (BandMatrix<f64>, BandMatrix<f64>) {
        let n = self.n();
        let mut h = BandMatrix::zeros(n, 4, 2);
        let mut a = BandMatrix::zeros(n, 4, 2);
        for i in 1..n {
            for k in 0..5 {
                let j = i + k;
                if j < 2 || j - 2 == 0 || j - 2 > n {
                    continue;
                }
                h.add_to(i - 1, j - 3, self.h[i][k]);
                a.add_to(i - 1, j - 3, self.a[i][k]);
            }
        }
        (h, a)
    }
}

fn apply_rows(rows: &[[f64; 5]], psi: &[f64], out: &mut [f64], lo: usize, hi: usize) {
    let n = psi.len() - 1;
    for v in out.iter_mut() {
        *v = 0.0;
    }
    for i in lo..=hi.min(n) {
        let row = &rows[i];
        let mut s = 0.0;
        if i >= 2 && i + 2 <= n {
            let p = &psi[i - 2..=i + 2];
            s = row[0] * p[0] + row[1] * p[1] + row[2] * p[2] + row[3] * p[3] + row[4] * p[4];
        } else {
            for (k, &c) in row.iter().enumerate() {
                let j = i + k;
                if c != 0.0 && j >= 2 && j - 2 <= n {
                    s += c * psi[j - 2];
                }
            }
        }
        out[i] = s;
    }
}

/// Assemble the weighted discrete operator of harmonic `rop.ell` on `grid`.
pub fn assemble_discrete(rop: &RadialOperator, grid: &Grid1D) -> Result<DiscreteOperator, OperatorError> {
    let n = grid.n();
    if n < 8 {
        return Err(OperatorError::GridTooCoarse(n + 1));
    }
    let ds = grid.ds();
    let loc = {
        let mut v = vec![LocalCoeffs::flat()];
        v.extend(rop.sample(&grid.r()[1..])?);
        v
    };
    let ll = (rop.ell * (rop.ell + 1)) as f64;
    let parity = if rop.ell.is_multiple_of(2) { -1.0 } else { 1.0 };
    // K~ = K_r / r_s and its second s-derivative, exactly through jets
    let mut kt = vec![0.0; n + 1];
    let mut kt_ss = vec![0.0; n + 1];
    let mut p = vec![0.0; n + 1];
    let mut diag = vec![0.0; n + 1];
    for i in 1..=n {
        let rs_jet = grid.map_jet_at(i);
        let kr = rs_jet.compose(&loc[i].k_r.c);
        let ktil = kr / rs_jet.derivative();
        kt[i] = ktil.value();
        kt_ss[i] = ktil.deriv(2);
        p[i] = loc[i].p.value();
        let r = grid.r()[i];
        let u = loc[i].k_r.deriv(1) / r + loc[i].k_t.value() * ll / (r * r) - loc[i].c.value();
        diag[i] = -0.5 * kt_ss[i] - grid.rs()[i] * u;
    }
    {
        // K~ at the origin (even extension) for the ghost couplings
        let rs_jet = grid.map_jet_at(0);
        let loc0 = rop.sample(&[0.0])?.pop().unwrap_or(LocalCoeffs::flat());
        kt[0] = (rs_jet.compose(&loc0.k_r.c) / rs_jet.derivative()).value();
    }
    let has_coupling = p.iter().any(|&v| v != 0.0);
    let mut h = vec![[0.0; 5]; n + 1];
    let mut a = vec![[0.0; 5]; n + 1];
    let mut row_sum = vec![0.0; n + 1];
    for i in 3..n {
        let d2 = if i + 2 <= n { D2_5 } else { D2_3 };
        let dk: f64 = (0..5).filter(|&k| d2[k] != 0.0).map(|k| d2[k] * (kt[i + k - 2] - kt[i])).sum();
        row_sum[i] = 0.5 * dk / (ds * ds) + diag[i];
    }
    for i in 1..n {
        let (d2, d1) = if i + 2 <= n { (D2_5, D1_5) } else { (D2_3, D1_3) };
        for k in 0..5 {
            let off = k as isize - 2;
            let j = i as isize + off;
            if d2[k] == 0.0 && d1[k] == 0.0 {
                continue;
            }
            if j == 0 {
                continue;
            }
            let (col, sign, kj, pj) = if j < 0 {
                let m = (-j) as usize;
                (m, parity, kt[m], -p[m])
            } else {
                let m = j as usize;
                (m, 1.0, kt[m], p[m])
            };
            let slot = (col as isize - i as isize + 2) as usize;
            h[i][slot] += sign * d2[k] * 0.5 * (kt[i] + kj) / (ds * ds);
            a[i][slot] += sign * d1[k] * (p[i] + pj) / ds;
        }
        h[i][2] += diag[i];
    }
    Ok(DiscreteOperator { ell: rop.ell, grid: grid.clone(), h, a, weight: grid.rs().to_vec(), row_sum, has_coupling })
}
