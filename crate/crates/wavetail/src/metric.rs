//! Stationary radial metric families, assumption checks and the
//! normalizing coordinate changes.
//!
//! Dual metrics are written `g^{ab} = m^{ab} + f^{ab} + h^{ab}` in
//! `(t, r, omega)` with the angular block `(1 + F_ww) / r^2` times the round
//! metric. Both `f` and `h` are restricted to radial tensors.

use std::path::Path;
use std::sync::Arc;

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::Grid1D;
use crate::jet::Jet;
use crate::quad::{integrate_panels, integrate_to_infinity, panels};
use crate::symbolic::cutoff::{bracket_jet, chi_above_scaled};
use crate::symbolic::seminorm::{estimate_seminorms, Verdict};
use crate::symbolic::{RadialProfile, SymbolClass, SymbolicError};

#[derive(Debug, Error)]
pub enum MetricError {
    #[error("dual metric is singular at r = {0}")]
    Degenerate(f64),
    #[error("1 + h^rr = {value} too small at r = {r}")]
    Denominator { r: f64, value: f64 },
    #[error("no normalization radius below half the test extent")]
    NoNormalizationRadius,
    #[error("radial map not monotone near r = {0}")]
    NonMonotone(f64),
    #[error("spacelike slice condition fails at r = {0}")]
    NotSpacelike(f64),
    #[error("custom metric table: {0}")]
    Table(String),
    #[error(transparent)]
    Symbolic(#[from] SymbolicError),
}

/// Radial tensor `(tt, tr, rr, ww)` of dual components.
#[derive(Clone, Debug)]
pub struct RadialTensor {
    pub tt: RadialProfile,
    pub tr: RadialProfile,
    pub rr: RadialProfile,
    pub ww: RadialProfile,
}

impl RadialTensor {
    pub fn zero() -> Self {
        let z = RadialProfile::zero();
        RadialTensor { tt: z.clone(), tr: z.clone(), rr: z.clone(), ww: z }
    }

    pub fn components(&self) -> [&RadialProfile; 4] {
        [&self.tt, &self.tr, &self.rr, &self.ww]
    }

    fn jets(&self, x: Jet) -> [Jet; 4] {
        [self.tt.apply(x), self.tr.apply(x), self.rr.apply(x), self.ww.apply(x)]
    }

    pub fn values(&self, r: f64) -> [f64; 4] {
        [self.tt.eval(r), self.tr.eval(r), self.rr.eval(r), self.ww.eval(r)]
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "name", rename_all = "snake_case")]
pub enum MetricPreset {
    Flat,
    /// `h^tt = -2M <r>^-1 chi_>1(r/4)`
    PriceK1 { mass: f64 },
    /// `h^tt = -eps <r>^-kappa chi_>1(r/4)`
    Family { kappa: u32, eps: f64 },
    /// Profiles tabulated in a CSV file with columns
    /// `r, htt, htr, hrr, hww[, vr]`.
    Custom { path: String, kappa: u32 },
}

impl MetricPreset {
    /// Parse `flat`, `price_k1`, `family_k2` and similar names.
    pub fn from_name(name: &str, mass: f64, eps: f64) -> Option<Self> {
        match name {
            "flat" => Some(MetricPreset::Flat),
            "price_k1" => Some(MetricPreset::PriceK1 { mass }),
            _ => name
                .strip_prefix("family_k")
                .and_then(|k| k.parse::<u32>().ok())
                .filter(|k| (1..=8).contains(k))
                .map(|kappa| MetricPreset::Family { kappa, eps }),
        }
    }

    /// Default amplitude for the family presets: `sup |h^tt|` about 0.1.
    pub fn default_eps(kappa: u32) -> f64 {
        0.1 * 8f64.powi(kappa as i32)
    }
}

#[derive(Clone, Debug)]
pub struct MetricSpec {
    pub name: String,
    pub kappa: u32,
    pub h: RadialTensor,
    pub f: RadialTensor,
    pub v_r: RadialProfile,
    pub v_ell: Option<RadialProfile>,
}

/// `-amp <r>^-kappa chi_>1(r/4)`.
pub fn far_field_bump(amp: f64, kappa: u32) -> RadialProfile {
    RadialProfile::new(
        move |r| {
            let cut = chi_above_scaled(r, 4.0);
            if cut.is_zero() {
                return Jet::constant(0.0);
            }
            bracket_jet(r).powf(-(kappa as f64)).scale(-amp) * cut
        },
        SymbolClass::SRad(-(kappa as f64)),
    )
}

impl MetricSpec {
    pub fn flat() -> Self {
        MetricSpec {
            name: "flat".into(),
            kappa: 1,
            h: RadialTensor::zero(),
            f: RadialTensor::zero(),
            v_r: RadialProfile::zero(),
            v_ell: None,
        }
    }

    pub fn from_preset(p: &MetricPreset) -> Result<Self, MetricError> {
        Ok(match *p {
            MetricPreset::Flat => Self::flat(),
            MetricPreset::PriceK1 { mass } => {
                let mut s = Self::flat();
                s.name = "price_k1".into();
                s.h.tt = far_field_bump(2.0 * mass, 1);
                s
            }
            MetricPreset::Family { kappa, eps } => {
                let mut s = Self::flat();
                s.name = format!("family_k{kappa}");
                s.kappa = kappa;
                s.h.tt = far_field_bump(eps, kappa);
                s
            }
            MetricPreset::Custom { ref path, kappa } => Self::from_csv(Path::new(path), kappa)?,
        })
    }

    /// Load `r, htt, htr, hrr, hww[, vr]` from CSV; `#` lines are comments.
    pub fn from_csv(path: &Path, kappa: u32) -> Result<Self, MetricError> {
        let mut rdr = csv::ReaderBuilder::new()
            .comment(Some(b'#'))
            .has_headers(true)
            .from_path(path)
            .map_err(|e| MetricError::Table(e.to_string()))?;
        let mut cols: Vec<Vec<f64>> = Vec::new();
        for rec in rdr.records() {
            let rec = rec.map_err(|e| MetricError::Table(e.to_string()))?;
            if cols.is_empty() {
                cols = vec![Vec::new(); rec.len()];
            }
            if rec.len() != cols.len() {
                return Err(MetricError::Table("ragged rows".into()));
            }
            for (c, v) in cols.iter_mut().zip(rec.iter()) {
                c.push(v.trim().parse::<f64>().map_err(|e| MetricError::Table(e.to_string()))?);
            }
        }
        if cols.len() < 5 {
            return Err(MetricError::Table("need columns r, htt, htr, hrr, hww".into()));
        }
        let r = cols[0].clone();
        let q = -(kappa as f64);
        let prof = |k: usize, q: f64| {
            RadialProfile::from_table(r.clone(), vec![cols[k].clone()], Some(-q), SymbolClass::SRad(q))
        };
        let h = RadialTensor { tt: prof(1, q)?, tr: prof(2, q)?, rr: prof(3, q)?, ww: prof(4, q)? };
        let v_r = if cols.len() > 5 { prof(5, q - 2.0)? } else { RadialProfile::zero() };
        Ok(MetricSpec { name: "custom".into(), kappa, h, f: RadialTensor::zero(), v_r, v_ell: None })
    }

    /// Total `F = f + h` components at `r`.
    pub fn total(&self, r: f64) -> [f64; 4] {
        let a = self.h.values(r);
        let b = self.f.values(r);
        [a[0] + b[0], a[1] + b[1], a[2] + b[2], a[3] + b[3]]
    }
}

/// Dual matrix in `(t, r, theta, phi)` at a point.
pub fn dual_components(spec: &MetricSpec, r: f64, theta: f64) -> Result<[[f64; 4]; 4], MetricError> {
    let [tt, tr, rr, ww] = spec.total(r);
    let s2 = theta.sin().powi(2);
    let mut m = [[0.0; 4]; 4];
    m[0][0] = -1.0 + tt;
    m[0][1] = tr;
    m[1][0] = tr;
    m[1][1] = 1.0 + rr;
    m[2][2] = (1.0 + ww) / (r * r);
    m[3][3] = (1.0 + ww) / (r * r * s2);
    let d = m[0][0] * m[1][1] - tr * tr;
    if d == 0.0 || !(m[2][2].is_finite() && m[3][3].is_finite()) || m[2][2] == 0.0 {
        return Err(MetricError::Degenerate(r));
    }
    Ok(m)
}

/// Inverse of a 4x4 matrix by Gauss-Jordan elimination with pivoting.
pub fn invert4(a: &[[f64; 4]; 4]) -> Option<[[f64; 4]; 4]> {
    let mut m = *a;
    let mut inv = [[0.0; 4]; 4];
    for (i, row) in inv.iter_mut().enumerate() {
        row[i] = 1.0;
    }
    for c in 0..4 {
        let p = (c..4).max_by(|&i, &j| m[i][c].abs().total_cmp(&m[j][c].abs()))?;
        if m[p][c] == 0.0 {
            return None;
        }
        m.swap(c, p);
        inv.swap(c, p);
        let d = m[c][c];
        for k in 0..4 {
            m[c][k] /= d;
            inv[c][k] /= d;
        }
        for i in 0..4 {
            if i != c {
                let f = m[i][c];
                for k in 0..4 {
                    m[i][k] -= f * m[c][k];
                    inv[i][k] -= f * inv[c][k];
                }
            }
        }
    }
    Some(inv)
}

#[derive(Clone, Debug, Serialize)]
pub struct AssumptionReport {
    pub stationary: bool,
    pub spacelike_slices: bool,
    pub first_failure: Option<f64>,
    pub falloff: Vec<(String, Verdict)>,
}

impl AssumptionReport {
    pub fn all_pass(&self) -> bool {
        self.stationary && self.spacelike_slices && self.falloff.iter().all(|(_, v)| *v == Verdict::Consistent)
    }
}

fn test_grid() -> Grid1D {
    Grid1D::composite(4096.0).expect("static grid parameters")
}

/// Signature and falloff checks on the composite test grid.
pub fn check_assumptions(spec: &MetricSpec) -> Result<AssumptionReport, MetricError> {
    let grid = test_grid();
    let mut first_failure = None;
    let mut degenerate = None;
    for &r in grid.r().iter().skip(1) {
        let [tt, tr, rr, ww] = spec.total(r);
        let d = (-1.0 + tt) * (1.0 + rr) - tr * tr;
        let angular = 1.0 + ww;
        if d == 0.0 || angular == 0.0 || !d.is_finite() {
            degenerate.get_or_insert(r);
            continue;
        }
        // primal spatial block: g_rr = (-1 + F_tt) / D, angular r^2 / (1 + F_ww)
        let g_rr = (-1.0 + tt) / d;
        if !(g_rr > 0.0 && angular > 0.0) {
            first_failure.get_or_insert(r);
        }
    }
    if first_failure.is_none() {
        if let Some(r) = degenerate {
            return Err(MetricError::Degenerate(r));
        }
    }
    let kq = -(spec.kappa as f64);
    let mut falloff = Vec::new();
    let names = ["h^tt", "h^tr", "h^rr", "h^ww"];
    for (n, p) in names.iter().zip(spec.h.components()) {
        let t = estimate_seminorms(p, SymbolClass::SRad(kq), 11, 3)?;
        falloff.push((n.to_string(), t.verdict));
    }
    let fnames = ["f^tt", "f^tr", "f^rr", "f^ww"];
    for (n, p) in fnames.iter().zip(spec.f.components()) {
        let t = estimate_seminorms(p, SymbolClass::L1S(kq), 11, 3)?;
        falloff.push((n.to_string(), t.verdict));
    }
    let t = estimate_seminorms(&spec.v_r, SymbolClass::SRad(kq - 2.0), 11, 3)?;
    falloff.push(("V_r".into(), t.verdict));
    if let Some(v) = &spec.v_ell {
        let t = estimate_seminorms(v, SymbolClass::L1S(kq - 2.0), 11, 3)?;
        falloff.push(("V_l".into(), t.verdict));
    }
    Ok(AssumptionReport { stationary: true, spacelike_slices: first_failure.is_none(), first_failure, falloff })
}

/// Knots of the cumulative table for `rho(r)`.
fn map_knots() -> Vec<f64> {
    let mut k: Vec<f64> = (0..=32).map(|i| i as f64 * 0.25).collect();
    let mut r = 8.0;
    while r < 1e12 {
        r *= 1.0625;
        k.push(r);
    }
    k
}

/// `rho(r) = int_0^r J`, with `J = sqrt(1 + Phi) - c b(r)`.
struct RadialMap {
    jac: RadialProfile,
    knots: Vec<f64>,
    /// `int_0^knot (J - 1)`
    excess: Vec<f64>,
}

impl RadialMap {
    fn new(jac: RadialProfile) -> Self {
        let knots = map_knots();
        let rule = crate::quad::gl16();
        let mut excess = vec![0.0];
        let mut acc = 0.0;
        for w in knots.windows(2) {
            acc += rule.integrate(w[0], w[1], |r| jac.eval(r) - 1.0);
            excess.push(acc);
        }
        RadialMap { jac, knots, excess }
    }

    fn segment(&self, r: f64) -> usize {
        match self.knots.binary_search_by(|k| k.total_cmp(&r)) {
            Ok(i) => i.min(self.knots.len() - 2),
            Err(i) => i.saturating_sub(1).min(self.knots.len() - 2),
        }
    }

    fn rho(&self, r: f64) -> f64 {
        if r >= *self.knots.last().unwrap() {
            return r + self.excess.last().unwrap();
        }
        let k = self.segment(r);
        let a = self.knots[k];
        let part = crate::quad::gl16().integrate(a, r, |x| self.jac.eval(x) - 1.0);
        r + self.excess[k] + part
    }

    /// Taylor jet of `rho` at `r0`.
    fn rho_jet(&self, r0: f64) -> Jet {
        self.jac.jet(r0).integral(self.rho(r0))
    }

    fn invert(&self, rho: f64) -> f64 {
        // initial guess from the excess table
        let mut r = rho;
        for _ in 0..2 {
            let k = self.segment(r.max(0.0));
            r = (rho - self.excess[k]).max(0.0);
        }
        for _ in 0..50 {
            let f = self.rho(r) - rho;
            let d = self.jac.eval(r);
            let step = f / d;
            r = (r - step).max(0.0);
            if step.abs() <= 1e-15 * r.max(1.0) {
                break;
            }
        }
        r
    }

    /// Jet of `r(rho)` composed with the input jet `y` (in `rho`).
    fn r_of_rho(&self, y: Jet) -> Jet {
        let r0 = self.invert(y.value());
        let inv = self.rho_jet(r0).invert(r0);
        y.compose(&inv.c)
    }

    /// `(rho / r)^2` composed with the input jet `x` (in `r`).
    fn ratio_sq(&self, x: Jet) -> Jet {
        let r0 = x.value();
        let q = if r0 > 1e-3 {
            let rj = self.rho_jet(r0);
            rj / Jet::variable(r0)
        } else {
            let mut s = self.rho_jet(0.0);
            s.c.rotate_left(1);
            s.c[s.c.len() - 1] = 0.0;
            s.compose_series(&Jet::variable(r0))
        };
        let sq = q * q;
        x.compose(&sq.c)
    }
}

/// Normalized metric: `h^tr = 0`, `h^rr = -h^tt` in the coordinates
/// `(T, rho)` with `T = t + Q(r)`.
#[derive(Clone)]
pub struct NormalizedMetric {
    /// Components as functions of `rho`.
    pub spec: MetricSpec,
    /// Time shift `Q(r)`.
    pub q: RadialProfile,
    pub rho_of_r: RadialProfile,
    pub r_of_rho: RadialProfile,
    /// Radius beyond which the corrections act (`0` means everywhere).
    pub radius: f64,
    /// Weight of the compensating bump that pins `rho - r -> 0`.
    pub compensator: f64,
    raw: Arc<RawComponents>,
}

impl std::fmt::Debug for NormalizedMetric {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        f.debug_struct("NormalizedMetric")
            .field("name", &self.spec.name)
            .field("kappa", &self.spec.kappa)
            .field("radius", &self.radius)
            .field("compensator", &self.compensator)
            .finish()
    }
}

/// Transformed components as functions of the old radius, plus the map.
struct RawComponents {
    h: RadialTensor,
    f: RadialTensor,
    v: RadialProfile,
    map: Arc<RadialMap>,
}

/// Jets of `F = f + h` (tt, tr, rr, ww) and `V` at a point of the `rho`
/// coordinate.
#[derive(Clone, Copy, Debug)]
pub struct FieldJets {
    pub h: [Jet; 4],
    pub f: [Jet; 4],
    pub v: Jet,
}

impl FieldJets {
    pub fn total(&self) -> [Jet; 4] {
        [self.h[0] + self.f[0], self.h[1] + self.f[1], self.h[2] + self.f[2], self.h[3] + self.f[3]]
    }
}

impl NormalizedMetric {
    pub fn kappa(&self) -> u32 {
        self.spec.kappa
    }

    /// All component jets at `rho` (input jet in the `rho` variable), with a
    /// single inversion of the radial map.
    pub fn fields(&self, rho: Jet) -> FieldJets {
        let x = self.raw.map.r_of_rho(rho);
        FieldJets { h: self.raw.h.jets(x), f: self.raw.f.jets(x), v: self.raw.v.apply(x) }
    }

    /// Component jets (Taylor in `rho`) at the point with old radius `r0`;
    /// returns `rho(r0)` as well.
    pub fn fields_at_r(&self, r0: f64) -> (f64, FieldJets) {
        let rj = self.raw.map.rho_jet(r0);
        let x = rj.invert(r0);
        (rj.value(), FieldJets { h: self.raw.h.jets(x), f: self.raw.f.jets(x), v: self.raw.v.apply(x) })
    }

    /// Old radii of increasing `rho` nodes, by Newton steps started from
    /// the previous node.
    pub fn radii_at(&self, rho: &[f64]) -> Vec<f64> {
        let map = &self.raw.map;
        let mut out = Vec::with_capacity(rho.len());
        let (mut r_prev, mut rho_prev) = (0.0, 0.0);
        for &target in rho {
            if target < rho_prev {
                out.push(map.invert(target));
                continue;
            }
            let mut r = r_prev + (target - rho_prev) / map.jac.eval(r_prev);
            for _ in 0..30 {
                let step = (map.rho(r) - target) / map.jac.eval(r);
                r = (r - step).max(0.0);
                if step.abs() <= 4.0 * f64::EPSILON * r.max(1.0) {
                    break;
                }
            }
            out.push(r);
            r_prev = r;
            rho_prev = target;
        }
        out
    }

    /// Largest `|h^tr|` and `|h^tt + h^rr|` on the test grid.
    pub fn residuals(&self) -> (f64, f64) {
        let grid = test_grid();
        let mut a = 0.0f64;
        let mut b = 0.0f64;
        for &rho in grid.r().iter().step_by(4) {
            let fj = self.fields(Jet::constant(rho));
            a = a.max(fj.h[1].value().abs());
            b = b.max((fj.h[0].value() + fj.h[2].value()).abs());
        }
        (a, b)
    }
}

fn bump_jet(r: Jet) -> Jet {
    // smooth bump on [0.5, 3.5]
    let x = (r - 2.0).scale(1.0 / 1.5);
    let v = x.value();
    if v.abs() >= 1.0 {
        return Jet::constant(0.0);
    }
    let d = (Jet::constant(1.0) - x * x).recip();
    (-d).exp()
}

fn bump_mass() -> f64 {
    integrate_panels(&panels(0.5, 3.5, &[], 0.1, 1.0), |r| bump_jet(Jet::constant(r)).value())
}

/// Normalization radius: smallest test radius beyond which
/// `1 + h^rr >= 1/2` and `|h^rt / (1 + h^rr)| <= 1/4`.
pub fn normalization_radius(spec: &MetricSpec) -> Result<f64, MetricError> {
    let grid = test_grid();
    let r = grid.r();
    let mut ok_from = r.len();
    for i in (0..r.len()).rev() {
        let [_, tr, rr, _] = spec.h.values(r[i]);
        let good = 1.0 + rr >= 0.5 && (tr / (1.0 + rr)).abs() <= 0.25;
        if !good {
            break;
        }
        ok_from = i;
    }
    if ok_from >= r.len() || r[ok_from] > 0.5 * grid.r_max() {
        return Err(MetricError::NoNormalizationRadius);
    }
    Ok(r[ok_from])
}

fn cutoff_outside(radius: f64) -> impl Fn(Jet) -> Jet + Send + Sync + Clone {
    move |x: Jet| {
        if radius == 0.0 {
            Jet::constant(1.0)
        } else {
            chi_above_scaled(x, radius)
        }
    }
}

/// Apply the time shift and the radial reparametrization.
pub fn normalize(spec: &MetricSpec) -> Result<NormalizedMetric, MetricError> {
    let radius = normalization_radius(spec)?;
    let cut = cutoff_outside(radius);
    let h0 = spec.h.clone();
    let f0 = spec.f.clone();

    // time shift: s = chi h^tr / (1 + h^rr), dT = dt - s dr
    let shift = {
        let (h, cut) = (h0.clone(), cut.clone());
        RadialProfile::new(move |x| cut(x) * h.tr.apply(x) / (h.rr.apply(x) + 1.0), SymbolClass::SRad(-(spec.kappa as f64)))
    };
    let f_tt1 = {
        let (h, f, s) = (h0.clone(), f0.clone(), shift.clone());
        RadialProfile::new(
            move |x| {
                let s = s.apply(x);
                let [ftt, ftr, frr, _] = f.jets(x);
                let [_, htr, hrr, _] = h.jets(x);
                ftt - (ftr + htr) * s.scale(2.0) + s * s * (frr + hrr + 1.0)
            },
            SymbolClass::L1S(-(spec.kappa as f64)),
        )
    };
    let f_tr1 = {
        let (h, f, s, cut) = (h0.clone(), f0.clone(), shift.clone(), cut.clone());
        RadialProfile::new(
            move |x| {
                let s = s.apply(x);
                let keep = Jet::constant(1.0) - cut(x);
                f.tr.apply(x) - s * f.rr.apply(x) + keep * h.tr.apply(x)
            },
            SymbolClass::L1S(-(spec.kappa as f64)),
        )
    };
    let q = {
        let s = shift.clone();
        let table = Arc::new(RadialMap::new(s.add(&RadialProfile::constant(1.0))));
        // Q(r) = -int_0^r s = r - int_0^r (1 + s)
        RadialProfile::new(
            move |x| {
                let r0 = x.value();
                let mut j = table.rho_jet(r0);
                j = j.scale(-1.0);
                j.c[0] += r0;
                j.c[1] += 1.0;
                x.compose(&j.c)
            },
            SymbolClass::S(1.0),
        )
    };

    // radial map: J = sqrt(1 + Phi) - c b, Phi = chi (-h^tt - h^rr) / (1 + h^rr)
    let phi_root = {
        let (h, cut) = (h0.clone(), cut.clone());
        RadialProfile::new(
            move |x| {
                let phi = cut(x) * (-h.tt.apply(x) - h.rr.apply(x)) / (h.rr.apply(x) + 1.0);
                (phi + 1.0).sqrt()
            },
            SymbolClass::S(0.0),
        )
    };
    let compensator = if spec.kappa >= 2 {
        let excess = |r: f64| phi_root.eval(r) - 1.0;
        let near = integrate_panels(&panels(0.0, 64.0, &[4.0, 8.0], 0.25, 0.25), excess);
        near + integrate_to_infinity(64.0, excess)
    } else {
        0.0
    };
    let bm = bump_mass();
    let jac = {
        let pr = phi_root.clone();
        RadialProfile::new(move |x| pr.apply(x) - bump_jet(x).scale(compensator / bm), SymbolClass::S(0.0))
    };
    let grid = test_grid();
    for &r in grid.r() {
        let j = jac.eval(r);
        if !(j > 0.25) {
            return Err(MetricError::NonMonotone(r));
        }
    }
    for &r in grid.r().iter().skip(1) {
        let v = 1.0 + spec.h.rr.eval(r);
        if cut(Jet::constant(r)).value() > 0.0 && v < 0.5 {
            return Err(MetricError::Denominator { r, value: v });
        }
    }
    let map = Arc::new(RadialMap::new(jac.clone()));

    let kq = -(spec.kappa as f64);
    let h_tt = h0.tt.clone();
    let h_rr = h0.tt.scale(-1.0);
    let h_ww = {
        let (h, m) = (h0.clone(), map.clone());
        RadialProfile::new(move |x| m.ratio_sq(x) * (h.ww.apply(x) + 1.0) - Jet::constant(1.0), SymbolClass::SRad(kq))
    };
    let f_ww = {
        let (f, m) = (f0.clone(), map.clone());
        RadialProfile::new(move |x| m.ratio_sq(x) * f.ww.apply(x), SymbolClass::L1S(kq))
    };
    let f_rr = {
        let (h, f, j) = (h0.clone(), f0.clone(), jac.clone());
        RadialProfile::new(
            move |x| {
                let jj = j.apply(x);
                jj * jj * (f.rr.apply(x) + h.rr.apply(x) + 1.0) - Jet::constant(1.0) + h.tt.apply(x)
            },
            SymbolClass::L1S(kq),
        )
    };
    let f_tr = {
        let (j, t) = (jac.clone(), f_tr1.clone());
        RadialProfile::new(move |x| j.apply(x) * t.apply(x), SymbolClass::L1S(kq))
    };
    let raw = Arc::new(RawComponents {
        h: RadialTensor { tt: h_tt, tr: RadialProfile::zero(), rr: h_rr, ww: h_ww },
        f: RadialTensor { tt: f_tt1, tr: f_tr, rr: f_rr, ww: f_ww },
        v: spec.v_r.clone(),
        map: map.clone(),
    });

    let rho_of_r = {
        let m = map.clone();
        RadialProfile::new(move |x| x.compose(&m.rho_jet(x.value()).c), SymbolClass::S(1.0))
    };
    let r_of_rho = {
        let m = map.clone();
        RadialProfile::new(move |y| m.r_of_rho(y), SymbolClass::S(1.0))
    };
    let in_rho = |p: &RadialProfile| {
        let m = map.clone();
        let p2 = p.clone();
        RadialProfile::new(move |y| p2.apply(m.r_of_rho(y)), p.claimed_class())
    };
    let out = MetricSpec {
        name: spec.name.clone(),
        kappa: spec.kappa,
        h: RadialTensor { tt: in_rho(&raw.h.tt), tr: RadialProfile::zero(), rr: in_rho(&raw.h.rr), ww: in_rho(&raw.h.ww) },
        f: RadialTensor { tt: in_rho(&raw.f.tt), tr: in_rho(&raw.f.tr), rr: in_rho(&raw.f.rr), ww: in_rho(&raw.f.ww) },
        v_r: in_rho(&raw.v),
        v_ell: spec.v_ell.as_ref().map(in_rho),
    };
    Ok(NormalizedMetric { spec: out, q, rho_of_r, r_of_rho, radius, compensator, raw })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_dual_at_two() {
        let m = dual_components(&MetricSpec::flat(), 2.0, std::f64::consts::FRAC_PI_2).unwrap();
        let want = [-1.0, 1.0, 0.25, 0.25];
        for i in 0..4 {
            assert!((m[i][i] - want[i]).abs() < 1e-15);
        }
    }

    #[test]
    fn flat_normalizes_to_itself() {
        let nm = normalize(&MetricSpec::flat()).unwrap();
        assert_eq!(nm.compensator, 0.0);
        for &r in &[0.0, 0.7, 3.0, 50.0] {
            assert!((nm.rho_of_r.eval(r) - r).abs() < 1e-14);
            assert!(nm.q.eval(r).abs() < 1e-14);
        }
    }

    #[test]
    fn family_map_pins_far_field() {
        let spec = MetricSpec::from_preset(&MetricPreset::Family { kappa: 2, eps: 6.4 }).unwrap();
        let nm = normalize(&spec).unwrap();
        for &r in &[1e3, 1e5] {
            let rho = nm.rho_of_r.eval(r);
            assert!((rho - r).abs() < 20.0 / r, "rho - r = {}", rho - r);
            assert!((nm.r_of_rho.eval(rho) - r).abs() < 1e-9 * r);
        }
        let (a, b) = nm.residuals();
        assert!(a < 1e-10 && b < 1e-10);
    }

    #[test]
    fn spacelike_violation_detected() {
        let mut spec = MetricSpec::flat();
        spec.h.rr = RadialProfile::new(|r| chi_above_scaled(r, 4.0).scale(-2.0), SymbolClass::SRad(0.0));
        let rep = check_assumptions(&spec).unwrap();
        assert!(!rep.spacelike_slices);
    }
}
