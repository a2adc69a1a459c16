//! Local power index curves and asymptotic decay exponents.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::evolution::{ConvergenceReport, TimeSeries};

#[derive(Debug, Error, PartialEq)]
pub enum TailError {
    #[error("series too short: {have} usable samples in the window, need {need}")]
    TooShort { have: usize, need: usize },
    #[error("sampling too sparse: {per_decade:.1} samples per decade, need 30")]
    Sparse { per_decade: f64 },
    #[error("zero crossings dominate the window: {crossings} sign changes in {samples} samples")]
    ZeroCrossings { crossings: usize, samples: usize },
    #[error("invalid window [{0}, {1}]")]
    Window(f64, f64),
}

/// Which observed field a fit refers to.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Observable {
    U,
    DtU,
}

#[derive(Clone, Debug, PartialEq)]
pub struct TailFit {
    pub observer_r: f64,
    pub observable: Observable,
    pub window: (f64, f64),
    /// `(t, p(t))` with `p = d ln|u| / d ln t`.
    pub lpi_curve: Vec<(f64, f64)>,
    pub p_infinity: f64,
    /// Coefficient `a` of the model `p(t) = p_inf + a / t`.
    pub correction: f64,
    pub p_uncertainty: f64,
    pub target: Option<f64>,
}

/// Predicted exponent at fixed `r`: `-(kappa + 2)` for `u`, one lower for
/// `d_t u`.
pub fn target_exponent(kappa: u32, obs: Observable) -> f64 {
    let base = -(kappa as f64) - 2.0;
    match obs {
        Observable::U => base,
        Observable::DtU => base - 1.0,
    }
}

/// Acceptance half-width for the exponent of falloff `kappa`.
pub fn exponent_tolerance(kappa: u32) -> f64 {
    if kappa <= 2 {
        0.15
    } else {
        0.25
    }
}

/// Five-point running median (ends copied).
pub fn median5(v: &[f64]) -> Vec<f64> {
    let mut out = v.to_vec();
    for i in 2..v.len().saturating_sub(2) {
        let mut w = [v[i - 2], v[i - 1], v[i], v[i + 1], v[i + 2]];
        w.sort_by(f64::total_cmp);
        out[i] = w[2];
    }
    out
}

fn values(series: &TimeSeries, obs: Observable) -> &[f64] {
    match obs {
        Observable::U => &series.u_values,
        Observable::DtU => &series.dtu_values,
    }
}

/// Local power index on `window`, skipping samples at the roundoff floor
/// and next to sign changes.
pub fn lpi_curve(series: &TimeSeries, obs: Observable, window: (f64, f64)) -> Result<Vec<(f64, f64)>, TailError> {
    let (lo, hi) = window;
    if !(lo > 0.0 && hi > lo) {
        return Err(TailError::Window(lo, hi));
    }
    let v = values(series, obs);
    let t = &series.times;
    let peak = v.iter().fold(0.0f64, |m, x| m.max(x.abs()));
    let floor = 10.0 * f64::EPSILON * peak;
    let idx: Vec<usize> = (0..t.len()).filter(|&k| t[k] >= lo && t[k] <= hi).collect();
    if idx.len() < 8 {
        return Err(TailError::TooShort { have: idx.len(), need: 8 });
    }
    let per_decade = (idx.len() - 1) as f64 / (hi / lo).log10();
    if per_decade < 30.0 {
        return Err(TailError::Sparse { per_decade });
    }
    // widen by two samples each side so the median filter sees full stencils
    let a = idx[0].saturating_sub(3);
    let b = (idx[idx.len() - 1] + 3).min(t.len() - 1);
    let seg: Vec<f64> = v[a..=b].to_vec();
    let smooth = median5(&seg.iter().map(|x| x.abs()).collect::<Vec<_>>());
    let crossings = seg.windows(2).filter(|w| w[0] * w[1] < 0.0).count();
    if crossings * 10 > seg.len() {
        return Err(TailError::ZeroCrossings { crossings, samples: seg.len() });
    }
    let mut out = Vec::new();
    for &k in &idx {
        let j = k - a;
        if j == 0 || j + 1 >= seg.len() {
            continue;
        }
        let near_sign_change = (j.saturating_sub(2)..=(j + 2).min(seg.len() - 1)).any(|m| seg[m] * seg[j] <= 0.0);
        if near_sign_change || smooth[j - 1] <= floor || smooth[j + 1] <= floor {
            continue;
        }
        let p = (smooth[j + 1].ln() - smooth[j - 1].ln()) / (t[k + 1].ln() - t[k - 1].ln());
        out.push((t[k], p));
    }
    if out.len() < 8 {
        return Err(TailError::TooShort { have: out.len(), need: 8 });
    }
    Ok(out)
}

/// Least-squares fit of `p = p_inf + a / t`.
fn fit_inverse_t(curve: &[(f64, f64)]) -> (f64, f64) {
    let n = curve.len() as f64;
    let (mut sx, mut sy, mut sxx, mut sxy) = (0.0, 0.0, 0.0, 0.0);
    for &(t, p) in curve {
        let x = 1.0 / t;
        sx += x;
        sy += p;
        sxx += x * x;
        sxy += x * p;
    }
    let a = (n * sxy - sx * sy) / (n * sxx - sx * sx);
    ((sy - a * sx) / n, a)
}

/// Fit the tail of `series` on `window`. The uncertainty is the spread of
/// refits on windows shifted by 20% either way.
pub fn fit_tail(series: &TimeSeries, obs: Observable, window: (f64, f64)) -> Result<TailFit, TailError> {
    let curve = lpi_curve(series, obs, window)?;
    let (p_inf, a) = fit_inverse_t(&curve);
    let t_end = series.times.last().copied().unwrap_or(0.0);
    let mut spread = 0.0f64;
    for f in [0.8, 1.2] {
        let w = (window.0 * f, (window.1 * f).min(t_end));
        if w.1 <= w.0 * 1.5 {
            continue;
        }
        if let Ok(c) = lpi_curve(series, obs, w) {
            spread = spread.max((fit_inverse_t(&c).0 - p_inf).abs());
        }
    }
    Ok(TailFit {
        observer_r: series.observer_r,
        observable: obs,
        window,
        lpi_curve: curve,
        p_infinity: p_inf,
        correction: a,
        p_uncertainty: spread,
        target: None,
    })
}

impl TailFit {
    pub fn with_target(mut self, target: f64) -> Self {
        self.target = Some(target);
        self
    }

    /// Fold the shift against a fit of the same scenario at another
    /// resolution into the uncertainty.
    pub fn with_refinement(mut self, other: &TailFit) -> Self {
        self.p_uncertainty = self.p_uncertainty.max((self.p_infinity - other.p_infinity).abs());
        self
    }
}

/// One scenario entering the decay summary; `kappa = None` marks the flat
/// metric.
#[derive(Clone, Debug)]
pub struct DecayScenario {
    pub label: String,
    pub kappa: Option<u32>,
    pub ell: u32,
    pub series: TimeSeries,
    pub window: (f64, f64),
    pub convergence: Option<ConvergenceReport>,
    /// Fit from a refined run, if any.
    pub refined: Option<TimeSeries>,
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum RowStatus {
    Pass,
    Fail,
    Unverified,
}

#[derive(Clone, Debug, PartialEq)]
pub struct DecayRow {
    pub label: String,
    pub kappa: Option<u32>,
    pub ell: u32,
    pub observer_r: f64,
    pub p_u: Option<f64>,
    pub p_dtu: Option<f64>,
    pub uncertainty: f64,
    pub target: Option<f64>,
    /// Late amplitude over peak, for the flat row.
    pub floor_ratio: Option<f64>,
    pub status: RowStatus,
    pub note: String,
}

/// Amplitude floor threshold for the flat row.
pub const FLAT_FLOOR: f64 = 1e-8;

/// Summary rows; a row without convergence evidence is never passed.
pub fn decay_report(scenarios: &[DecayScenario]) -> Vec<DecayRow> {
    scenarios
        .iter()
        .map(|sc| {
            let s = &sc.series;
            let base = DecayRow {
                label: sc.label.clone(),
                kappa: sc.kappa,
                ell: sc.ell,
                observer_r: s.observer_r,
                p_u: None,
                p_dtu: None,
                uncertainty: 0.0,
                target: None,
                floor_ratio: None,
                status: RowStatus::Unverified,
                note: String::new(),
            };
            let verified = sc.convergence.is_some();
            match sc.kappa {
                None => {
                    let peak = s.u_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
                    let late = s
                        .times
                        .iter()
                        .zip(&s.u_values)
                        .filter(|(t, _)| **t >= sc.window.0 && **t <= sc.window.1)
                        .fold(0.0f64, |m, (_, v)| m.max(v.abs()));
                    let ratio = if peak > 0.0 { late / peak } else { 0.0 };
                    let ok = ratio < FLAT_FLOOR;
                    DecayRow {
                        floor_ratio: Some(ratio),
                        status: status(verified, ok),
                        note: format!("floor: |u| < {ratio:.3e} * peak after passage"),
                        ..base
                    }
                }
                Some(kappa) => {
                    let fu = fit_tail(s, Observable::U, sc.window);
                    let fd = fit_tail(s, Observable::DtU, sc.window);
                    let (fu, fd) = match (fu, fd) {
                        (Ok(a), Ok(b)) => (a, b),
                        (Err(e), _) | (_, Err(e)) => {
                            return DecayRow { status: RowStatus::Fail, note: e.to_string(), ..base };
                        }
                    };
                    let mut unc = fu.p_uncertainty;
                    if let Some(r) = &sc.refined {
                        if let Ok(fr) = fit_tail(r, Observable::U, sc.window) {
                            unc = fu.clone().with_refinement(&fr).p_uncertainty;
                        }
                    }
                    let tu = target_exponent(kappa, Observable::U);
                    let td = target_exponent(kappa, Observable::DtU);
                    let tol = exponent_tolerance(kappa);
                    let ok = (fu.p_infinity - tu).abs() <= tol && (fd.p_infinity - td).abs() <= tol + 0.1;
                    DecayRow {
                        p_u: Some(fu.p_infinity),
                        p_dtu: Some(fd.p_infinity),
                        uncertainty: unc,
                        target: Some(tu),
                        status: status(verified, ok),
                        note: format!("tolerance {tol}"),
                        ..base
                    }
                }
            }
        })
        .collect()
}

fn status(verified: bool, ok: bool) -> RowStatus {
    match (verified, ok) {
        (_, false) => RowStatus::Fail,
        (false, true) => RowStatus::Unverified,
        (true, true) => RowStatus::Pass,
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::evolution::GridMeta;

    fn synthetic(f: impl Fn(f64) -> f64) -> TimeSeries {
        let times: Vec<f64> = (0..=3000).map(|k| 0.5 * k as f64).collect();
        let u: Vec<f64> = times.iter().map(|&t| if t > 0.0 { f(t) } else { 0.0 }).collect();
        TimeSeries {
            observer_r: 10.0,
            dtu_values: u.clone(),
            energy_trace: vec![0.0; u.len()],
            u_values: u,
            times,
            grid_meta: GridMeta { h: 0.05, dt: 0.025, cfl: 0.5, order: 4, nodes: 0, r_max: 0.0 },
        }
    }

    #[test]
    fn pure_power_law() {
        let s = synthetic(|t| 3.0 * t.powi(-4));
        let f = fit_tail(&s, Observable::U, (400.0, 1400.0)).unwrap();
        assert!((f.p_infinity + 4.0).abs() < 1e-9);
        assert!(f.lpi_curve.iter().all(|(_, p)| (p + 4.0).abs() < 1e-9));
    }

    #[test]
    fn corrected_power_law() {
        let s = synthetic(|t| t.powi(-4) * (1.0 + 10.0 / t));
        let f = fit_tail(&s, Observable::U, (100.0, 1400.0)).unwrap();
        assert!((f.p_infinity + 4.0).abs() < 0.02, "{}", f.p_infinity);
    }

    #[test]
    fn oscillating_series_is_rejected() {
        let s = synthetic(|t| (3.0 * t).sin() * t.powi(-3));
        assert!(matches!(fit_tail(&s, Observable::U, (400.0, 1400.0)), Err(TailError::ZeroCrossings { .. })));
    }
}
