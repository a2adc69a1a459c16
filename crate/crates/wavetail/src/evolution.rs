//! Method-of-lines evolution of `P u = 0` for one harmonic, on `psi = r u`
//! with classical RK4.

use serde::{Deserialize, Serialize};
use thiserror::Error;

use crate::grid::{Grid1D, GridError};
use crate::operator::{assemble_discrete, DiscreteOperator, OperatorError, RadialOperator};
use crate::par::{fill, ExecMode};
use crate::symbolic::RadialProfile;

#[derive(Debug, Error)]
pub enum EvolutionError {
    #[error("CFL factor {cfl} exceeds the stability limit {limit}")]
    Cfl { cfl: f64, limit: f64 },
    #[error("observer r = {r} outside (0, {r_max}]")]
    ObserverOutside { r: f64, r_max: f64 },
    #[error("grid extent {r_max} below the causality margin {needed}")]
    Causality { r_max: f64, needed: f64 },
    #[error("non-finite solution at t = {t}")]
    Blowup { t: f64 },
    #[error("invalid parameter: {0}")]
    Parameter(String),
    #[error("refinement differences are not decreasing: {0:?}")]
    NonMonotone([f64; 2]),
    #[error(transparent)]
    Operator(#[from] OperatorError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

/// Initial data `u(0) = u0`, `d_t u(0) = u1` for harmonic `ell`.
#[derive(Clone, Debug)]
pub struct CauchyData {
    pub ell: u32,
    pub u0: RadialProfile,
    pub u1: RadialProfile,
    pub support: (f64, f64),
}

impl CauchyData {
    pub fn new(ell: u32, u0: RadialProfile, u1: RadialProfile, support: (f64, f64)) -> Self {
        CauchyData { ell, u0, u1, support }
    }

    /// Bump on `[lo, hi]`; `moving` sets `u1 = u0`, otherwise `u1 = 0`.
    pub fn pulse(ell: u32, lo: f64, hi: f64, moving: bool) -> Self {
        let u0 = crate::symbolic::profile::bump_pulse(lo, hi);
        let u1 = if moving { u0.clone() } else { RadialProfile::zero() };
        CauchyData { ell, u0, u1, support: (lo, hi) }
    }

    /// `alpha self + beta other`.
    pub fn combine(&self, alpha: f64, other: &CauchyData, beta: f64) -> CauchyData {
        CauchyData {
            ell: self.ell,
            u0: self.u0.scale(alpha).add(&other.u0.scale(beta)),
            u1: self.u1.scale(alpha).add(&other.u1.scale(beta)),
            support: (self.support.0.min(other.support.0), self.support.1.max(other.support.1)),
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct EvolveParams {
    pub h: f64,
    pub cfl: f64,
    /// Sampling interval of the observer series.
    pub output_every: f64,
    /// Grid extent; `None` uses the causality margin.
    pub r_max: Option<f64>,
    pub mode: ExecMode,
}

impl Default for EvolveParams {
    fn default() -> Self {
        EvolveParams { h: 0.05, cfl: 0.5, output_every: 0.5, r_max: None, mode: ExecMode::Parallel }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct GridMeta {
    pub h: f64,
    pub dt: f64,
    pub cfl: f64,
    pub order: u32,
    pub nodes: usize,
    pub r_max: f64,
}

/// Observer series. `energy_trace` holds the flat quadratic energy of the
/// whole field at each sample time.
#[derive(Clone, Debug, PartialEq)]
pub struct TimeSeries {
    pub observer_r: f64,
    pub times: Vec<f64>,
    pub u_values: Vec<f64>,
    pub dtu_values: Vec<f64>,
    pub energy_trace: Vec<f64>,
    pub grid_meta: GridMeta,
}

/// Largest CFL factor (against the characteristic speed) for RK4 with the
/// fourth-order Laplacian: `2.8 / sqrt(16/3)`.
pub const CFL_LIMIT: f64 = 1.2;

/// Minimum grid extent for `t_max` with data ending at `support_hi`.
pub fn causal_extent(t_max: f64, support_hi: f64) -> f64 {
    1.2 * t_max + support_hi
}

struct Stepper<'a> {
    d: &'a DiscreteOperator,
    mode: ExecMode,
    inv_w: Vec<f64>,
}

impl Stepper<'_> {
    /// `out[i] = (H psi + A pi)_i / r_s` for `i` in `1..=hi`.
    fn accel(&self, psi: &[f64], pi: &[f64], out: &mut [f64], hi: usize) {
        let d = self.d;
        let coupled = d.has_coupling;
        let row = |rows: &[[f64; 5]], v: &[f64], i: usize| -> f64 {
            let c = &rows[i];
            if i >= 2 {
                c[0] * v[i - 2] + c[1] * v[i - 1] + c[2] * v[i] + c[3] * v[i + 1] + c[4] * v[i + 2]
            } else {
                c[2] * v[i] + c[3] * v[i + 1] + c[4] * v[i + 2]
            }
        };
        fill(self.mode, &mut out[1..=hi], |k| {
            let i = k + 1;
            let mut s = if i >= 3 { d.h_row(psi, i) } else { row(&d.h, psi, i) };
            if coupled {
                s += row(&d.a, pi, i);
            }
            s * self.inv_w[i]
        });
    }
}

fn flat_energy(grid: &Grid1D, ell: u32, psi: &[f64], pi: &[f64], hi: usize) -> f64 {
    let h = grid.ds();
    let r = grid.r();
    let ll = (ell * (ell + 1)) as f64;
    // half-weight origin term of the even integrand
    let mut e = if ell == 0 {
        let d0 = (16.0 * psi[1] - 2.0 * psi[2]) / (12.0 * h);
        0.5 * d0 * d0
    } else {
        0.0
    };
    for i in 1..=hi {
        let dp = if i >= 2 {
            (psi[i - 2] - 8.0 * psi[i - 1] + 8.0 * psi[i + 1] - psi[i + 2]) / (12.0 * h)
        } else {
            let parity = if ell.is_multiple_of(2) { -1.0 } else { 1.0 };
            (parity * psi[1] - 8.0 * psi[0] + 8.0 * psi[2] - psi[3]) / (12.0 * h)
        };
        e += pi[i] * pi[i] + dp * dp + ll * psi[i] * psi[i] / (r[i] * r[i]);
    }
    2.0 * std::f64::consts::PI * e * h
}

/// Evolve `data` under `rop` to `t_max`, sampling `u` and `d_t u` at each
/// observer radius every `params.output_every`.
pub fn evolve(
    rop: &RadialOperator,
    data: &CauchyData,
    t_max: f64,
    observers: &[f64],
    params: &EvolveParams,
) -> Result<Vec<TimeSeries>, EvolutionError> {
    if !(t_max > 0.0) || !(params.output_every > 0.0) || !(params.h > 0.0) {
        return Err(EvolutionError::Parameter(format!(
            "t_max = {t_max}, output_every = {}, h = {}",
            params.output_every, params.h
        )));
    }
    if data.ell != rop.ell {
        return Err(EvolutionError::Parameter(format!("data harmonic {} vs operator {}", data.ell, rop.ell)));
    }
    let needed = causal_extent(t_max, data.support.1);
    let r_max = params.r_max.unwrap_or(needed);
    if r_max < needed {
        return Err(EvolutionError::Causality { r_max, needed });
    }
    for &r in observers {
        if !(r > 0.0 && r <= r_max) {
            return Err(EvolutionError::ObserverOutside { r, r_max });
        }
    }
    let grid = Grid1D::uniform(params.h, r_max)?;
    let d = assemble_discrete(rop, &grid)?;
    let n = grid.n();
    let speed = sup_speed(rop, &grid)?;
    let cfl_limit = CFL_LIMIT / speed;
    if params.cfl > cfl_limit {
        return Err(EvolutionError::Cfl { cfl: params.cfl, limit: cfl_limit });
    }
    let dt0 = params.cfl * params.h / speed;
    let sub = (params.output_every / dt0).ceil().max(1.0) as usize;
    let dt = params.output_every / sub as f64;
    let n_out = (t_max / params.output_every).round() as usize;

    let r = grid.r();
    // two trailing zero nodes past N keep every stencil in bounds
    let mut psi = vec![0.0; n + 3];
    let mut pi = vec![0.0; n + 3];
    for i in 1..=n {
        psi[i] = r[i] * data.u0.eval(r[i]);
        pi[i] = r[i] * data.u1.eval(r[i]);
    }
    let stepper = Stepper { d: &d, mode: params.mode, inv_w: d.weight.iter().map(|w| 1.0 / w).collect() };
    // forward light cone plus a stencil margin; nothing beyond it is updated
    let margin = 16.0 + 40.0 * params.h;
    let active = |t: f64| -> usize { (((data.support.1 + speed * t + margin) / params.h).ceil() as usize).min(n - 1) };

    let meta = GridMeta { h: params.h, dt, cfl: dt * speed / params.h, order: 4, nodes: n + 1, r_max: grid.r_max() };
    let mut series: Vec<TimeSeries> = observers
        .iter()
        .map(|&r| TimeSeries {
            observer_r: r,
            times: Vec::with_capacity(n_out + 1),
            u_values: Vec::with_capacity(n_out + 1),
            dtu_values: Vec::with_capacity(n_out + 1),
            energy_trace: Vec::with_capacity(n_out + 1),
            grid_meta: meta,
        })
        .collect();
    let record = |series: &mut Vec<TimeSeries>, t: f64, psi: &[f64], pi: &[f64], hi: usize| -> Result<(), EvolutionError> {
        let e = flat_energy(&grid, data.ell, psi, pi, hi);
        if !e.is_finite() {
            return Err(EvolutionError::Blowup { t });
        }
        for s in series.iter_mut() {
            let ro = s.observer_r;
            s.times.push(t);
            s.u_values.push(grid.interpolate(&psi[..=n], ro)? / ro);
            s.dtu_values.push(grid.interpolate(&pi[..=n], ro)? / ro);
            s.energy_trace.push(e);
        }
        Ok(())
    };
    record(&mut series, 0.0, &psi, &pi, active(0.0))?;

    let len = n + 3;
    let (mut k1p, mut k1v) = (vec![0.0; len], vec![0.0; len]);
    let (mut k2p, mut k2v) = (vec![0.0; len], vec![0.0; len]);
    let (mut k3p, mut k3v) = (vec![0.0; len], vec![0.0; len]);
    let (mut k4v, mut tp, mut tv) = (vec![0.0; len], vec![0.0; len], vec![0.0; len]);
    let mut step = 0usize;
    for out in 1..=n_out {
        for _ in 0..sub {
            let t = step as f64 * dt;
            let hi = active(t + dt);
            // stage 1
            k1p[..=hi].copy_from_slice(&pi[..=hi]);
            stepper.accel(&psi, &pi, &mut k1v, hi);
            // stage 2
            for i in 1..=hi {
                tp[i] = psi[i] + 0.5 * dt * k1p[i];
                tv[i] = pi[i] + 0.5 * dt * k1v[i];
            }
            k2p[..=hi].copy_from_slice(&tv[..=hi]);
            stepper.accel(&tp, &tv, &mut k2v, hi);
            // stage 3
            for i in 1..=hi {
                tp[i] = psi[i] + 0.5 * dt * k2p[i];
                tv[i] = pi[i] + 0.5 * dt * k2v[i];
            }
            k3p[..=hi].copy_from_slice(&tv[..=hi]);
            stepper.accel(&tp, &tv, &mut k3v, hi);
            // stage 4
            for i in 1..=hi {
                tp[i] = psi[i] + dt * k3p[i];
                tv[i] = pi[i] + dt * k3v[i];
            }
            stepper.accel(&tp, &tv, &mut k4v, hi);
            let c = dt / 6.0;
            for i in 1..=hi {
                psi[i] += c * (k1p[i] + 2.0 * k2p[i] + 2.0 * k3p[i] + tv[i]);
                pi[i] += c * (k1v[i] + 2.0 * k2v[i] + 2.0 * k3v[i] + k4v[i]);
            }
            step += 1;
        }
        let t = out as f64 * params.output_every;
        record(&mut series, t, &psi, &pi, active(t))?;
    }
    Ok(series)
}

/// Largest characteristic speed `sqrt(sup K_r)` on the grid, at least 1.
fn sup_speed(rop: &RadialOperator, grid: &Grid1D) -> Result<f64, EvolutionError> {
    let probe: Vec<f64> = grid.r()[1..].iter().step_by(8).copied().collect();
    let loc = rop.sample(&probe)?;
    Ok(loc.iter().map(|l| l.k_r.value().sqrt()).fold(1.0, f64::max))
}

/// Result of a three-grid refinement.
#[derive(Clone, Debug, PartialEq)]
pub struct ConvergenceReport {
    pub spacings: [f64; 3],
    /// Max observer differences coarse-medium and medium-fine.
    pub differences: [f64; 2],
    pub observed_order: f64,
    /// Richardson-extrapolated observer values on the comparison window.
    pub times: Vec<f64>,
    pub extrapolated: Vec<f64>,
}

/// Observed order from runs at `h0`, `h0/2`, `h0/4`, comparing the observer
/// series on `window`.
pub fn convergence_study(
    rop: &RadialOperator,
    data: &CauchyData,
    observer: f64,
    window: (f64, f64),
    h0: f64,
    base: &EvolveParams,
) -> Result<ConvergenceReport, EvolutionError> {
    let t_max = window.1;
    let runs: Vec<TimeSeries> = [h0, h0 / 2.0, h0 / 4.0]
        .iter()
        .map(|&h| {
            let p = EvolveParams { h, ..*base };
            evolve(rop, data, t_max, &[observer], &p).map(|mut v| v.remove(0))
        })
        .collect::<Result<_, _>>()?;
    let idx: Vec<usize> = (0..runs[0].times.len()).filter(|&k| runs[0].times[k] >= window.0 - 1e-9).collect();
    let diff = |a: &TimeSeries, b: &TimeSeries| idx.iter().map(|&k| (a.u_values[k] - b.u_values[k]).abs()).fold(0.0, f64::max);
    let e1 = diff(&runs[0], &runs[1]);
    let e2 = diff(&runs[1], &runs[2]);
    if !(e2 < e1) {
        return Err(EvolutionError::NonMonotone([e1, e2]));
    }
    let order = (e1 / e2).log2();
    let factor = 2f64.powf(order) - 1.0;
    let extrapolated = idx.iter().map(|&k| runs[2].u_values[k] + (runs[2].u_values[k] - runs[1].u_values[k]) / factor).collect();
    Ok(ConvergenceReport {
        spacings: [h0, h0 / 2.0, h0 / 4.0],
        differences: [e1, e2],
        observed_order: order,
        times: idx.iter().map(|&k| runs[0].times[k]).collect(),
        extrapolated,
    })
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn flat_pulse_passes_and_leaves() {
        let rop = RadialOperator::flat(0);
        let data = CauchyData::pulse(0, 6.0, 10.0, false);
        let p = EvolveParams { h: 0.0125, ..Default::default() };
        let s = &evolve(&rop, &data, 30.0, &[2.0], &p).unwrap()[0];
        let peak = s.u_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        let late = s.times.iter().zip(&s.u_values).filter(|(t, _)| **t >= 14.0).fold(0.0f64, |m, (_, v)| m.max(v.abs()));
        assert!(late < 1e-8 * peak, "late {late} peak {peak}");
    }

    #[test]
    fn flat_energy_is_conserved() {
        let rop = RadialOperator::flat(0);
        let data = CauchyData::pulse(0, 5.0, 15.0, true);
        let p = EvolveParams { h: 0.025, ..Default::default() };
        let s = &evolve(&rop, &data, 100.0, &[2.0], &p).unwrap()[0];
        let e0 = s.energy_trace[0];
        let drift = s.energy_trace.iter().fold(0.0f64, |m, e| m.max((e - e0).abs())) / e0;
        assert!(drift < 1e-6, "drift {drift}");
    }
}
