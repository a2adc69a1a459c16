//! Time-domain solutions from the resolvent.
//!
//! With `u_hat(tau) = R_tau(-i tau u0 - u1)` and `u` extended by zero to
//! negative times, `u(t) = (2/pi) Re int_0^inf u_hat(tau) cos(t tau) d tau`.
//! The integral is truncated at `tau_max` under a smooth taper and evaluated
//! with Filon weights for piecewise-linear `u_hat`, so the `t` oscillation is
//! integrated exactly.

use std::f64::consts::PI;

use num_complex::Complex64;
use thiserror::Error;

use crate::evolution::{CauchyData, GridMeta, TimeSeries};
use crate::grid::{Grid1D, GridError};
use crate::operator::RadialOperator;
use crate::par::{map_slice, ExecMode};
use crate::resolvent::{ResolventError, ResolventSolver, Source};
use crate::symbolic::chi_below;

type C64 = Complex64;

#[derive(Debug, Error)]
pub enum SynthesisError {
    #[error("invalid synthesis parameter: {0}")]
    Parameter(String),
    #[error("frequency step {dtau} under-resolves t = {t} (needs t * dtau <= pi)")]
    Undersampled { t: f64, dtau: f64 },
    #[error("spectral energy changes by {relative:.3e} when the frequency step doubles")]
    Plancherel { relative: f64 },
    #[error("observer r = {r} lies outside the grid (R_max = {r_max})")]
    ObserverOutside { r: f64, r_max: f64 },
    #[error(transparent)]
    Resolvent(#[from] ResolventError),
    #[error(transparent)]
    Grid(#[from] GridError),
}

#[derive(Clone, Debug)]
pub struct SynthesisPlan {
    pub tau_max: f64,
    /// Nodes `tau_k = k tau_max / (n_tau - 1)`.
    pub n_tau: usize,
    /// The taper is 1 below `taper_from * tau_max` and 0 at `tau_max`.
    pub taper_from: f64,
    /// Contour shift `tau -> tau - i delta`, undone by `e^{delta t}`.
    pub damping: Option<f64>,
    /// Frequency separating the low and high parts in [`split_contributions`].
    pub split_scale: f64,
    /// Largest tolerated relative change of `int |u_hat|^2` on halving the node set.
    pub plancherel_tol: f64,
    pub grid: Grid1D,
    pub mode: ExecMode,
}

impl SynthesisPlan {
    pub fn new(grid: Grid1D) -> Self {
        SynthesisPlan {
            tau_max: 16.0,
            n_tau: 3201,
            taper_from: 0.5,
            damping: None,
            split_scale: 1.0,
            plancherel_tol: 1e-2,
            grid,
            mode: ExecMode::Parallel,
        }
    }

    /// Uniform grid of step `h`, long enough that the truncated exterior
    /// cannot influence `r <= r_obs` before `t_max`.
    pub fn causal(t_max: f64, r_obs: f64, support_hi: f64, h: f64) -> Result<Self, SynthesisError> {
        let r_max = 0.5 * (t_max + r_obs + support_hi) + 8.0;
        Ok(SynthesisPlan::new(Grid1D::uniform(h, r_max)?))
    }

    pub fn dtau(&self) -> f64 {
        self.tau_max / (self.n_tau - 1) as f64
    }

    pub fn nodes(&self) -> Vec<f64> {
        let d = self.dtau();
        (0..self.n_tau).map(|k| k as f64 * d).collect()
    }

    pub fn taper(&self, tau: f64) -> f64 {
        let start = self.taper_from * self.tau_max;
        let width = self.tau_max - start;
        if tau <= start {
            1.0
        } else {
            // chi_below is 1 below 1 and 0 above 2
            chi_below(1.0 + (tau - start) / width, 1.0)
        }
    }

    fn validate(&self) -> Result<(), SynthesisError> {
        let ok = self.tau_max > 0.0
            && self.n_tau >= 3
            && self.taper_from > 0.0
            && self.taper_from < 1.0
            && self.split_scale > 0.0
            && self.damping.is_none_or(|d| d >= 0.0 && d.is_finite());
        if ok {
            Ok(())
        } else {
            Err(SynthesisError::Parameter(format!("{self:?}")))
        }
    }
}

/// Tapered transform `W(tau) u_hat(tau, r)` at the nodes, one row per observer.
#[derive(Clone, Debug)]
pub struct Spectrum {
    pub taus: Vec<f64>,
    pub observers: Vec<f64>,
    pub values: Vec<Vec<C64>>,
    pub damping: f64,
    pub grid_meta: GridMeta,
    /// Relative change of `int |u_hat|^2` between step `dtau` and `2 dtau`.
    pub plancherel_gap: f64,
}

pub fn transform(
    rop: &RadialOperator,
    data: &CauchyData,
    observers: &[f64],
    plan: &SynthesisPlan,
) -> Result<Spectrum, SynthesisError> {
    plan.validate()?;
    if data.ell != rop.ell {
        return Err(SynthesisError::Parameter(format!("data harmonic {} vs operator {}", data.ell, rop.ell)));
    }
    let r_max = plan.grid.r_max();
    for &r in observers {
        if !(r > 0.0 && r <= r_max) {
            return Err(SynthesisError::ObserverOutside { r, r_max });
        }
    }
    let solver = ResolventSolver::new(rop, &plan.grid)?;
    let sources = [Source::Profile(data.u0.clone()), Source::Profile(data.u1.clone())];
    let delta = plan.damping.unwrap_or(0.0);
    let taus = plan.nodes();
    let per_node = map_slice(plan.mode, &taus, |&t| -> Result<Vec<C64>, SynthesisError> {
        let tau = C64::new(t, -delta);
        let psi = solver.solve_psi(tau, &sources)?;
        let w = plan.taper(t);
        observers
            .iter()
            .map(|&r| {
                let a = plan.grid.interpolate(&psi[0], r)? / r;
                let b = plan.grid.interpolate(&psi[1], r)? / r;
                Ok((-C64::i() * tau * a - b) * w)
            })
            .collect()
    });
    let mut values = vec![Vec::with_capacity(taus.len()); observers.len()];
    for node in per_node {
        for (row, v) in values.iter_mut().zip(node?) {
            row.push(v);
        }
    }
    let plancherel_gap = values.iter().map(|row| plancherel_gap(row, plan.dtau())).fold(0.0, f64::max);
    if plancherel_gap > plan.plancherel_tol {
        return Err(SynthesisError::Plancherel { relative: plancherel_gap });
    }
    let grid_meta = GridMeta {
        h: plan.grid.ds(),
        dt: plan.dtau(),
        cfl: 0.0,
        order: 4,
        nodes: plan.grid.len(),
        r_max,
    };
    Ok(Spectrum { taus, observers: observers.to_vec(), values, damping: delta, grid_meta, plancherel_gap })
}

fn trapezoid_energy(row: &[C64], step: usize, d: f64) -> f64 {
    let pts: Vec<f64> = row.iter().step_by(step).map(|v| v.norm_sqr()).collect();
    let inner: f64 = pts.iter().sum();
    (inner - 0.5 * (pts[0] + pts[pts.len() - 1])) * d * step as f64
}

fn plancherel_gap(row: &[C64], d: f64) -> f64 {
    let full = trapezoid_energy(row, 1, d);
    let half = trapezoid_energy(&row[..row.len() - (row.len() - 1) % 2], 2, d);
    if full > 0.0 {
        (full - half).abs() / full
    } else {
        0.0
    }
}

/// `(int_0^1 (1 - s) e^{i theta s} ds, int_0^1 s e^{i theta s} ds)`.
fn filon_ab(theta: f64) -> (C64, C64) {
    if theta.abs() < 1e-2 {
        let it = C64::new(0.0, theta);
        let (mut a, mut b) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
        let mut pow = C64::new(1.0, 0.0);
        for n in 0..12 {
            let nf = n as f64;
            let bn = pow / (nf + 2.0);
            a += pow / (nf + 1.0) - bn;
            b += bn;
            pow = pow * it / (nf + 1.0);
        }
        return (a, b);
    }
    let it = C64::new(0.0, theta);
    let e = it.exp();
    let total = (e - 1.0) / it;
    let b = e / it + (e - 1.0) / (theta * theta);
    (total - b, b)
}

/// `int_0^{tau_max} f(tau) cos(t tau) d tau` and `int f(tau) sin(t tau) d tau`
/// for piecewise-linear `f`.
fn filon_cos_sin(f: &[C64], d: f64, t: f64) -> (C64, C64) {
    let mut plus = C64::new(0.0, 0.0);
    let mut minus = C64::new(0.0, 0.0);
    let theta = t * d;
    let (ap, bp) = filon_ab(theta);
    let (am, bm) = filon_ab(-theta);
    for j in 0..f.len() - 1 {
        let e = C64::from_polar(1.0, theta * j as f64);
        plus += e * (f[j] * ap + f[j + 1] * bp);
        minus += e.conj() * (f[j] * am + f[j + 1] * bm);
    }
    plus *= d;
    minus *= d;
    ((plus + minus) * 0.5, (plus - minus) / (2.0 * C64::i()))
}

impl Spectrum {
    fn dtau(&self) -> f64 {
        self.taus[1] - self.taus[0]
    }

    /// `(u, d_t u)` at the observer with index `k`, with the spectrum scaled
    /// node-wise by `filter`.
    pub fn evaluate(
        &self,
        k: usize,
        times: &[f64],
        filter: impl Fn(f64) -> f64,
    ) -> Result<(Vec<f64>, Vec<f64>), SynthesisError> {
        let d = self.dtau();
        if let Some(&t) = times.iter().find(|&&t| !(t >= 0.0) || t * d > PI) {
            return Err(SynthesisError::Undersampled { t, dtau: d });
        }
        let f: Vec<C64> = self.values[k].iter().zip(&self.taus).map(|(v, &t)| v * filter(t)).collect();
        let g: Vec<C64> = f.iter().zip(&self.taus).map(|(v, &t)| v * C64::new(t, -self.damping)).collect();
        let mut u = Vec::with_capacity(times.len());
        let mut du = Vec::with_capacity(times.len());
        for &t in times {
            let grow = (self.damping * t).exp();
            let (c, _) = filon_cos_sin(&f, d, t);
            let (_, s) = filon_cos_sin(&g, d, t);
            u.push(2.0 / PI * c.re * grow);
            du.push(-2.0 / PI * s.re * grow);
        }
        Ok((u, du))
    }

    fn series(&self, times: &[f64], filter: impl Fn(f64) -> f64 + Copy) -> Result<Vec<TimeSeries>, SynthesisError> {
        (0..self.observers.len())
            .map(|k| {
                let (u, du) = self.evaluate(k, times, filter)?;
                Ok(TimeSeries {
                    observer_r: self.observers[k],
                    times: times.to_vec(),
                    u_values: u,
                    dtu_values: du,
                    energy_trace: Vec::new(),
                    grid_meta: self.grid_meta,
                })
            })
            .collect()
    }
}

/// Observer series at `times`. `grid_meta.dt` holds the frequency step and
/// `energy_trace` is empty.
pub fn synthesize(
    rop: &RadialOperator,
    data: &CauchyData,
    observers: &[f64],
    times: &[f64],
    plan: &SynthesisPlan,
) -> Result<Vec<TimeSeries>, SynthesisError> {
    transform(rop, data, observers, plan)?.series(times, |_| 1.0)
}

#[derive(Clone, Debug)]
pub struct SplitSeries {
    /// Frequencies below `split_scale` (weight `chi_below(tau / split_scale)`).
    pub low: TimeSeries,
    pub high: TimeSeries,
}

pub fn split_contributions(
    rop: &RadialOperator,
    data: &CauchyData,
    observers: &[f64],
    times: &[f64],
    plan: &SynthesisPlan,
) -> Result<Vec<SplitSeries>, SynthesisError> {
    let spec = transform(rop, data, observers, plan)?;
    let scale = plan.split_scale;
    let low = spec.series(times, |t| chi_below(t, scale))?;
    let high = spec.series(times, |t| 1.0 - chi_below(t, scale))?;
    Ok(low.into_iter().zip(high).map(|(low, high)| SplitSeries { low, high }).collect())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn filon_weights_match_direct_quadrature() {
        for &theta in &[0.0, 1e-3, 0.3, 2.0, -1.7] {
            let (a, b) = filon_ab(theta);
            let n = 4000;
            let (mut ea, mut eb) = (C64::new(0.0, 0.0), C64::new(0.0, 0.0));
            for k in 0..n {
                let s = (k as f64 + 0.5) / n as f64;
                let e = C64::from_polar(1.0, theta * s) / n as f64;
                ea += e * (1.0 - s);
                eb += e * s;
            }
            assert!((a - ea).norm() < 1e-7 && (b - eb).norm() < 1e-7, "theta {theta}");
        }
    }

    #[test]
    fn filon_is_exact_for_linear_profiles() {
        let d = 0.1;
        let f: Vec<C64> = (0..41).map(|k| C64::new(2.0 - 0.3 * k as f64 * d, 0.5)).collect();
        let t = 7.3;
        let (c, s) = filon_cos_sin(&f, d, t);
        let b = 4.0;
        // int_0^b (alpha + beta x) e^{i t x} dx in closed form
        let (alpha, beta) = (C64::new(2.0, 0.5), C64::new(-0.3, 0.0));
        let prim = |x: f64, sgn: f64| {
            let it = C64::new(0.0, sgn * t);
            let e = (it * x).exp();
            (alpha + beta * x) * e / it - beta * e / (it * it)
        };
        let plus = prim(b, 1.0) - prim(0.0, 1.0);
        let minus = prim(b, -1.0) - prim(0.0, -1.0);
        assert!((c - (plus + minus) * 0.5).norm() < 1e-12);
        assert!((s - (plus - minus) / (2.0 * C64::i())).norm() < 1e-12);
    }

    #[test]
    fn taper_and_nodes() {
        let plan = SynthesisPlan::new(Grid1D::uniform(0.1, 20.0).unwrap());
        assert_eq!(plan.taper(3.0), 1.0);
        assert_eq!(plan.taper(16.0), 0.0);
        assert!(plan.taper(12.0) > 0.0 && plan.taper(12.0) < 1.0);
        let nodes = plan.nodes();
        assert_eq!(nodes.len(), plan.n_tau);
        assert!((nodes[plan.n_tau - 1] - 16.0).abs() < 1e-12);
    }

    #[test]
    fn rejects_undersampled_times_and_bad_plans() {
        let rop = RadialOperator::flat(0);
        let data = CauchyData::pulse(0, 2.0, 4.0, false);
        let mut plan = SynthesisPlan::causal(10.0, 5.0, 4.0, 0.1).unwrap();
        plan.n_tau = 201;
        let err = synthesize(&rop, &data, &[5.0], &[100.0], &plan).unwrap_err();
        assert!(matches!(err, SynthesisError::Undersampled { .. }));
        plan.taper_from = 1.5;
        assert!(matches!(synthesize(&rop, &data, &[5.0], &[1.0], &plan), Err(SynthesisError::Parameter(_))));
    }

    fn flat_static_setup() -> (RadialOperator, CauchyData, SynthesisPlan, Vec<f64>) {
        let rop = RadialOperator::flat(0);
        let u0 = crate::symbolic::profile::windowed_gaussian(3.0, 0.35, 0.5, 5.5);
        let data = CauchyData::new(0, u0, crate::symbolic::RadialProfile::zero(), (0.5, 5.5));
        let mut plan = SynthesisPlan::causal(12.0, 5.0, 5.5, 0.05).unwrap();
        plan.n_tau = 1601;
        let times = (0..=120).map(|k| 0.1 * k as f64).collect();
        (rop, data, plan, times)
    }

    #[test]
    fn flat_static_pulse_matches_dalembert() {
        let (rop, data, plan, times) = flat_static_setup();
        let r = 5.0;
        let odd = |x: f64| x.signum() * x.abs() * data.u0.eval(x.abs());
        let y = &synthesize(&rop, &data, &[r], &times, &plan).unwrap()[0];
        let (mut num, mut den) = (0.0, 0.0);
        for (k, &t) in times.iter().enumerate() {
            let exact = (odd(r + t) + odd(r - t)) / (2.0 * r);
            num += (y.u_values[k] - exact).powi(2);
            den += exact * exact;
        }
        assert!((num / den).sqrt() < 1e-3, "relative error {}", (num / den).sqrt());
    }

    #[test]
    fn split_parts_sum_to_total_and_damping_is_consistent() {
        let (rop, data, mut plan, times) = flat_static_setup();
        let total = &synthesize(&rop, &data, &[5.0], &times, &plan).unwrap()[0];
        let split = &split_contributions(&rop, &data, &[5.0], &times, &plan).unwrap()[0];
        for k in 0..times.len() {
            let s = split.low.u_values[k] + split.high.u_values[k];
            assert!((s - total.u_values[k]).abs() < 1e-12);
        }
        plan.damping = Some(0.01);
        let damped = &synthesize(&rop, &data, &[5.0], &times, &plan).unwrap()[0];
        let scale = total.u_values.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for k in 0..times.len() {
            assert!((damped.u_values[k] - total.u_values[k]).abs() < 2e-3 * scale, "t = {}", times[k]);
        }
    }
}
