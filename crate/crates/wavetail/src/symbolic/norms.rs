//! Annulus-localized weighted `L^2` norms of radial fields.

use serde::{Deserialize, Serialize};

use crate::grid::{d_dr, Grid1D};
use crate::quad::gl32;
use crate::symbolic::cutoff::japanese_bracket;
use crate::symbolic::profile::RadialProfile;
use crate::symbolic::seminorm::DyadicAnnulus;
use crate::symbolic::SymbolicError;

const FOUR_PI: f64 = 4.0 * std::f64::consts::PI;
/// Gauss panels per annulus.
const PANELS: usize = 4;

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub enum WeightedNorm {
    /// `sup_m || <r>^(-1/2) v ||_{L^2(A_m)}`
    LocalEnergy,
    /// `sum_m || <r>^(1/2) v ||_{L^2(A_m)}`
    LocalEnergyDual,
    /// `sup_{i+k<=n} || <r>^q d_r^i S_r^k v ||` in the dual local energy norm
    Z { n: usize, q: f64 },
}

/// A radial field given either exactly or by samples on a grid.
#[derive(Clone, Copy)]
pub enum Field<'a> {
    Profile(&'a RadialProfile),
    Sampled { grid: &'a Grid1D, values: &'a [f64] },
}

impl Field<'_> {
    fn covered_annuli(&self) -> Option<u32> {
        match self {
            Field::Profile(_) => None,
            Field::Sampled { grid, .. } => {
                let r = grid.r_max();
                if r < 2.0 {
                    None
                } else {
                    Some((r.log2().floor() as u32).saturating_sub(1))
                }
            }
        }
    }
}

/// Per-annulus values `|| <r>^s v ||_{L^2(A_m)}` for `m = 0..=m_max`,
/// with `v` evaluated by `eval`.
pub fn annulus_l2<F: Fn(f64) -> f64>(eval: F, s: f64, m_max: u32) -> Vec<f64> {
    let rule = gl32();
    (0..=m_max)
        .map(|m| {
            let (lo, hi) = DyadicAnnulus::new(m).radial_bounds();
            let dw = (hi - lo) / PANELS as f64;
            let mut acc = 0.0;
            for p in 0..PANELS {
                let a = lo + p as f64 * dw;
                acc += rule.integrate(a, a + dw, |r| {
                    let br = japanese_bracket(r).unwrap_or(1.0);
                    let v = eval(r) * br.powf(s);
                    v * v * FOUR_PI * r * r
                });
            }
            acc.sqrt()
        })
        .collect()
}

fn norm_of<F: Fn(f64) -> f64>(eval: F, kind: WeightedNorm, q: f64, m_max: u32) -> f64 {
    match kind {
        WeightedNorm::LocalEnergy => annulus_l2(&eval, -0.5, m_max).into_iter().fold(0.0, f64::max),
        _ => annulus_l2(|r| eval(r) * japanese_bracket(r).unwrap_or(1.0).powf(q), 0.5, m_max)
            .into_iter()
            .sum(),
    }
}

/// Discretized weighted norm over annuli `0..=m_max`. For sampled fields
/// `m_max = None` uses every annulus the grid covers.
pub fn eval_weighted_norm(field: Field<'_>, norm: WeightedNorm, m_max: Option<u32>) -> Result<f64, SymbolicError> {
    let m_max = match (m_max, field.covered_annuli()) {
        (Some(m), Some(cov)) if m > cov => {
            let needed = 2f64.powi(m as i32 + 1);
            let r_max = match field {
                Field::Sampled { grid, .. } => grid.r_max(),
                Field::Profile(_) => f64::INFINITY,
            };
            return Err(SymbolicError::GridCoverage { m, needed, r_max });
        }
        (Some(m), _) => m,
        (None, Some(cov)) => cov,
        (None, None) => 12,
    };
    match field {
        Field::Profile(p) => match norm {
            WeightedNorm::Z { n, q } => {
                if n > p.max_order() {
                    return Err(SymbolicError::InsufficientOrder { needed: n, available: p.max_order() });
                }
                let mut best = 0.0f64;
                for k in 0..=n {
                    let mut g = p.clone();
                    for _ in 0..k {
                        g = RadialProfile::radius().mul(&g.derivative());
                    }
                    for _ in 0..=(n - k) {
                        best = best.max(norm_of(|r| g.eval(r), norm, q, m_max));
                        g = g.derivative();
                    }
                }
                Ok(best)
            }
            _ => Ok(norm_of(|r| p.eval(r), norm, 0.0, m_max)),
        },
        Field::Sampled { grid, values } => {
            let interp = |vals: &[f64], r: f64| grid.interpolate(vals, r).unwrap_or(0.0);
            match norm {
                WeightedNorm::Z { n, q } => {
                    let mut best = 0.0f64;
                    let r = grid.r();
                    for k in 0..=n {
                        let mut g: Vec<f64> = values.to_vec();
                        let mut parity = 1.0;
                        for _ in 0..k {
                            let d = d_dr(grid, &g, parity);
                            g = d.iter().zip(r).map(|(d, r)| d * r).collect();
                        }
                        for _ in 0..=(n - k) {
                            best = best.max(norm_of(|x| interp(&g, x), norm, q, m_max));
                            g = d_dr(grid, &g, parity);
                            parity = -parity;
                        }
                    }
                    Ok(best)
                }
                _ => Ok(norm_of(|x| interp(values, x), norm, 0.0, m_max)),
            }
        }
    }
}
