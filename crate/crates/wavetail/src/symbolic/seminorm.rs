//! Dyadic seminorm tables for symbol-class falsification.

use serde::Serialize;

use crate::symbolic::cutoff::japanese_bracket;
use crate::symbolic::profile::{RadialProfile, SymbolClass};
use crate::symbolic::SymbolicError;

/// Samples per annulus.
const SAMPLES: usize = 64;
/// Allowed growth between consecutive trailing annuli.
const GROWTH_SLACK: f64 = 1.5;
/// Number of trailing annuli inspected by the verdict.
const TRAILING: usize = 4;

/// `A_m = { 2^m <= <r> <= 2^(m+1) }`; `A_0` is the ball `r <= 2`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub struct DyadicAnnulus {
    pub m: u32,
}

impl DyadicAnnulus {
    pub fn new(m: u32) -> Self {
        DyadicAnnulus { m }
    }

    /// Bounds in `<r>`.
    pub fn bracket_bounds(&self) -> (f64, f64) {
        let lo = 2f64.powi(self.m as i32);
        (lo, 2.0 * lo)
    }

    /// Bounds in `r`.
    pub fn radial_bounds(&self) -> (f64, f64) {
        if self.m == 0 {
            (0.0, 2.0)
        } else {
            self.bracket_bounds()
        }
    }

    /// Sample radii; for `m >= 1` these are `2^m` times a fixed geometric
    /// set, so rescaling `r -> 2r` maps samples onto samples.
    pub fn samples(&self) -> Vec<f64> {
        let (lo, hi) = self.radial_bounds();
        if self.m == 0 {
            (0..=SAMPLES).map(|k| hi * k as f64 / SAMPLES as f64).collect()
        } else {
            (0..=SAMPLES).map(|k| lo * 2f64.powf(k as f64 / SAMPLES as f64)).collect()
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize)]
pub enum Verdict {
    Consistent,
    Inconsistent,
}

#[derive(Clone, Debug, Serialize)]
pub struct SeminormTable {
    pub class: String,
    /// `entries[j][m]`: weighted sup of the `j`-th derivative on `A_m`
    /// (for l1S classes, the dyadic term `2^(m(j-q)) sup |d^j f|`).
    pub entries: Vec<Vec<f64>>,
    /// Partial sums over `m` of `entries[j]` (meaningful for l1S).
    pub partial_sums: Vec<Vec<f64>>,
    pub verdict: Verdict,
}

fn weight(class: SymbolClass, j: usize, m: u32, br: f64) -> f64 {
    match class {
        SymbolClass::S(q) | SymbolClass::SRad(q) => br.powf(j as f64 - q),
        SymbolClass::L1S(q) => 2f64.powf(m as f64 * (j as f64 - q)),
        SymbolClass::SLog => {
            if j == 0 {
                1.0 / (1.0 + br.ln())
            } else {
                br.powi(j as i32)
            }
        }
    }
}

/// Tabulate weighted derivative sups per annulus `m = 0..=m_max` for
/// `j = 0..=j_max` and decide whether the claimed class is falsified.
pub fn estimate_seminorms(
    f: &RadialProfile,
    class: SymbolClass,
    m_max: u32,
    j_max: usize,
) -> Result<SeminormTable, SymbolicError> {
    if m_max < 2 {
        return Err(SymbolicError::EmptyRange);
    }
    if j_max > f.max_order() {
        return Err(SymbolicError::InsufficientOrder { needed: j_max, available: f.max_order() });
    }
    let mut entries = vec![vec![0.0; m_max as usize + 1]; j_max + 1];
    for m in 0..=m_max {
        let ann = DyadicAnnulus::new(m);
        for r in ann.samples() {
            let jet = f.jet(r);
            let br = japanese_bracket(r)?;
            for (j, row) in entries.iter_mut().enumerate() {
                let v = jet.deriv(j).abs() * weight(class, j, m, br);
                if v > row[m as usize] || v.is_nan() {
                    row[m as usize] = v;
                }
            }
        }
    }
    let partial_sums: Vec<Vec<f64>> = entries
        .iter()
        .map(|row| {
            row.iter()
                .scan(0.0, |acc, &v| {
                    *acc += v;
                    Some(*acc)
                })
                .collect()
        })
        .collect();
    let consistent = entries.iter().all(|row| match class {
        SymbolClass::L1S(_) => geometric_decay(row),
        _ => bounded_tail(row),
    });
    Ok(SeminormTable {
        class: class.to_string(),
        entries,
        partial_sums,
        verdict: if consistent { Verdict::Consistent } else { Verdict::Inconsistent },
    })
}

fn trailing(row: &[f64]) -> &[f64] {
    &row[row.len().saturating_sub(TRAILING)..]
}

fn scale_floor(row: &[f64]) -> f64 {
    row.iter().fold(0.0f64, |a, &b| a.max(b)) * 1e-13 + f64::MIN_POSITIVE
}

fn bounded_tail(row: &[f64]) -> bool {
    let floor = scale_floor(row);
    row.iter().all(|v| v.is_finite())
        && trailing(row).windows(2).all(|w| w[1] <= GROWTH_SLACK * w[0] + floor)
}

fn geometric_decay(row: &[f64]) -> bool {
    let floor = scale_floor(row);
    let t = trailing(row);
    bounded_tail(row)
        && t.windows(2).all(|w| w[1] <= w[0] + floor)
        && t[t.len() - 1] <= 0.9 * t[0] + floor
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_power_classes() {
        let f = RadialProfile::bracket_power(-2.0);
        let t = estimate_seminorms(&f, SymbolClass::S(-2.0), 10, 3).unwrap();
        assert_eq!(t.verdict, Verdict::Consistent);
        let t = estimate_seminorms(&f, SymbolClass::L1S(-1.0), 10, 3).unwrap();
        assert_eq!(t.verdict, Verdict::Consistent);
    }

    #[test]
    fn log_fails_decaying_class() {
        let f = RadialProfile::bracket_log();
        let t = estimate_seminorms(&f, SymbolClass::S(-1.0), 10, 2).unwrap();
        assert_eq!(t.verdict, Verdict::Inconsistent);
    }

    #[test]
    fn rejects_bad_ranges() {
        let f = RadialProfile::bracket_power(-2.0).with_max_order(2);
        assert!(estimate_seminorms(&f, SymbolClass::S(-2.0), 1, 1).is_err());
        assert!(estimate_seminorms(&f, SymbolClass::S(-2.0), 5, 3).is_err());
    }
}
