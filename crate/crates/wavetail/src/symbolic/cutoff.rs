//! Smooth cutoffs, the Japanese bracket and the smooth minimum.

use crate::jet::Jet;
use crate::symbolic::SymbolicError;

/// `exp(-1/x)` for `x > 0`, identically zero otherwise.
fn sigma(x: Jet) -> Jet {
    if x.value() <= 0.0 {
        Jet::constant(0.0)
    } else {
        (-x.recip()).exp()
    }
}

/// Transition profile equal to 1 on `r <= 1` and 0 on `r >= 2`.
pub fn chi_below_jet(r: Jet) -> Jet {
    let v = r.value();
    if v <= 1.0 {
        return Jet::constant(1.0);
    }
    if v >= 2.0 {
        return Jet::constant(0.0);
    }
    let a = sigma(Jet::constant(2.0) - r);
    let b = sigma(r - 1.0);
    a / (a + b)
}

/// Complement of [`chi_below_jet`], computed as `1 - chi_below` so the two
/// sum to one exactly.
pub fn chi_above_jet(r: Jet) -> Jet {
    let b = chi_below_jet(r);
    let mut c = -b;
    c.c[0] = 1.0 - b.value();
    c
}

/// `chi_below(r / scale)`.
pub fn chi_below(r: f64, scale: f64) -> f64 {
    chi_below_jet(Jet::constant(r / scale)).value()
}

/// `chi_above(r / scale)`.
pub fn chi_above(r: f64, scale: f64) -> f64 {
    1.0 - chi_below(r, scale)
}

pub fn chi_below_scaled(r: Jet, scale: f64) -> Jet {
    chi_below_jet(r.scale(1.0 / scale))
}

pub fn chi_above_scaled(r: Jet, scale: f64) -> Jet {
    chi_above_jet(r.scale(1.0 / scale))
}

/// Bump supported in `[scale/2, 2 scale]`, equal to 1 at `r = scale`.
pub fn chi_near_jet(r: Jet, scale: f64) -> Jet {
    chi_below_scaled(r, scale) - chi_below_scaled(r, scale / 2.0)
}

pub fn chi_near(r: f64, scale: f64) -> f64 {
    chi_near_jet(Jet::constant(r), scale).value()
}

/// Blend weight used by the bracket: 0 for `r <= 1`, 1 for `r >= 2`.
fn bracket_weight(r: Jet) -> Jet {
    chi_above_jet(r)
}

/// `<r> = b r + (1 - b) sqrt(1 + r^2)` with `b = chi_above(r)`.
pub fn bracket_jet(r: Jet) -> Jet {
    let v = r.value();
    if v >= 2.0 {
        return r;
    }
    let b = bracket_weight(r);
    let root = (r * r).add_scalar(1.0).sqrt();
    b * r + (Jet::constant(1.0) - b) * root
}

pub fn japanese_bracket(r: f64) -> Result<f64, SymbolicError> {
    if !(r >= 0.0) {
        return Err(SymbolicError::NegativeRadius(r));
    }
    Ok(bracket_jet(Jet::constant(r)).value())
}

/// Dyadic partition member supported where `<r>` lies in
/// `[2^(m-1), 2^(m+1)]`; the family sums to one on `<r> >= 1`.
pub fn beta_jet(m: u32, r: Jet) -> Jet {
    let br = bracket_jet(r);
    if m == 0 {
        return chi_below_jet(br);
    }
    let hi = chi_below_jet(br.scale(0.5f64.powi(m as i32)));
    let lo = chi_below_jet(br.scale(0.5f64.powi(m as i32 - 1)));
    hi - lo
}

pub fn beta(m: u32, r: f64) -> f64 {
    beta_jet(m, Jet::constant(r)).value()
}

/// Sum of `beta(m, r)` for `m <= m_max`; equals one whenever
/// `<r> <= 2^m_max`.
pub fn beta_partial_sum(m_max: u32, r: f64) -> f64 {
    (0..=m_max).map(|m| beta(m, r)).sum()
}

fn smooth_min_half(a: Jet, b: Jet) -> Jet {
    let ratio = a / b;
    let lo = chi_below_jet(ratio);
    let hi = chi_above_jet(ratio);
    lo * a + hi * b
}

/// Smooth symmetric minimum, exact outside the ratio band `[1/2, 2]`.
pub fn smooth_min_jet(a: Jet, b: Jet) -> Jet {
    (smooth_min_half(a, b) + smooth_min_half(b, a)).scale(0.5)
}

pub fn smooth_min(a: f64, b: f64) -> Result<f64, SymbolicError> {
    if !(a > 0.0 && b > 0.0) {
        return Err(SymbolicError::NonPositive(a.min(b)));
    }
    Ok(smooth_min_jet(Jet::constant(a), Jet::constant(b)).value())
}

#[cfg(test)]
mod tests {
    use super::*;

    #[test]
    fn bracket_examples() {
        assert_eq!(japanese_bracket(3.0).unwrap(), 3.0);
        assert_eq!(japanese_bracket(0.0).unwrap(), 1.0);
        assert!(japanese_bracket(-1.0).is_err());
        let pts = [0.0, 0.5, 1.0, 1.5, 2.0, 5.0];
        let vals: Vec<f64> = pts.iter().map(|&r| japanese_bracket(r).unwrap()).collect();
        assert!(vals.windows(2).all(|w| w[1] > w[0]));
    }

    #[test]
    fn smooth_min_examples() {
        assert_eq!(smooth_min(10.0, 1.0).unwrap(), 1.0);
        assert_eq!(smooth_min(3.0, 7.0).unwrap(), smooth_min(7.0, 3.0).unwrap());
        let c = 2.5;
        let m = smooth_min(c, c).unwrap();
        assert!(m >= c / 2.0 && m <= c);
        assert!(smooth_min(0.0, 1.0).is_err());
    }

    #[test]
    fn cutoff_plateaus() {
        assert_eq!(chi_below(1.0, 1.0), 1.0);
        assert_eq!(chi_below(2.0, 1.0), 0.0);
        assert_eq!(chi_above(0.3, 1.0), 0.0);
        assert_eq!(chi_near(1.0, 1.0), 1.0);
    }
}
