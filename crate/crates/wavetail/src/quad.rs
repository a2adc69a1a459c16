//! Gauss-Legendre rules and composite integrators.

use std::sync::OnceLock;

/// Nodes and weights of the `n`-point Gauss-Legendre rule on `[-1, 1]`.
pub fn gauss_legendre(n: usize) -> (Vec<f64>, Vec<f64>) {
    let mut x = vec![0.0; n];
    let mut w = vec![0.0; n];
    let m = n.div_ceil(2);
    for i in 0..m {
        let mut z = (std::f64::consts::PI * (i as f64 + 0.75) / (n as f64 + 0.5)).cos();
        let mut dp = 0.0;
        for _ in 0..100 {
            let (p, d) = legendre(n, z);
            dp = d;
            let dz = p / d;
            z -= dz;
            if dz.abs() < 1e-16 {
                break;
            }
        }
        let (_, d) = legendre(n, z);
        if d != 0.0 {
            dp = d;
        }
        x[i] = -z;
        x[n - 1 - i] = z;
        let wi = 2.0 / ((1.0 - z * z) * dp * dp);
        w[i] = wi;
        w[n - 1 - i] = wi;
    }
    (x, w)
}

fn legendre(n: usize, z: f64) -> (f64, f64) {
    let mut p0 = 1.0;
    let mut p1 = z;
    for k in 2..=n {
        let p2 = ((2 * k - 1) as f64 * z * p1 - (k - 1) as f64 * p0) / k as f64;
        p0 = p1;
        p1 = p2;
    }
    let dp = n as f64 * (z * p1 - p0) / (z * z - 1.0);
    (p1, dp)
}

pub struct Rule {
    pub x: Vec<f64>,
    pub w: Vec<f64>,
}

/// Cached 16-point rule.
pub fn gl16() -> &'static Rule {
    static R: OnceLock<Rule> = OnceLock::new();
    R.get_or_init(|| {
        let (x, w) = gauss_legendre(16);
        Rule { x, w }
    })
}

/// Cached 32-point rule.
pub fn gl32() -> &'static Rule {
    static R: OnceLock<Rule> = OnceLock::new();
    R.get_or_init(|| {
        let (x, w) = gauss_legendre(32);
        Rule { x, w }
    })
}

impl Rule {
    pub fn integrate<F: FnMut(f64) -> f64>(&self, a: f64, b: f64, mut f: F) -> f64 {
        let h = 0.5 * (b - a);
        let c = 0.5 * (a + b);
        let mut s = 0.0;
        for (x, w) in self.x.iter().zip(self.w.iter()) {
            s += w * f(c + h * x);
        }
        s * h
    }
}

/// Panel boundaries covering `[a, b]`: the given breakpoints, plus a
/// geometric refinement so no panel is longer than `max_ratio` times its
/// left endpoint (or `min_width` near the origin).
pub fn panels(a: f64, b: f64, breaks: &[f64], min_width: f64, max_ratio: f64) -> Vec<f64> {
    let mut pts = vec![a];
    let mut cuts: Vec<f64> = breaks.iter().copied().filter(|&x| x > a && x < b).collect();
    cuts.push(b);
    cuts.sort_by(f64::total_cmp);
    let mut cur = a;
    for &c in &cuts {
        while cur < c {
            let step = (cur * max_ratio).max(min_width);
            let next = if cur + step >= c * (1.0 - 1e-12) { c } else { cur + step };
            pts.push(next);
            cur = next;
        }
    }
    pts
}

/// Integral of `f` over `[a, b]` with composite 16-point panels.
pub fn integrate_panels<F: FnMut(f64) -> f64>(pts: &[f64], mut f: F) -> f64 {
    let rule = gl16();
    pts.windows(2).map(|w| rule.integrate(w[0], w[1], &mut f)).sum()
}

/// Integral of `f` over `[a, inf)` through `s = a / x`, with panels in `x`
/// refined geometrically toward `x = 0` to absorb algebraic decay.
pub fn integrate_to_infinity<F: FnMut(f64) -> f64>(a: f64, mut f: F) -> f64 {
    assert!(a > 0.0);
    let rule = gl16();
    let mut total = 0.0;
    let mut hi = 1.0;
    for _ in 0..60 {
        let lo = hi * 0.5;
        total += rule.integrate(lo, hi, |x| {
            let s = a / x;
            f(s) * a / (x * x)
        });
        hi = lo;
    }
    total
}
