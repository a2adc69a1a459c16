//! Acceptance run: one line per criterion, nonzero exit on any failure.

use std::collections::BTreeMap;
use std::f64::consts::PI;
use std::process::ExitCode;
use std::sync::OnceLock;
use std::time::Instant;

use num_complex::Complex64 as C;
use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use wavetail::evolution::{convergence_study, evolve, CauchyData, EvolveParams, TimeSeries};
use wavetail::grid::Grid1D;
use wavetail::harness::{run_scenario, ScenarioConfig, Stage};
use wavetail::metric::{normalize, MetricPreset, MetricSpec, NormalizedMetric};
use wavetail::operator::{assemble_discrete, build_operator, radial_reduce, RadialOperator};
use wavetail::par::ExecMode;
use wavetail::poisson::{radial_poisson_inverse, zero_resolvent_expand, BootstrapParams};
use wavetail::quad::{gl32, panels};
use wavetail::resolvent::{
    geometric_taus, low_freq_scan, pointwise_bound_check, z_source, ResolventSolver, Source,
};
use wavetail::symbolic::profile::{ball_source, bump_pulse, windowed_gaussian, RadialProfile, SymbolClass};
use wavetail::synthesis::{synthesize, SynthesisPlan};
use wavetail::tails::{fit_tail, Observable};

type Criterion = (u32, &'static str, fn() -> Outcome);

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn preset(kappa: u32) -> MetricPreset {
    match kappa {
        0 => MetricPreset::Flat,
        1 => MetricPreset::PriceK1 { mass: 0.1 },
        k => MetricPreset::Family { kappa: k, eps: MetricPreset::default_eps(k) },
    }
}

fn normalized(kappa: u32) -> NormalizedMetric {
    normalize(&MetricSpec::from_preset(&preset(kappa)).unwrap()).unwrap()
}

fn operator(kappa: u32, ell: u32) -> RadialOperator {
    radial_reduce(&build_operator(&normalized(kappa)).unwrap(), ell)
}

fn sup_abs(v: impl Iterator<Item = f64>) -> f64 {
    v.fold(0.0, |m, x| m.max(x.abs()))
}

const TAIL_WINDOW: (f64, f64) = (400.0, 1400.0);
const TAIL_OBSERVER: f64 = 10.0;

/// Late-time runs at `r = 10` for `kappa = 1, 2, 3`, shared by the exponent
/// criteria.
fn tail_runs() -> &'static BTreeMap<u32, TimeSeries> {
    static RUNS: OnceLock<BTreeMap<u32, TimeSeries>> = OnceLock::new();
    RUNS.get_or_init(|| {
        std::thread::scope(|s| {
            let handles: Vec<_> = (1..=3)
                .map(|k| {
                    s.spawn(move || {
                        let rop = operator(k, 0);
                        let data = CauchyData::pulse(0, 6.0, 10.0, true);
                        let mut runs = evolve(&rop, &data, 1500.0, &[TAIL_OBSERVER], &EvolveParams::default()).unwrap();
                        (k, runs.remove(0))
                    })
                })
                .collect();
            handles.into_iter().map(|h| h.join().unwrap()).collect()
        })
    })
}

fn exponent(kappa: u32, obs: Observable) -> f64 {
    fit_tail(&tail_runs()[&kappa], obs, TAIL_WINDOW).unwrap().p_infinity
}

fn c1_huygens() -> Outcome {
    let data = CauchyData::pulse(0, 6.0, 10.0, true);
    let p = EvolveParams { h: 0.0125, ..Default::default() };
    let s = &evolve(&RadialOperator::flat(0), &data, 100.0, &[2.0], &p).unwrap()[0];
    let peak = sup_abs(s.u_values.iter().copied());
    let late = sup_abs(s.times.iter().zip(&s.u_values).filter(|(t, _)| **t >= 14.0).map(|(_, u)| *u));
    let ratio = late / peak;
    outcome(ratio < 1e-8, format!("flat l=0 late |u|/peak = {ratio:.3e} (< 1e-8)"))
}

fn exponent_outcome(kappa: u32, target: f64, tol: f64) -> Outcome {
    let p = exponent(kappa, Observable::U);
    outcome((p - target).abs() <= tol, format!("kappa={kappa} p_inf(u) = {p:.4} (target {target} +- {tol})"))
}

fn c2_price() -> Outcome {
    exponent_outcome(1, -3.0, 0.15)
}

fn c3_family_k2() -> Outcome {
    let pu = exponent(2, Observable::U);
    let pd = exponent(2, Observable::DtU);
    let pass = (pu + 4.0).abs() <= 0.15 && (pd + 5.0).abs() <= 0.25;
    outcome(pass, format!("p_inf(u) = {pu:.4} (-4 +- 0.15), p_inf(dt u) = {pd:.4} (-5 +- 0.25)"))
}

fn c4_kappa3() -> Outcome {
    let s = &tail_runs()[&3];
    let peak = sup_abs(s.u_values.iter().copied());
    let late = sup_abs(s.times.iter().zip(&s.u_values).filter(|(t, _)| (**t - TAIL_WINDOW.1).abs() < 1.0).map(|(_, u)| *u));
    let above_floor = late / peak;
    let base = exponent_outcome(3, -5.0, 0.25);
    // the fitted window must sit well above the double-precision floor
    let pass = base.pass && above_floor > 1e3 * f64::EPSILON;
    outcome(pass, format!("{}, |u(t_end)|/peak = {above_floor:.3e} (> {:.1e})", base.detail, 1e3 * f64::EPSILON))
}

fn c5_ladder() -> Outcome {
    let p: Vec<f64> = (1..=3).map(|k| exponent(k, Observable::U)).collect();
    let steps = [p[1] - p[0], p[2] - p[1]];
    let pass = steps.iter().all(|d| (d + 1.0).abs() <= 0.3);
    outcome(pass, format!("steps per unit kappa = {:.4}, {:.4} (-1 +- 0.3)", steps[0], steps[1]))
}

fn c6_zero_resolvent() -> Outcome {
    let rop = operator(2, 0);
    let grid = Grid1D::sinh(0.01, 256.0, 4096.0).unwrap();
    let solver = ResolventSolver::new(&rop, &grid).unwrap();
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for lambda in 1..=3 {
        let g = z_source(lambda);
        let ex = zero_resolvent_expand(&rop, &g, lambda, &grid, &BootstrapParams::default()).unwrap();
        let direct = solver.solve(C::new(0.0, 0.0), &Source::Profile(g)).unwrap();
        let rec = ex.reconstruct();
        let inside: Vec<usize> = (0..grid.len()).filter(|&i| (2.0..=2048.0).contains(&grid.r()[i])).collect();
        let num = sup_abs(inside.iter().map(|&i| rec[i] - direct.v[i].re));
        let den = sup_abs(inside.iter().map(|&i| direct.v[i].re));
        worst = worst.max(num / den);
        parts.push(format!("{:.2e}", num / den));
    }
    outcome(worst < 1e-6, format!("kappa=2 lambda=1,2,3 relative sup = {} (< 1e-6)", parts.join(", ")))
}

/// Newton potential by direct quadrature of the kernel in spherical
/// coordinates centred at the field point `r > 0`; the angular integral runs
/// over `rho = |x + y|`, with `dmu = rho drho / (r s)`.
fn newton_potential(g: &RadialProfile, r: f64, s_max: f64, edge: Option<f64>) -> f64 {
    let rule = gl32();
    let mut cuts = vec![r];
    cuts.extend(edge.into_iter().flat_map(|a| [(r - a).abs(), r + a]));
    let outer = panels(0.0, s_max, &cuts, 0.1, 0.1);
    let outer: f64 = outer
        .windows(2)
        .map(|w| {
            rule.integrate(w[0], w[1], |s| {
                let inner = panels((r - s).abs(), r + s, edge.as_slice(), 0.1, 0.1);
                let inner: f64 = inner.windows(2).map(|v| rule.integrate(v[0], v[1], |rho| rho * g.eval(rho))).sum();
                inner / r
            })
        })
        .sum();
    0.5 * outer
}

fn c7_poisson() -> Outcome {
    let radii: Vec<f64> = (0..20).map(|k| 0.15 + 0.4 * k as f64).collect();
    let ball = ball_source(1.0);
    let gauss = RadialProfile::new(|r| (-(r * r)).exp(), SymbolClass::L1S(-20.0));
    let vb = radial_poisson_inverse(&ball, 3).unwrap();
    let vg = radial_poisson_inverse(&gauss, 3).unwrap();
    let mut eb: f64 = 0.0;
    let mut eg: f64 = 0.0;
    for &r in &radii {
        let ob = newton_potential(&ball, r, r + 1.0, Some(1.0));
        let og = newton_potential(&gauss, r, r + 8.0, None);
        eb = eb.max((vb.eval(r) - ob).abs() / ob.abs());
        eg = eg.max((vg.eval(r) - og).abs() / og.abs());
    }
    // closed form for the unit-mass ball as a second witness
    let closed = sup_abs(radii.iter().map(|&r| {
        let exact = if r < 1.0 { (3.0 - r * r) / (8.0 * PI) } else { 1.0 / (4.0 * PI * r) };
        (vb.eval(r) - exact) / exact
    }));
    let pass = eb < 1e-8 && eg < 1e-8 && closed < 1e-8;
    outcome(pass, format!("20 radii: ball {eb:.2e}, gaussian {eg:.2e}, ball closed form {closed:.2e} (< 1e-8)"))
}

fn c8_defect() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(8);
    let grid = Grid1D::uniform(0.05, 60.0).unwrap();
    let g = Source::Profile(windowed_gaussian(5.0, 1.0, 1.0, 9.0));
    let ops: Vec<RadialOperator> = (0..=3).map(|ell| operator(2, ell)).collect();
    let mut worst: f64 = 0.0;
    for _ in 0..20 {
        let ell = rng.gen_range(0..=3usize);
        let tau = C::new(rng.gen_range(-4.0..4.0), -rng.gen_range(0.0..0.5));
        let sol = ResolventSolver::new(&ops[ell], &grid).unwrap().solve(tau, &g).unwrap();
        worst = worst.max(sol.defect);
    }
    outcome(worst < 1e-8, format!("20 random (tau, l), kappa=2: max defect = {worst:.2e} (< 1e-8)"))
}

fn c9_radiation() -> Outcome {
    let rop = operator(2, 0);
    let grid = Grid1D::uniform(0.1, 2.0e4).unwrap();
    let solver = ResolventSolver::new(&rop, &grid).unwrap();
    let g = Source::Profile(bump_pulse(1.0, 3.0));
    let mut worst: f64 = 0.0;
    let mut parts = Vec::new();
    for tau in [0.25, 0.5, 1.0, 2.0] {
        let sol = solver.solve(C::new(tau, 0.0), &g).unwrap();
        let scale = sup_abs(sol.psi.iter().map(|p| p.norm()));
        let rel = sol.radiation_residual / scale;
        worst = worst.max(rel);
        parts.push(format!("{rel:.2e}"));
    }
    outcome(worst < 1e-4, format!("R_max = 2e4: residual/max|rv| = {} (< 1e-4)", parts.join(", ")))
}

fn c10_slope() -> Outcome {
    let rop = operator(2, 0);
    let grid = Grid1D::uniform(0.05, 512.0).unwrap();
    let rep = low_freq_scan(&rop, &z_source(1), 1, &geometric_taus(0.25, 13), &grid, ExecMode::Parallel).unwrap();
    let s = rep.fitted_slope;
    outcome((s - 1.0).abs() <= 0.1, format!("lambda=1 kappa=2 slope = {s:.4} (1 +- 0.1)"))
}

fn c11_log_template() -> Outcome {
    let rop = operator(2, 0);
    let grid = Grid1D::uniform(0.05, 512.0).unwrap();
    let rep = low_freq_scan(&rop, &z_source(3), 3, &geometric_taus(0.25, 13), &grid, ExecMode::Parallel).unwrap();
    let worst = rep.epsilon_profile.iter().map(|f| f.r_squared).fold(f64::INFINITY, f64::min);
    let pass = !rep.epsilon_profile.is_empty() && worst >= 0.95;
    outcome(pass, format!("lambda=3 kappa=2: min R^2 over {} radii = {worst:.4} (>= 0.95)", rep.epsilon_profile.len()))
}

fn c12_pointwise() -> Outcome {
    let rop = operator(2, 0);
    let grid = Grid1D::uniform(0.025, 400.0).unwrap();
    let mut taus = geometric_taus(8.0, 7);
    taus.extend(geometric_taus(1.0, 13).into_iter().skip(1));
    let tab = pointwise_bound_check(&rop, &bump_pulse(1.0, 3.0), &taus, 1, &grid, ExecMode::Parallel).unwrap();
    let growth = tab.spreads.iter().map(|s| s.growth).fold(0.0, f64::max);
    outcome(tab.bounded(3.0), format!("{} tables, max growth = {growth:.3} (< 3)", tab.spreads.len()))
}

fn c13_synthesis() -> Outcome {
    let rop = operator(2, 0);
    let data = CauchyData::pulse(0, 6.0, 10.0, true);
    let s = &evolve(&rop, &data, 50.0, &[10.0], &EvolveParams::default()).unwrap()[0];
    let plan = SynthesisPlan::causal(50.0, 10.0, 10.0, 0.05).unwrap();
    let y = &synthesize(&rop, &data, &[10.0], &s.times, &plan).unwrap()[0];
    let (mut num, mut den) = (0.0, 0.0);
    for k in 0..s.times.len() {
        if (10.0..=50.0).contains(&s.times[k]) {
            num += (y.u_values[k] - s.u_values[k]).powi(2);
            den += s.u_values[k].powi(2);
        }
    }
    let rel = (num / den).sqrt();
    outcome(rel < 1e-2, format!("kappa=2 relative L2 on [10, 50] = {rel:.2e} (< 1e-2)"))
}

fn c14_structure() -> Outcome {
    let mut notes = Vec::new();
    let mut pass = true;

    let rop = operator(2, 1);
    let grid = Grid1D::sinh(0.02, 64.0, 200.0).unwrap();
    let (h, a) = assemble_discrete(&rop, &grid).unwrap().real_parts();
    let n = grid.n();
    let scale = (3..n - 3).map(|i| h.get(i, i).abs()).fold(0.0, f64::max);
    let (mut sym, mut anti): (f64, f64) = (0.0, 0.0);
    for i in 3..n - 3 {
        for j in i.saturating_sub(2).max(3)..=(i + 2).min(n - 4) {
            sym = sym.max((h.get(i, j) - h.get(j, i)).abs() / scale);
            anti = anti.max((a.get(i, j) + a.get(j, i)).abs() / scale);
        }
    }
    pass &= sym <= 1e-10 && anti <= 1e-10;
    notes.push(format!("sym {sym:.1e} anti {anti:.1e}"));

    let mut norm_res: f64 = 0.0;
    for k in 1..=3 {
        let (x, y) = normalized(k).residuals();
        norm_res = norm_res.max(x).max(y);
    }
    pass &= norm_res < 1e-10;
    notes.push(format!("normalization {norm_res:.1e}"));

    let flat_grid = Grid1D::uniform(0.1, 30.0).unwrap();
    let mut flat_dev: f64 = 0.0;
    for ell in 0..=2 {
        let got = radial_reduce(&build_operator(&normalized(0)).unwrap(), ell).coefficient_table(&flat_grid).unwrap();
        let want = RadialOperator::flat(ell).coefficient_table(&flat_grid).unwrap();
        for (x, y) in got.iter().zip(&want) {
            for c in 1..6 {
                flat_dev = flat_dev.max((x[c] - y[c]).abs());
            }
        }
    }
    pass &= flat_dev < 1e-12;
    notes.push(format!("flat coeffs {flat_dev:.1e}"));

    let smooth = CauchyData::new(0, windowed_gaussian(8.0, 0.7, 3.8, 12.2), RadialProfile::zero(), (3.8, 12.2));
    let conv = convergence_study(&RadialOperator::flat(0), &smooth, 2.0, (0.0, 20.0), 0.1, &EvolveParams::default()).unwrap();
    let order = conv.observed_order;
    pass &= (order - 4.0).abs() <= 0.3;
    notes.push(format!("order {order:.3}"));

    let dir = tempfile::tempdir().unwrap();
    let mut cfg = ScenarioConfig::preset("family_k2");
    cfg.run.t_max = 40.0;
    cfg.run.window = [15.0, 38.0];
    cfg.output_dir = Some(dir.path().join("rerun").to_string_lossy().into_owned());
    let snapshot = |cfg: &ScenarioConfig| {
        let art = run_scenario(cfg, Stage::Evolve).unwrap();
        let mut names: Vec<_> = std::fs::read_dir(&art.path).unwrap().map(|e| e.unwrap().path()).collect();
        names.sort();
        names.into_iter().map(|p| (p.clone(), std::fs::read(p).unwrap())).collect::<Vec<_>>()
    };
    let first = snapshot(&cfg);
    let second = snapshot(&cfg);
    let identical = first == second;
    let rop0 = operator(2, 0);
    let data = CauchyData::pulse(0, 6.0, 10.0, true);
    let par = evolve(&rop0, &data, 40.0, &[10.0], &EvolveParams::default()).unwrap();
    let seq = evolve(&rop0, &data, 40.0, &[10.0], &EvolveParams { mode: ExecMode::Sequential, ..Default::default() }).unwrap();
    let modes_agree = par == seq;
    pass &= identical && modes_agree;
    notes.push(format!("rerun identical {identical} ({} files), par == seq {modes_agree}", first.len()));

    outcome(pass, notes.join("; "))
}

fn main() -> ExitCode {
    let criteria: [Criterion; 14] = [
        (1, "flat Huygens", c1_huygens),
        (2, "price_k1 exponent", c2_price),
        (3, "family_k2 exponents", c3_family_k2),
        (4, "kappa=3 exponent", c4_kappa3),
        (5, "exponent ladder", c5_ladder),
        (6, "zero-frequency reconstruction", c6_zero_resolvent),
        (7, "Poisson inverse vs convolution", c7_poisson),
        (8, "resolvent defect", c8_defect),
        (9, "outgoing condition", c9_radiation),
        (10, "low-frequency slope", c10_slope),
        (11, "log template", c11_log_template),
        (12, "pointwise tables", c12_pointwise),
        (13, "synthesis vs evolution", c13_synthesis),
        (14, "structural checks", c14_structure),
    ];
    // `ACCEPTANCE_ONLY=3,7` runs a subset
    let only: Option<Vec<u32>> =
        std::env::var("ACCEPTANCE_ONLY").ok().map(|v| v.split(',').filter_map(|x| x.trim().parse().ok()).collect());
    let selected: Vec<_> = criteria.into_iter().filter(|c| only.as_ref().is_none_or(|o| o.contains(&c.0))).collect();
    let total = selected.len();
    let mut failed = 0;
    for (n, name, run) in selected {
        let t0 = Instant::now();
        let o = run();
        let verdict = if o.pass { "PASS" } else { "FAIL" };
        println!("criterion {n:>2} {verdict} {name}: {} [{:.1}s]", o.detail, t0.elapsed().as_secs_f64());
        if !o.pass {
            failed += 1;
        }
    }
    println!("acceptance: {} of {total} passed", total - failed);
    if failed == 0 {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
