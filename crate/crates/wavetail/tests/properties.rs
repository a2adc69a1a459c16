use std::sync::OnceLock;

use num_complex::Complex64 as C;
use proptest::prelude::*;

use wavetail::evolution::{evolve, CauchyData, EvolveParams, GridMeta, TimeSeries};
use wavetail::grid::Grid1D;
use wavetail::harness::ScenarioConfig;
use wavetail::jet::Jet;
use wavetail::metric::{normalize, MetricPreset, MetricSpec};
use wavetail::operator::{build_operator, radial_reduce, RadialOperator};
use wavetail::par::{map_range, ExecMode};
use wavetail::poisson::radial_poisson_inverse;
use wavetail::resolvent::{ResolventSolver, Source};
use wavetail::symbolic::cutoff::{beta_partial_sum, chi_above, chi_below, japanese_bracket};
use wavetail::symbolic::profile::{windowed_gaussian, RadialProfile, SymbolClass};
use wavetail::tails::{fit_tail, Observable};

fn family_k2(ell: u32) -> &'static RadialOperator {
    static OPS: OnceLock<Vec<RadialOperator>> = OnceLock::new();
    let ops = OPS.get_or_init(|| {
        let spec = MetricSpec::from_preset(&MetricPreset::Family { kappa: 2, eps: MetricPreset::default_eps(2) }).unwrap();
        let oc = build_operator(&normalize(&spec).unwrap()).unwrap();
        (0..=2).map(|l| radial_reduce(&oc, l)).collect()
    });
    &ops[ell as usize]
}

fn resolvent_grid() -> Grid1D {
    Grid1D::uniform(0.1, 40.0).unwrap()
}

fn samples(p: &RadialProfile, grid: &Grid1D) -> Vec<f64> {
    grid.r().iter().map(|&r| p.eval(r)).collect()
}

fn sup_norm(v: &[C]) -> f64 {
    v.iter().fold(0.0, |m, z| m.max(z.norm()))
}

proptest! {
    #[test]
    fn cutoffs_sum_to_one(r in 0.0f64..50.0, scale in 0.1f64..10.0) {
        prop_assert_eq!(chi_below(r, scale) + chi_above(r, scale), 1.0);
        let b = chi_below(r, scale);
        prop_assert!((0.0..=1.0).contains(&b));
    }

    #[test]
    fn dyadic_partition_sums_to_one(r in 0.0f64..1000.0) {
        let br = japanese_bracket(r).unwrap();
        let m = br.log2().ceil().max(0.0) as u32 + 1;
        prop_assert!((beta_partial_sum(m, r) - 1.0).abs() < 1e-14);
    }

    #[test]
    fn bracket_between_max_and_root(r in 0.0f64..100.0) {
        let br = japanese_bracket(r).unwrap();
        prop_assert!(br >= r.max(1.0) - 1e-15);
        prop_assert!(br <= (1.0 + r * r).sqrt() + 1e-15);
    }

    #[test]
    fn jet_exp_inverts_ln(x in 0.1f64..20.0) {
        let back = Jet::variable(x).ln().exp();
        let id = Jet::variable(x);
        // c_k x^(k-1) is scale free for the identity jet
        for k in 0..back.c.len() {
            let unit = x.powi(k as i32 - 1);
            prop_assert!((back.c[k] - id.c[k]).abs() * unit < 1e-12, "coefficient {}", k);
        }
    }

    #[test]
    fn par_and_sequential_maps_agree(n in 0usize..500, seed in any::<u64>()) {
        let f = |i: usize| (i as u64).wrapping_mul(seed) ^ (seed >> 7);
        prop_assert_eq!(map_range(ExecMode::Parallel, n, f), map_range(ExecMode::Sequential, n, f));
    }

    #[test]
    fn config_survives_toml_round_trip(
        t_max in 10.0f64..3000.0,
        h in 0.005f64..0.2,
        observers in prop::collection::vec(1.0f64..50.0, 1..4),
        eps in prop::option::of(0.01f64..1.0),
        damping in prop::option::of(0.0f64..0.1),
        parallel in any::<bool>(),
    ) {
        let mut cfg = ScenarioConfig::preset("family_k2");
        cfg.run.t_max = t_max;
        cfg.run.window = [0.3 * t_max, 0.9 * t_max];
        cfg.grid.h = h;
        cfg.run.observers = observers;
        cfg.metric.eps = eps;
        cfg.synthesis.damping = damping;
        cfg.parallel = parallel;
        let back = ScenarioConfig::from_toml(&cfg.to_toml()).unwrap();
        prop_assert_eq!(back, cfg);
    }

    #[test]
    fn power_law_exponent_is_recovered(p in -6.0f64..-2.0, shift in 0.0f64..30.0) {
        let times: Vec<f64> = (100..3000).map(|k| 0.5 * k as f64).collect();
        let u: Vec<f64> = times.iter().map(|t| (t + shift + 1.0).powf(p)).collect();
        let du: Vec<f64> = times.iter().map(|t| p * (t + shift + 1.0).powf(p - 1.0)).collect();
        let series = TimeSeries {
            observer_r: 10.0,
            energy_trace: vec![0.0; times.len()],
            times,
            u_values: u,
            dtu_values: du,
            grid_meta: GridMeta { h: 0.05, dt: 0.5, cfl: 0.5, order: 4, nodes: 0, r_max: 0.0 },
        };
        let fit = fit_tail(&series, Observable::U, (400.0, 1400.0)).unwrap();
        prop_assert!((fit.p_infinity - p).abs() < 0.05, "{} vs {}", fit.p_infinity, p);
        let fit = fit_tail(&series, Observable::DtU, (400.0, 1400.0)).unwrap();
        prop_assert!((fit.p_infinity - (p - 1.0)).abs() < 0.05);
    }

    #[test]
    fn poisson_inverse_solves_laplace(width in 0.3f64..3.0, r in 0.05f64..12.0) {
        let g = RadialProfile::new(move |x| (-(x * x).scale(1.0 / (width * width))).exp(), SymbolClass::L1S(-20.0));
        let v = radial_poisson_inverse(&g, 3).unwrap();
        let j = v.jet(r);
        let lap = j.deriv(2) + 2.0 * j.deriv(1) / r;
        prop_assert!((lap + g.eval(r)).abs() < 1e-9, "r = {}: {}", r, lap + g.eval(r));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(24))]

    #[test]
    fn resolvent_is_linear(
        ell in 0u32..=2,
        re in -3.0f64..3.0,
        im in 0.0f64..0.5,
        c1 in 3.0f64..8.0,
        c2 in 3.0f64..8.0,
        a in -2.0f64..2.0,
        b in -2.0f64..2.0,
    ) {
        let grid = resolvent_grid();
        let solver = ResolventSolver::new(family_k2(ell), &grid).unwrap();
        let g1 = samples(&windowed_gaussian(c1, 0.6, 1.0, 10.0), &grid);
        let g2 = samples(&windowed_gaussian(c2, 0.9, 1.0, 10.0), &grid);
        let mix: Vec<f64> = g1.iter().zip(&g2).map(|(x, y)| a * x + b * y).collect();
        let tau = C::new(re, -im);
        let out = solver.solve_psi(tau, &[Source::Sampled(g1), Source::Sampled(g2), Source::Sampled(mix)]).unwrap();
        let diff: Vec<C> = (0..grid.len()).map(|i| out[2][i] - out[0][i] * a - out[1][i] * b).collect();
        let scale = sup_norm(&out[0]) * a.abs() + sup_norm(&out[1]) * b.abs() + 1e-300;
        prop_assert!(sup_norm(&diff) <= 1e-10 * scale);
    }

    #[test]
    fn resolvent_commutes_with_conjugation(ell in 0u32..=2, re in 0.05f64..3.0, im in 0.0f64..0.5, c in 3.0f64..8.0) {
        let grid = resolvent_grid();
        let solver = ResolventSolver::new(family_k2(ell), &grid).unwrap();
        let g = [Source::Sampled(samples(&windowed_gaussian(c, 0.7, 1.0, 10.0), &grid))];
        let plus = solver.solve_psi(C::new(re, -im), &g).unwrap().remove(0);
        let minus = solver.solve_psi(C::new(-re, -im), &g).unwrap().remove(0);
        let diff: Vec<C> = plus.iter().zip(&minus).map(|(p, m)| p.conj() - m).collect();
        prop_assert!(sup_norm(&diff) <= 1e-10 * sup_norm(&plus));
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(6))]

    #[test]
    fn evolution_is_linear(alpha in -2.0f64..2.0, beta in -2.0f64..2.0, c in 5.0f64..9.0) {
        let rop = family_k2(0);
        let d1 = CauchyData::pulse(0, 6.0, 10.0, true);
        let d2 = CauchyData::new(0, windowed_gaussian(c, 0.8, 3.0, 11.0), RadialProfile::zero(), (3.0, 11.0));
        let mix = d1.combine(alpha, &d2, beta);
        let p = EvolveParams { h: 0.1, r_max: Some(40.0), ..Default::default() };
        let run = |d: &CauchyData| evolve(rop, d, 15.0, &[4.0], &p).unwrap().remove(0);
        let (s1, s2, sm) = (run(&d1), run(&d2), run(&mix));
        let scale = s1.u_values.iter().chain(&s2.u_values).fold(0.0f64, |m, v| m.max(v.abs())) * (alpha.abs() + beta.abs());
        for k in 0..sm.times.len() {
            let want = alpha * s1.u_values[k] + beta * s2.u_values[k];
            prop_assert!((sm.u_values[k] - want).abs() <= 1e-11 * scale + 1e-300);
        }
    }
}
