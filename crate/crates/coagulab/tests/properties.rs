//! Property tests over randomly drawn kernels, states and parameters.

use std::ops::ControlFlow;

use coagulab::continuum::{
    flux_continuous, g_integral, powerlaw_solution, GValue, Measure,
};
use coagulab::diagnostics::{flux_profile, partial_fluxes};
use coagulab::discrete::{SourceSpec, TruncatedSystem};
use coagulab::kernels::{classify_regime, KernelSpec, Regime};
use coagulab::ode::StepControl;
use coagulab::sweep::{classify_from_rows, Classification, SweepRow, Thresholds};
use proptest::prelude::*;

fn builtin(index: usize) -> KernelSpec {
    match index % 5 {
        0 => KernelSpec::constant(1.0).unwrap(),
        1 => KernelSpec::additive(),
        2 => KernelSpec::product(),
        3 => KernelSpec::brownian(),
        _ => KernelSpec::free_molecular(),
    }
}

fn any_kernel() -> impl Strategy<Value = KernelSpec> {
    prop_oneof![
        (0usize..5).prop_map(builtin),
        (-1.0f64..1.0, -1.0f64..1.0, 0.1f64..10.0)
            .prop_map(|(g, l, c)| KernelSpec::generalized_power(g, l, c).unwrap()),
    ]
}

/// Power kernels strictly inside the existence regime, `|gamma + 2 lambda| <= 0.8`.
fn existence_power() -> impl Strategy<Value = KernelSpec> {
    (-0.8f64..0.8, -0.4f64..0.4).prop_map(|(g, shift)| {
        let lambda = (shift - g) / 2.0;
        KernelSpec::generalized_power(g, lambda, 1.0).unwrap()
    })
}

fn system_and_state() -> impl Strategy<Value = (TruncatedSystem, Vec<f64>)> {
    (any_kernel(), 2usize..40).prop_flat_map(|(k, r)| {
        let source = (0.1f64..2.0, prop::collection::vec(0.0f64..2.0, 0..(r - 1).min(4)))
            .prop_map(|(s1, rest)| std::iter::once(s1).chain(rest).collect::<Vec<_>>());
        let state = prop::collection::vec(0.0f64..1.0, r);
        (Just(k), Just(r), source, state).prop_map(|(k, r, s, n)| {
            let sys = TruncatedSystem::new(k, SourceSpec::new(s).unwrap(), r).unwrap();
            (sys, n)
        })
    })
}

fn rel(a: f64, b: f64) -> f64 {
    (a - b).abs() / a.abs().max(b.abs()).max(f64::MIN_POSITIVE)
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(64))]

    #[test]
    fn kernels_are_symmetric(k in any_kernel(), x in 1e-3f64..1e3, y in 1e-3f64..1e3) {
        prop_assert_eq!(k.eval(x, y).unwrap().to_bits(), k.eval(y, x).unwrap().to_bits());
    }

    #[test]
    fn interpolation_reproduces_the_table(k in any_kernel(), eps in 0.01f64..0.49, a in 1usize..12, b in 1usize..12) {
        let table = k.discretize(12).unwrap();
        let tab = KernelSpec::tabulated(table.clone(), k.envelope);
        let smooth = tab.interpolate_discrete(eps).unwrap();
        prop_assert_eq!(smooth.eval(a as f64, b as f64).unwrap(), table.get(a, b));
    }

    #[test]
    fn rescaled_kernels_share_one_envelope_bound(k in (0usize..5).prop_map(builtin), scale in 1.0f64..64.0, i in 0usize..40, j in 0usize..40) {
        let table = k.discretize(256).unwrap();
        let tab = KernelSpec::tabulated(table, k.envelope);
        let kr = tab.rescaled(scale, 0.25).unwrap();
        let (x, y) = ((1.0 + 6.0 * i as f64) / scale, (1.0 + 6.0 * j as f64) / scale);
        let bound = tab.rescaled(1.0, 0.25).unwrap().envelope.c2;
        prop_assert!(kr.eval(x, y).unwrap() <= bound * k.envelope.weight(x, y) * (1.0 + 1e-12));
    }

    #[test]
    fn regime_ignores_which_exponent_is_named(g in -2.0f64..2.0, l in -2.0f64..2.0) {
        let l2 = -g - l;
        prop_assert!(((g + 2.0 * l2).abs() - (g + 2.0 * l).abs()).abs() < 1e-12);
        prop_assert_eq!(classify_regime(g, l), classify_regime(g, l2));
    }

    #[test]
    fn number_and_mass_budgets_close((sys, n) in system_and_state()) {
        let rhs = sys.rhs(&n).unwrap();
        let r = sys.r_star();
        let mut all_pairs = 0.0;
        for a in 1..=r {
            for b in 1..=r {
                all_pairs += sys.table().get(a, b) * n[a - 1] * n[b - 1];
            }
        }
        let discarded = sys.discarded_merge_rate(&n).unwrap();
        let lhs = rhs.iter().sum::<f64>() + 0.5 * all_pairs + discarded;
        let scale = 0.5 * all_pairs + sys.source().total() + discarded;
        prop_assert!((lhs - sys.source().total()).abs() <= 1e-12 * scale.max(1e-300));

        let budget = sys.mass_budget(&n).unwrap();
        let mass_scale = budget.outflux + budget.injection_rate
            + rhs.iter().enumerate().map(|(i, v)| (i + 1) as f64 * v.abs()).sum::<f64>();
        let imbalance = budget.interior_mass_derivative + budget.outflux - budget.injection_rate;
        prop_assert!(imbalance.abs() <= 1e-12 * mass_scale.max(1e-300));
    }

    #[test]
    fn rhs_is_quadratic_without_source((sys, n) in system_and_state(), c in 0.01f64..100.0) {
        let sys = sys.with_source(SourceSpec::zero()).unwrap();
        let base = sys.rhs(&n).unwrap();
        let scaled_n: Vec<f64> = n.iter().map(|v| c * v).collect();
        let scaled = sys.rhs(&scaled_n).unwrap();
        let peak = base.iter().fold(0.0f64, |m, v| m.max(v.abs()));
        for (b, s) in base.iter().zip(scaled.iter()) {
            prop_assert!((s - c * c * b).abs() <= 1e-12 * c * c * peak.max(1e-300));
        }
    }

    #[test]
    fn flux_differences_balance_the_equation((sys, n) in system_and_state()) {
        let j = flux_profile(&sys, &n).unwrap().j;
        let rhs = sys.rhs(&n).unwrap();
        let peak = j.iter().fold(0.0f64, |m, v| m.max(v.abs())).max(sys.source().mass_rate());
        for a in 1..sys.r_star() {
            let expected = a as f64 * (sys.source().rate(a) - rhs[a - 1]);
            prop_assert!((j[a] - j[a - 1] - expected).abs() <= 1e-12 * peak.max(1e-300));
        }
    }

    #[test]
    fn partial_fluxes_add_up_to_the_flux((sys, n) in system_and_state(), frac in 0.0f64..1.0, delta in 0.01f64..0.99) {
        let r = sys.r_star();
        let z = 1 + ((r - 2) as f64 * frac) as usize;
        let j = flux_profile(&sys, &n).unwrap().j;
        let p = partial_fluxes(&sys, &n, z as f64, delta).unwrap();
        prop_assert!(rel(p.total(), j[z]) <= 1e-13 || j[z] == p.total());
    }
}

proptest! {
    #![proptest_config(ProptestConfig::with_cases(12))]

    #[test]
    fn trajectories_stay_in_the_invariant_region(k in (0usize..5).prop_map(builtin), r in 4usize..24, n0 in prop::collection::vec(0.0f64..0.5, 24), s1 in 0.1f64..2.0) {
        let sys = TruncatedSystem::new(k, SourceSpec::monomer(s1).unwrap(), r).unwrap();
        let n0 = &n0[..r];
        let ceiling = n0.iter().sum::<f64>().max(sys.invariant_ceiling());
        let mut worst = 0.0f64;
        let mut most_negative = 0.0f64;
        sys.evolve_observed(n0, 5.0, &StepControl::default(), |_, n, _| {
            worst = worst.max(n.iter().sum::<f64>());
            let peak = n.iter().fold(0.0f64, |m, v| m.max(v.abs()));
            most_negative = n.iter().fold(most_negative, |m, v| m.min(v / peak.max(1e-300)));
            ControlFlow::Continue(())
        }).unwrap();
        prop_assert!(worst <= ceiling * (1.0 + 1e-7), "{} > {}", worst, ceiling);
        prop_assert!(most_negative >= -1e-14);
    }

    #[test]
    fn halving_quad_tol_moves_g_within_tolerance(k in existence_power(), tol_exp in 5i32..9) {
        let tol = 10f64.powi(-tol_exp);
        let a = k.envelope.tail_exponent();
        let coarse = g_integral(&k, a, tol).unwrap().finite().unwrap();
        let fine = g_integral(&k, a, 0.5 * tol).unwrap().finite().unwrap();
        prop_assert!(rel(coarse, fine) <= 2.0 * tol, "{} vs {}", coarse, fine);
    }

    #[test]
    fn power_law_flux_is_scale_free(k in existence_power(), x0 in 0.1f64..10.0) {
        let tol = 1e-8;
        let p = powerlaw_solution(&k, 1.0, tol).unwrap();
        let fluxes: Vec<f64> = [1.0, 2.0, 5.0, 10.0].iter()
            .map(|m| flux_continuous(Measure::PowerLaw(&p), &k, x0 * m, tol).unwrap())
            .collect();
        let hi = fluxes.iter().copied().fold(f64::MIN, f64::max);
        let lo = fluxes.iter().copied().fold(f64::MAX, f64::min);
        prop_assert!(hi / lo - 1.0 <= 3.0 * tol, "{:?}", fluxes);
    }

    #[test]
    fn prefactor_follows_the_square_root_law(k in existence_power(), j0 in 0.01f64..100.0) {
        let tol = 1e-8;
        let unit = powerlaw_solution(&k, 1.0, tol).unwrap().prefactor;
        let values: Vec<f64> = [0.5 * j0, j0, 2.0 * j0].iter()
            .map(|j| powerlaw_solution(&k, *j, tol).unwrap().prefactor)
            .collect();
        prop_assert!(values[0] < values[1] && values[1] < values[2]);
        prop_assert!(rel(values[1], unit * j0.sqrt()) <= 1e-12);
    }
}

fn rows_with_ratios(ratios: &[f64]) -> Vec<SweepRow> {
    let mut m = 1.0;
    let mut rows = Vec::new();
    for (i, r) in std::iter::once(&1.0).chain(ratios).enumerate() {
        m *= r;
        rows.push(SweepRow {
            r_star: 128 << i,
            converged: true,
            residual: 1e-10,
            moment_def: m,
            moment_critical: m,
            slope: None,
            slope_stderr: None,
            flux_plateau: 1.0,
            flux_dev: 0.0,
        });
    }
    rows
}

proptest! {
    #[test]
    fn classifier_follows_the_ratio_bands(ratios in prop::collection::vec(1.0f64..1.2, 3..6)) {
        let t = Thresholds::default();
        let got = classify_from_rows(&rows_with_ratios(&ratios), &t).unwrap();
        let last = &ratios[ratios.len() - t.doublings_required..];
        let expected = if last.iter().all(|r| *r >= t.ratio_threshold) {
            Classification::NonExistence
        } else if last.iter().all(|r| *r <= t.saturation_bound()) {
            Classification::Existence
        } else {
            Classification::Inconclusive
        };
        prop_assert_eq!(got, expected);
    }
}

#[test]
fn g_diverges_exactly_outside_the_existence_regime() {
    for i in 0..5 {
        let k = builtin(i);
        let g = g_integral(&k, k.envelope.tail_exponent(), 1e-8).unwrap();
        let divergent = matches!(g, GValue::Divergent { .. });
        assert_eq!(divergent, k.regime() == Regime::NonExistence, "{}: {g:?}", k.name());
    }
}
