//! End-to-end acceptance checks. Each check prints one `PASS`/`FAIL` line with the measured
//! quantities; the test fails if any check fails.
//!
//! ```text
//! cargo test --release --test acceptance -- --nocapture
//! ```

use std::collections::BTreeMap;
use std::path::Path;

use coagulab::cli;
use coagulab::continuum::{
    flux_continuous, g_integral, powerlaw_solution, verify_constant_flux, GValue, Measure,
    MeasureHistogram,
};
use coagulab::diagnostics::{
    collapse_deviation, fit_exponent, flux_profile, moment, partial_fluxes, rescaled_profile,
    GeometricBins,
};
use coagulab::discrete::{SourceSpec, StateVector, TruncatedSystem};
use coagulab::kernels::{classify_regime, KernelSpec};
use coagulab::steady::{solve_fixed_point, solve_time_marching, SteadyResult, DEFAULT_DAMPING};
use coagulab::sweep::{run_sweep, Classification, SweepConfig};

const SOLVE_TOL: f64 = 1e-10;

const CLOSED_FORM_REL: f64 = 1e-3;
const TOTAL_NUMBER_REL: f64 = 0.02;
const PLATEAU_DEV: f64 = 0.05;
const SLOPE_TOL: f64 = 0.1;
const SCALING_REL: f64 = 1e-6;
const COMPONENT_FLOOR: f64 = 1e-12;
const CRITICAL_GROWTH: f64 = 0.10;
const SUBCRITICAL_CHANGE: f64 = 0.02;
const G_ABS: f64 = 1e-6;
const POWERLAW_FLUX_REL: f64 = 0.01;
const ORACLE_QUAD_TOL: f64 = 1e-8;
const OFF_DIAGONAL_SHARE: f64 = 0.25;
const COLLAPSE_LOG_DEV: f64 = 0.1;
const HISTOGRAM_FLUX_REL: f64 = 0.2;
const CROSS_METHOD_REL: f64 = 1e-6;

struct Verdict {
    passed: bool,
    detail: String,
}

fn verdict(passed: bool, detail: String) -> Verdict {
    Verdict { passed, detail }
}

fn monomer() -> SourceSpec {
    SourceSpec::monomer(1.0).unwrap()
}

fn system(kernel: &KernelSpec, source: SourceSpec, r_star: usize) -> TruncatedSystem {
    TruncatedSystem::new(kernel.clone(), source, r_star).unwrap()
}

fn steady(system: &TruncatedSystem) -> SteadyResult {
    let result = solve_fixed_point(system, SOLVE_TOL, DEFAULT_DAMPING).unwrap();
    assert!(
        result.converged,
        "{} at R* = {} did not converge (residual {:e})",
        system.kernel().name(),
        system.r_star(),
        result.residual_inf
    );
    result
}

/// Brownian stationary states with a monomer source, solved once per cutoff.
#[derive(Default)]
struct BrownianStates(BTreeMap<usize, (TruncatedSystem, StateVector)>);

impl BrownianStates {
    fn get(&mut self, r_star: usize) -> &(TruncatedSystem, StateVector) {
        self.0.entry(r_star).or_insert_with(|| {
            let sys = system(&KernelSpec::brownian(), monomer(), r_star);
            let state = steady(&sys).state;
            (sys, state)
        })
    }
}

/// Largest relative componentwise difference over components above the floor in either state.
fn max_rel_diff(a: &[f64], b: &[f64]) -> f64 {
    a.iter()
        .zip(b)
        .filter(|(x, y)| x.abs() >= COMPONENT_FLOOR || y.abs() >= COMPONENT_FLOOR)
        .map(|(x, y)| (x - y).abs() / x.abs().max(y.abs()))
        .fold(0.0, f64::max)
}

fn existence_kernels() -> Vec<KernelSpec> {
    vec![KernelSpec::constant(1.0).unwrap(), KernelSpec::brownian(), KernelSpec::product()]
}

fn constant_closed_form() -> Verdict {
    let sys = system(&KernelSpec::constant(1.0).unwrap(), monomer(), 1024);
    let n = steady(&sys).state;
    let root2 = 2f64.sqrt();
    let exact = [root2 / 2.0, root2 / 8.0, root2 / 16.0];
    let errs: Vec<f64> = exact
        .iter()
        .enumerate()
        .map(|(i, e)| (n[i] - e).abs() / e)
        .collect();
    let total_err = (n.total() - root2).abs() / root2;
    let worst = errs.iter().copied().fold(0.0, f64::max);
    verdict(
        worst <= CLOSED_FORM_REL && total_err <= TOTAL_NUMBER_REL,
        format!(
            "n1..n3 = {:.6}, {:.6}, {:.6} (worst rel err {worst:.2e}); sum n = {:.6} (rel err {total_err:.2e})",
            n[0], n[1], n[2], n.total()
        ),
    )
}

fn flux_plateau() -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for k in existence_kernels() {
        let sys = system(&k, monomer(), 1024);
        let n = steady(&sys).state;
        let profile = flux_profile(&sys, &n).unwrap();
        assert_eq!(profile.window, (8, 512));
        passed &= profile.plateau_deviation <= PLATEAU_DEV;
        parts.push(format!("{} {:.2e}", k.name(), profile.plateau_deviation));
    }
    verdict(passed, format!("max |J - J0|/J0 on [8, 512]: {}", parts.join(", ")))
}

fn exponent_law(brownian: &mut BrownianStates) -> Verdict {
    let r_star = 2048;
    let mut passed = true;
    let mut parts = Vec::new();
    for k in existence_kernels() {
        let fit = if k.name() == "brownian" {
            fit_exponent(&brownian.get(r_star).1, 16.0, r_star as f64 / 4.0).unwrap()
        } else {
            let n = steady(&system(&k, monomer(), r_star)).state;
            fit_exponent(&n, 16.0, r_star as f64 / 4.0).unwrap()
        };
        let expected = -k.envelope.tail_exponent();
        passed &= (fit.slope - expected).abs() <= SLOPE_TOL;
        parts.push(format!("{} {:.4} (want {expected})", k.name(), fit.slope));
    }
    verdict(passed, format!("slopes on [16, 512]: {}", parts.join(", ")))
}

fn scaling_symmetry() -> Verdict {
    let k = KernelSpec::brownian();
    let base = steady(&system(&k, monomer(), 512)).state;
    let four = steady(&system(&k, SourceSpec::monomer(4.0).unwrap(), 512)).state;
    let dev = max_rel_diff(&four, &base.scaled(2.0));
    verdict(
        dev <= SCALING_REL,
        format!("max rel diff solve(4s) vs 2 solve(s): {dev:.2e}"),
    )
}

fn regime_dichotomy() -> Verdict {
    let kernels = [
        KernelSpec::constant(1.0).unwrap(),
        KernelSpec::brownian(),
        KernelSpec::product(),
        KernelSpec::free_molecular(),
        KernelSpec::additive(),
    ];
    let mut passed = true;
    let mut parts = Vec::new();
    for k in kernels {
        let config = SweepConfig::new(k.clone(), monomer(), vec![128, 256, 512, 1024]);
        let report = run_sweep(&config).unwrap();
        let analytic = classify_regime(k.envelope.gamma, k.envelope.lambda);
        let ok = report.classification.matches(analytic)
            && report.classification != Classification::Inconclusive;
        passed &= ok;
        let ratios: Vec<String> = report.ratios().iter().map(|r| format!("{r:.4}")).collect();
        parts.push(format!(
            "{} {} vs {} [{}]{}",
            k.name(),
            report.classification,
            analytic,
            ratios.join(" "),
            if ok { "" } else { " MISMATCH" }
        ));
    }
    verdict(passed, parts.join("; "))
}

fn critical_moment(brownian: &mut BrownianStates) -> Verdict {
    let cutoffs = [512, 1024, 2048];
    let critical: Vec<f64> = cutoffs
        .iter()
        .map(|&r| moment(&brownian.get(r).1, 0.5))
        .collect();
    let sub: Vec<f64> = cutoffs
        .iter()
        .map(|&r| moment(&brownian.get(r).1, 0.3))
        .collect();
    let growth: Vec<f64> = critical.windows(2).map(|w| w[1] / w[0] - 1.0).collect();
    let top_change = (sub[2] / sub[1] - 1.0).abs();
    let passed = growth.iter().all(|g| *g >= CRITICAL_GROWTH) && top_change <= SUBCRITICAL_CHANGE;
    verdict(
        passed,
        format!(
            "sum a^1/2 n growth per doubling {:.2}%, {:.2}% (need >= {:.0}%); sum a^0.3 n top change {:.2}%",
            100.0 * growth[0],
            100.0 * growth[1],
            100.0 * CRITICAL_GROWTH,
            100.0 * top_change
        ),
    )
}

fn continuum_oracle() -> Verdict {
    let constant = KernelSpec::constant(1.0).unwrap();
    let g = g_integral(&constant, 1.5, ORACLE_QUAD_TOL).unwrap();
    let g_err = g.finite().map_or(f64::INFINITY, |v| (v - 2.0 * std::f64::consts::PI).abs());
    let p = powerlaw_solution(&constant, 1.0, ORACLE_QUAD_TOL).unwrap();
    let fluxes: Vec<f64> = [1.0, 10.0, 100.0]
        .iter()
        .map(|&x| flux_continuous(Measure::PowerLaw(&p), &constant, x, ORACLE_QUAD_TOL).unwrap())
        .collect();
    let flux_dev = fluxes.iter().map(|j| (j - 1.0).abs()).fold(0.0, f64::max);
    let fm = KernelSpec::free_molecular();
    let fm_g = g_integral(&fm, fm.envelope.tail_exponent(), ORACLE_QUAD_TOL).unwrap();
    let divergent = matches!(fm_g, GValue::Divergent { .. });
    verdict(
        g_err <= G_ABS && flux_dev <= POWERLAW_FLUX_REL && divergent,
        format!(
            "|G - 2 pi| = {g_err:.2e}; power-law flux dev {flux_dev:.2e}; free-molecular divergent: {divergent}"
        ),
    )
}

fn flux_decomposition(brownian: &mut BrownianStates) -> Verdict {
    let r_star = 2048;
    let (sys, n) = brownian.get(r_star);
    let z = r_star as f64 / 4.0;
    let shares: Vec<f64> = [0.5, 0.2, 0.05]
        .iter()
        .map(|&d| partial_fluxes(sys, n, z, d).unwrap().off_diagonal_share())
        .collect();
    let decreasing = shares.windows(2).all(|w| w[1] < w[0]);
    verdict(
        decreasing && shares[2] <= OFF_DIAGONAL_SHARE,
        format!(
            "(J1+J3)/J at z = {z}: {:.3}, {:.3}, {:.3} for delta 0.5, 0.2, 0.05 (decreasing: {decreasing}, need last <= {OFF_DIAGONAL_SHARE})",
            shares[0], shares[1], shares[2]
        ),
    )
}

fn rescaling_collapse(brownian: &mut BrownianStates) -> Verdict {
    let r_star = 4096;
    let (sys, n) = brownian.get(r_star);
    let gamma = sys.kernel().envelope.gamma;
    let bins = GeometricBins::new(1.0 / 64.0, 64.0, 1).unwrap();
    let profiles: Vec<_> = [64.0, 128.0, 256.0]
        .iter()
        .map(|&r| rescaled_profile(n, r, gamma, &bins).unwrap())
        .collect();
    let spread = collapse_deviation(&profiles, 1.0, 4.0).unwrap();

    let r = 64.0;
    let fine = GeometricBins::new(0.5 / r, r_star as f64 / r, 4).unwrap();
    let measure = MeasureHistogram::try_from(&rescaled_profile(n, r, gamma, &fine).unwrap()).unwrap();
    let j0 = sys.source().mass_rate();
    let report = verify_constant_flux(&measure, sys.kernel(), &[1.0, 2.0, 4.0], HISTOGRAM_FLUX_REL).unwrap();
    let flux_dev = report
        .samples
        .iter()
        .map(|(_, j)| (j - j0).abs() / j0)
        .fold(0.0, f64::max);
    verdict(
        spread <= COLLAPSE_LOG_DEV && flux_dev <= HISTOGRAM_FLUX_REL,
        format!(
            "log spread on [1, 4] at R = 64, 128, 256 (R* = {r_star}): {spread:.3}; histogram flux at x = 1, 2, 4 within {:.1}% of J0",
            100.0 * flux_dev
        ),
    )
}

fn cross_method() -> Verdict {
    let mut passed = true;
    let mut parts = Vec::new();
    for k in existence_kernels() {
        let sys = system(&k, monomer(), 256);
        let fixed = steady(&sys);
        let marched = solve_time_marching(&sys, SOLVE_TOL, 1e7).unwrap();
        let dev = max_rel_diff(&fixed.state, &marched.state);
        passed &= marched.converged && dev <= CROSS_METHOD_REL;
        parts.push(format!("{} {dev:.2e}", k.name()));
    }
    verdict(passed, format!("max rel diff fixed point vs time marching: {}", parts.join(", ")))
}

fn run_cli(args: &[&str], out: &Path) {
    let mut argv = vec!["coagulab".to_string()];
    argv.extend(args.iter().map(|s| s.to_string()));
    argv.push("--out".into());
    argv.push(out.display().to_string());
    assert_eq!(cli::run(argv), 0, "{args:?}");
}

fn snapshot(dir: &Path) -> BTreeMap<String, Vec<u8>> {
    std::fs::read_dir(dir)
        .unwrap()
        .map(|e| {
            let e = e.unwrap();
            (e.file_name().to_string_lossy().into_owned(), std::fs::read(e.path()).unwrap())
        })
        .collect()
}

fn determinism() -> Verdict {
    let run_all = || {
        let dir = tempfile::tempdir().unwrap();
        let steady_dir = dir.path().join("steady");
        run_cli(&["steady", "--kernel", "brownian", "--rstar", "256"], &steady_dir);
        run_cli(&["steady", "--kernel", "constant", "--rstar", "128", "--method", "time-marching"], &dir.path().join("marching"));
        run_cli(&["sweep", "--kernel", "brownian", "--cutoffs", "64,128,256,512"], &dir.path().join("sweep"));
        run_cli(
            &["powerlaw", "--kernel", "brownian", "--collapse", &steady_dir.display().to_string()],
            &dir.path().join("powerlaw"),
        );
        ["steady", "marching", "sweep", "powerlaw"]
            .iter()
            .map(|d| (d.to_string(), snapshot(&dir.path().join(d))))
            .collect::<BTreeMap<_, _>>()
    };
    let first = run_all();
    let second = run_all();
    let files: usize = first.values().map(BTreeMap::len).sum();
    let identical = first == second && files > 0;
    verdict(identical, format!("{files} output files from 4 commands, bitwise identical: {identical}"))
}

#[test]
fn acceptance_criteria() {
    let mut brownian = BrownianStates::default();
    let checks: Vec<(&str, Verdict)> = vec![
        ("constant-kernel closed form", constant_closed_form()),
        ("flux plateau", flux_plateau()),
        ("exponent law", exponent_law(&mut brownian)),
        ("scaling symmetry", scaling_symmetry()),
        ("regime dichotomy", regime_dichotomy()),
        ("critical moment divergence", critical_moment(&mut brownian)),
        ("continuum oracle", continuum_oracle()),
        ("flux decomposition", flux_decomposition(&mut brownian)),
        ("rescaling collapse", rescaling_collapse(&mut brownian)),
        ("cross-method agreement", cross_method()),
        ("determinism", determinism()),
    ];
    let mut failed = Vec::new();
    for (i, (name, v)) in checks.iter().enumerate() {
        println!("[{}] {:>2} {name}: {}", if v.passed { "PASS" } else { "FAIL" }, i + 1, v.detail);
        if !v.passed {
            failed.push(format!("{} {name}", i + 1));
        }
    }
    assert!(failed.is_empty(), "failed: {}", failed.join(", "));
}
