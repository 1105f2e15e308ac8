//! Rescales one stationary state at several reference sizes `R` and compares the profiles
//! with each other and with the continuous power law.
//!
//! ```text
//! cargo run --release --example rescaling_collapse -- [R*]
//! ```

use coagulab::continuum::{powerlaw_solution, verify_constant_flux, MeasureHistogram};
use coagulab::diagnostics::{collapse_deviation, flux_profile, rescaled_profile, GeometricBins};
use coagulab::discrete::{SourceSpec, TruncatedSystem};
use coagulab::kernels::KernelSpec;
use coagulab::steady::{solve_fixed_point, DEFAULT_DAMPING, DEFAULT_TOL};

fn main() -> coagulab::Result<()> {
    let r_star: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(2048);
    let kernel = KernelSpec::brownian();
    let gamma = kernel.envelope.gamma;
    let system = TruncatedSystem::new(kernel.clone(), SourceSpec::monomer(1.0)?, r_star)?;
    let steady = solve_fixed_point(&system, DEFAULT_TOL, DEFAULT_DAMPING)?;
    let j = flux_profile(&system, &steady.state)?.plateau_value;
    let power_law = powerlaw_solution(&kernel, j, 1e-8)?;

    let bins = GeometricBins::new(1.0 / 16.0, 16.0, 1)?;
    let refs: Vec<usize> = [64, 32, 16].iter().map(|d| r_star / d).collect();
    let profiles = refs
        .iter()
        .map(|&r| rescaled_profile(&steady.state, r as f64, gamma, &bins))
        .collect::<coagulab::Result<Vec<_>>>()?;

    print!("{:>9} {:>12}", "x", "power law");
    for r in &refs {
        print!(" {:>12}", format!("R = {r}"));
    }
    println!();
    for (i, x) in profiles[0].centers().iter().enumerate() {
        print!("{x:>9.4} {:>12.5}", power_law.density(*x));
        for p in &profiles {
            match p.densities()[i] {
                Some(d) => print!(" {d:>12.5}"),
                None => print!(" {:>12}", "-"),
            }
        }
        println!();
    }
    println!(
        "\nlog spread between profiles on [1, 4]: {:.3}",
        collapse_deviation(&profiles, 1.0, 4.0)?
    );

    let finest = rescaled_profile(&steady.state, refs[0] as f64, gamma, &GeometricBins::new(1.0 / 64.0, 16.0, 4)?)?;
    let measure = MeasureHistogram::try_from(&finest)?;
    let report = verify_constant_flux(&measure, &kernel, &[0.5, 1.0, 2.0], 0.2)?;
    for (x, jx) in &report.samples {
        println!("rescaled flux at x = {x}: {:.4} (J = {j:.4})", jx);
    }
    Ok(())
}
