//! The continuous constant-flux power law `c_s x^(-(3+gamma)/2)`: prefactor from `G`, flux
//! checks, and a kernel outside the existence regime.
//!
//! ```text
//! cargo run --release --example power_law_oracle
//! ```

use coagulab::continuum::{
    flux_continuous, g_integral, powerlaw_histogram, powerlaw_solution, verify_constant_flux,
    Measure,
};
use coagulab::kernels::KernelSpec;
use coagulab::Error;

fn main() -> coagulab::Result<()> {
    let quad_tol = 1e-8;
    for kernel in [KernelSpec::constant(1.0)?, KernelSpec::brownian(), KernelSpec::product()] {
        let p = powerlaw_solution(&kernel, 1.0, quad_tol)?;
        println!(
            "{:<10} G = {:.9}  c_s = {:.6}  exponent {:.3}",
            kernel.name(),
            p.g_value,
            p.prefactor,
            p.exponent
        );
        for x in [1.0, 10.0, 100.0] {
            let j = flux_continuous(Measure::PowerLaw(&p), &kernel, x, quad_tol)?;
            println!("    J({x:>5}) = {j:.8}");
        }
    }

    // Binned copies of the power law. The Brownian flux draws on very small partners, so the
    // part lost below the lower edge of the support only fades like (x_min / x)^(1/6).
    let kernel = KernelSpec::brownian();
    let p = powerlaw_solution(&kernel, 1.0, quad_tol)?;
    println!();
    for x_min in [1e-4, 1e-8, 1e-14] {
        let hist = powerlaw_histogram(&p, x_min, 1.0 / x_min, 8)?;
        let report = verify_constant_flux(&hist, &kernel, &[0.1, 1.0, 10.0], 0.05)?;
        println!(
            "binned on [{x_min:.0e}, {:.0e}]: mean flux {:.4}, spread {:.3}",
            1.0 / x_min,
            report.mean,
            report.max_deviation
        );
    }

    let fm = KernelSpec::free_molecular();
    println!(
        "\nfree-molecular G: {:?}",
        g_integral(&fm, fm.envelope.tail_exponent(), quad_tol)?
    );
    match powerlaw_solution(&fm, 1.0, quad_tol) {
        Err(e @ Error::Regime { .. }) => println!("power law refused: {e}"),
        other => println!("unexpected: {other:?}"),
    }
    Ok(())
}
