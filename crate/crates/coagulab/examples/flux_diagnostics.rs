//! Mass flux through sizes, the split of the flux by pair asymmetry, and the tail exponent of
//! a Brownian stationary state.
//!
//! ```text
//! cargo run --release --example flux_diagnostics -- [R*]
//! ```

use coagulab::diagnostics::{fit_exponent, flux_profile, partial_fluxes, tail_band_average};
use coagulab::discrete::{SourceSpec, TruncatedSystem};
use coagulab::kernels::KernelSpec;
use coagulab::steady::{solve_fixed_point, DEFAULT_DAMPING, DEFAULT_TOL};

fn main() -> coagulab::Result<()> {
    let r_star: usize = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(1024);
    let kernel = KernelSpec::brownian();
    let system = TruncatedSystem::new(kernel.clone(), SourceSpec::monomer(1.0)?, r_star)?;
    let steady = solve_fixed_point(&system, DEFAULT_TOL, DEFAULT_DAMPING)?;
    let n = &steady.state;

    let flux = flux_profile(&system, n)?;
    println!(
        "flux plateau {:.6} on [{}, {}], max deviation {:.2e}",
        flux.plateau_value, flux.window.0, flux.window.1, flux.plateau_deviation
    );
    for a in [1usize, 4, 16, 64, r_star / 2, r_star - 1] {
        println!("  J_{a:<5} = {:.6}", flux.j[a]);
    }

    let fit = fit_exponent(n, 16.0, r_star as f64 / 4.0)?;
    println!(
        "\ntail slope {:.4} +- {:.4} (power law predicts {:.4})",
        fit.slope,
        fit.stderr,
        -kernel.envelope.tail_exponent()
    );
    let j = flux.plateau_value;
    for z in [16.0, 64.0, r_star as f64 / 4.0] {
        let scaled = tail_band_average(n, z)? * z.powf(kernel.envelope.tail_exponent()) / j.sqrt();
        println!("  band average at z = {z:>6}: scaled {scaled:.4}");
    }

    let z = r_star as f64 / 4.0;
    println!("\nflux through z = {z} by pair asymmetry:");
    for delta in [0.5, 0.2, 0.05] {
        let p = partial_fluxes(&system, n, z, delta)?;
        println!(
            "  delta {delta:<5} J1 {:.4}  J2 {:.4}  J3 {:.4}  off-diagonal share {:.3}",
            p.j1,
            p.j2,
            p.j3,
            p.off_diagonal_share()
        );
    }
    Ok(())
}
