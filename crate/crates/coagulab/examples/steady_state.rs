//! Stationary state of the truncated system with a monomer source, computed both by the
//! damped fixed point and by time marching.
//!
//! ```text
//! cargo run --release --example steady_state -- [R*]
//! ```

use coagulab::discrete::{SourceSpec, TruncatedSystem};
use coagulab::kernels::KernelSpec;
use coagulab::steady::{solve_fixed_point, solve_time_marching, DEFAULT_DAMPING, DEFAULT_TOL};

fn main() -> coagulab::Result<()> {
    let r_star = std::env::args()
        .nth(1)
        .and_then(|s| s.parse().ok())
        .unwrap_or(256);
    let system = TruncatedSystem::new(KernelSpec::constant(1.0)?, SourceSpec::monomer(1.0)?, r_star)?;

    let fixed = solve_fixed_point(&system, DEFAULT_TOL, DEFAULT_DAMPING)?;
    println!(
        "fixed point: {} sweeps, residual {:.2e}, converged {}",
        fixed.iterations, fixed.residual_inf, fixed.converged
    );
    let marched = solve_time_marching(&system, DEFAULT_TOL, 1e6)?;
    println!(
        "time marching: {} steps to t = {:.1}, residual {:.2e}",
        marched.iterations, marched.time, marched.residual_inf
    );

    // For K = 1 and s = delta_1 the untruncated stationary state is
    // n_a = sqrt(2) C(2a, a) / ((2a - 1) 4^a).
    let mut exact = 0.5 * 2f64.sqrt();
    println!("\n{:>4} {:>14} {:>14} {:>14}", "a", "fixed point", "marching", "exact");
    for a in 1..=8 {
        println!(
            "{a:>4} {:>14.10} {:>14.10} {:>14.10}",
            fixed.state.at(a),
            marched.state.at(a),
            exact
        );
        exact *= (2.0 * a as f64 - 1.0) / (2.0 * a as f64 + 2.0);
    }
    println!(
        "\ntotal number {:.6} (sqrt 2 = {:.6} without truncation)",
        fixed.state.total(),
        2f64.sqrt()
    );

    let budget = system.mass_budget(&fixed.state)?;
    println!(
        "mass injected {:.6}, carried past R* {:.6}",
        budget.injection_rate, budget.outflux
    );
    Ok(())
}
