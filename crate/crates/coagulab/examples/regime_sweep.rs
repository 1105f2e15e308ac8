//! Tracks the defining moments of stationary states as `R*` doubles and classifies whether
//! they settle or keep growing.
//!
//! ```text
//! cargo run --release --example regime_sweep -- [kernel]
//! ```

use coagulab::discrete::SourceSpec;
use coagulab::kernels::KernelSpec;
use coagulab::sweep::{run_sweep, SweepConfig};

fn main() -> coagulab::Result<()> {
    let name = std::env::args().nth(1).unwrap_or_else(|| "brownian".into());
    let kernel = KernelSpec::by_name(&name, None, None, None)?;
    let config = SweepConfig::new(kernel, SourceSpec::monomer(1.0)?, vec![64, 128, 256, 512]);
    let report = run_sweep(&config)?;

    println!("{:>6} {:>10} {:>14} {:>9} {:>10}", "R*", "residual", "moment", "slope", "flux dev");
    for row in &report.rows {
        let slope = row
            .slope
            .map_or_else(|| "-".to_string(), |s| format!("{s:.4}"));
        println!(
            "{:>6} {:>10.2e} {:>14.6} {:>9} {:>10.2e}",
            row.r_star, row.residual, row.moment_def, slope, row.flux_dev
        );
    }
    let ratios: Vec<String> = report.ratios().iter().map(|r| format!("{r:.4}")).collect();
    println!("moment ratios per doubling: {}", ratios.join(", "));
    println!(
        "classified {} (analytic: {}{})",
        report.classification,
        report.analytic_prediction,
        if report.borderline { ", borderline" } else { "" }
    );
    Ok(())
}
