//! Built-in kernels, their envelope exponents and the regime each one falls in.
//!
//! ```text
//! cargo run --release --example kernels
//! ```

use coagulab::kernels::{classify_regime, KernelSpec};

fn main() -> coagulab::Result<()> {
    let kernels = [
        KernelSpec::constant(1.0)?,
        KernelSpec::brownian(),
        KernelSpec::product(),
        KernelSpec::additive(),
        KernelSpec::free_molecular(),
        KernelSpec::generalized_power(-0.5, 0.6, 1.0)?,
    ];
    println!(
        "{:<18} {:>7} {:>7} {:>9} {:>8}  {:<15} {:>10}",
        "kernel", "gamma", "lambda", "|g+2l|", "tail", "regime", "K(1,100)"
    );
    for k in &kernels {
        let env = k.envelope;
        println!(
            "{:<18} {:>7.3} {:>7.3} {:>9.3} {:>8.3}  {:<15} {:>10.4}",
            k.name(),
            env.gamma,
            env.lambda,
            env.criticality(),
            env.tail_exponent(),
            k.regime().to_string(),
            k.eval(1.0, 100.0)?
        );
    }

    // Swapping which exponent is called gamma + lambda leaves the regime alone.
    let (g, l) = (0.2, 0.5);
    assert_eq!(classify_regime(g, l), classify_regime(g, -g - l));

    // A discretized kernel is the continuous one sampled on integers.
    let table = KernelSpec::brownian().discretize(8)?;
    println!("\nBrownian table, first row:");
    for b in 1..=8 {
        print!(" {:.4}", table.get(1, b));
    }
    println!();

    // Interpolating a table back to a continuous kernel reproduces it on the grid.
    let smooth = KernelSpec::tabulated(table.clone(), KernelSpec::brownian().envelope)
        .interpolate_discrete(0.25)?;
    println!(
        "interpolated K(3,5) = {:.6}, table K(3,5) = {:.6}",
        smooth.eval(3.0, 5.0)?,
        table.get(3, 5)
    );
    Ok(())
}
