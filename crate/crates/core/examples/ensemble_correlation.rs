//! Monte Carlo distribution of |corr(x1, x2)| on the C1 = -0.5 diagram.
//!
//! Usage: `cargo run --release --example ensemble_correlation -- [runs] [seed]`

use equity_dynamics::montecarlo::{run_ensemble, EnsembleConfig};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut args = std::env::args().skip(1);
    let n_runs = args.next().map(|a| a.parse()).transpose()?.unwrap_or(1000);
    let seed = args.next().map(|a| a.parse()).transpose()?.unwrap_or(7);

    let config = EnsembleConfig {
        n_runs,
        seed,
        ..EnsembleConfig::default()
    };
    let result = run_ensemble(&config)?;

    let exploded = result.runs.iter().filter(|r| r.exploded).count();
    println!(
        "{} runs: {} with a correlation, {} excluded, {} exploded",
        result.runs.len(),
        result.completed(),
        result.excluded(),
        exploded
    );
    println!(
        "max |rho| = {:.3}, 99th percentile = {:.3}, median = {:.3}",
        result.max_abs_rho().unwrap_or(f64::NAN),
        result.quantile(0.99).unwrap_or(f64::NAN),
        result.quantile(0.5).unwrap_or(f64::NAN)
    );

    let peak = result
        .histogram(20)
        .iter()
        .map(|b| b.count)
        .max()
        .unwrap_or(1)
        .max(1);
    for b in result.histogram(20) {
        let bar = "#".repeat(b.count * 50 / peak);
        println!("[{:.2}, {:.2}) {:>4} {bar}", b.left, b.right, b.count);
    }
    Ok(())
}
