//! Per-run power-law tail exponents of price and volume, plus a check of the
//! estimator on synthetic Pareto samples.

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;

use equity_dynamics::montecarlo::{run_ensemble, EnsembleConfig};
use equity_dynamics::tailfit::{
    exponent_stats, fit_runs, fit_tail_with, Estimator, Side, Variable,
};

fn main() -> Result<(), Box<dyn std::error::Error>> {
    let mut rng = ChaCha8Rng::seed_from_u64(1);
    for lambda in [-1.5, -0.9, -0.5] {
        let xs: Vec<f64> = (0..100_000)
            .map(|_| (1.0 - rng.random::<f64>()).powf(1.0 / lambda))
            .collect();
        let ols = fit_tail_with(&xs, Side::Right, 0.1, Estimator::Ols)?;
        let hill = fit_tail_with(&xs, Side::Right, 0.1, Estimator::Hill)?;
        println!(
            "synthetic {lambda:>5}: ols {:.4} (r2 {:.4}), hill {:.4}",
            ols.lambda, ols.r_squared, hill.lambda
        );
    }

    let config = EnsembleConfig {
        seed: 7,
        keep_series: true,
        ..EnsembleConfig::default()
    };
    let ensemble = run_ensemble(&config)?;
    let (fits, skipped) = fit_runs(&ensemble.series, Side::Left, 0.1, Estimator::Ols);
    println!(
        "{} fits, {} series too short or flat",
        fits.len(),
        skipped.len()
    );

    for var in [Variable::X1, Variable::X2] {
        let lambdas: Vec<f64> = fits
            .iter()
            .filter(|f| f.variable == var)
            .map(|f| f.fit.lambda)
            .collect();
        let below = lambdas.iter().filter(|l| l.abs() < 2.0).count();
        let s = exponent_stats(&lambdas)?;
        println!(
            "{}: mean {:.3}, std {:.3}, skewness {:.3}, {below}/{} with |lambda| < 2",
            var.label(),
            s.mean,
            s.std,
            s.skewness,
            lambdas.len()
        );
    }
    Ok(())
}
