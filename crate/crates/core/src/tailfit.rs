//! Power-law tail exponents.
//!
//! The left tail follows `Pr(X < a) ~ |a|^lambda` and the right tail
//! `Pr(X > a) ~ |a|^lambda`, so a heavy tail has `lambda < 0`. Magnitudes
//! are `|x|` when every tail sample has the same sign; otherwise they are the
//! displacement from the sample minimum (left) or maximum (right) and the
//! extreme point itself is dropped. The right tail of `-X` is the left tail
//! of `X`.

use std::io::Write;

use serde::{Deserialize, Serialize};
use statrs::distribution::{ContinuousCDF, Normal};

use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::montecarlo::RunSeries;

pub const MIN_SAMPLES: usize = 100;
pub const MIN_TAIL_POINTS: usize = 10;
pub const MIN_EXPONENTS: usize = 30;
pub const DEFAULT_FIT_FRACTION: f64 = 0.1;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Side {
    Left,
    Right,
}

impl Side {
    pub fn label(self) -> &'static str {
        match self {
            Side::Left => "left",
            Side::Right => "right",
        }
    }
}

#[derive(Clone, Copy, Debug, Default, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Estimator {
    /// Least squares on the log-log empirical distribution.
    #[default]
    Ols,
    /// Hill-type maximum likelihood; `r_squared` is reported as 1.
    Hill,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct TailFit {
    pub lambda: f64,
    pub side: Side,
    pub fit_fraction: f64,
    pub r_squared: f64,
    pub n_points: usize,
    pub estimator: Estimator,
    /// Magnitudes were measured from the sample extreme.
    pub shifted: bool,
}

/// Tail points as `(log magnitude, log tail probability)`.
fn tail_points(
    samples: &[f64],
    side: Side,
    fit_fraction: f64,
) -> Result<(Vec<(f64, f64)>, bool, f64)> {
    let n = samples.len();
    if n < MIN_SAMPLES {
        return Err(Error::InsufficientSamples {
            need: MIN_SAMPLES,
            got: n,
        });
    }
    if !(fit_fraction > 0.0 && fit_fraction <= 0.5) {
        return Err(Error::InvalidParameter(format!(
            "fit_fraction must lie in (0, 0.5], got {fit_fraction}"
        )));
    }
    if samples.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidParameter("samples must be finite".into()));
    }
    let mut sorted = samples.to_vec();
    sorted.sort_by(f64::total_cmp);
    let m = ((fit_fraction * n as f64).ceil() as usize).max(MIN_TAIL_POINTS);
    // (value, tail probability), extreme first
    let tail: Vec<(f64, f64)> = match side {
        Side::Left => (0..m)
            .map(|i| (sorted[i], (i + 1) as f64 / n as f64))
            .collect(),
        Side::Right => (0..m)
            .map(|j| (sorted[n - 1 - j], (j + 1) as f64 / n as f64))
            .collect(),
    };
    let same_sign = tail.iter().all(|(x, _)| *x > 0.0) || tail.iter().all(|(x, _)| *x < 0.0);
    let extreme = tail[0].0;
    let points: Vec<(f64, f64)> = tail
        .iter()
        .map(|&(x, p)| {
            let mag = if same_sign {
                x.abs()
            } else {
                (x - extreme).abs()
            };
            (mag, p)
        })
        .filter(|(mag, _)| *mag > 0.0)
        .map(|(mag, p)| (mag.ln(), p.ln()))
        .collect();
    if points.len() < MIN_TAIL_POINTS {
        return Err(Error::InsufficientSamples {
            need: MIN_TAIL_POINTS,
            got: points.len(),
        });
    }
    Ok((points, !same_sign, m as f64 / n as f64))
}

/// Least-squares tail fit (the default estimator).
pub fn fit_tail(samples: &[f64], side: Side, fit_fraction: f64) -> Result<TailFit> {
    fit_tail_with(samples, side, fit_fraction, Estimator::Ols)
}

pub fn fit_tail_with(
    samples: &[f64],
    side: Side,
    fit_fraction: f64,
    estimator: Estimator,
) -> Result<TailFit> {
    let (points, shifted, _) = tail_points(samples, side, fit_fraction)?;
    let (lambda, r_squared) = match estimator {
        Estimator::Ols => ols(&points)?,
        Estimator::Hill => (hill(&points)?, 1.0),
    };
    Ok(TailFit {
        lambda,
        side,
        fit_fraction,
        r_squared,
        n_points: points.len(),
        estimator,
        shifted,
    })
}

fn ols(points: &[(f64, f64)]) -> Result<(f64, f64)> {
    let n = points.len() as f64;
    let mx = points.iter().map(|p| p.0).sum::<f64>() / n;
    let my = points.iter().map(|p| p.1).sum::<f64>() / n;
    let sxx: f64 = points.iter().map(|p| (p.0 - mx).powi(2)).sum();
    let sxy: f64 = points.iter().map(|p| (p.0 - mx) * (p.1 - my)).sum();
    let syy: f64 = points.iter().map(|p| (p.1 - my).powi(2)).sum();
    if sxx == 0.0 {
        return Err(Error::ZeroVariance);
    }
    let slope = sxy / sxx;
    let r2 = if syy == 0.0 {
        1.0
    } else {
        (slope * sxy / syy).clamp(0.0, 1.0)
    };
    Ok((slope, r2))
}

/// Hill estimate from `(ln magnitude, ln p)` ordered extreme first.
fn hill(points: &[(f64, f64)]) -> Result<f64> {
    let k = points.len() - 1;
    let (first, threshold) = (points[0].0, points[k].0);
    // magnitudes growing towards the extreme give a decaying tail (lambda < 0)
    let orient = if first >= threshold { 1.0 } else { -1.0 };
    let gamma = points[..k]
        .iter()
        .map(|p| orient * (p.0 - threshold))
        .sum::<f64>()
        / k as f64;
    if !(gamma > 0.0) {
        return Err(Error::ZeroVariance);
    }
    Ok(-orient / gamma)
}

/// Mean, spread and shape of an ensemble of exponents.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ExponentEnsembleStats {
    pub n: usize,
    pub mean: f64,
    /// Sample standard deviation (`n - 1` denominator).
    pub std: f64,
    /// Moment coefficient `g1`; 0 when `degenerate`.
    pub skewness: f64,
    /// `(standard normal quantile at (i - 0.5)/n, i-th smallest value)`.
    pub normal_probability_plot: Vec<(f64, f64)>,
    /// All values are equal.
    pub degenerate: bool,
}

pub fn exponent_stats(lambdas: &[f64]) -> Result<ExponentEnsembleStats> {
    let n = lambdas.len();
    if n < MIN_EXPONENTS {
        return Err(Error::InsufficientSamples {
            need: MIN_EXPONENTS,
            got: n,
        });
    }
    let nf = n as f64;
    let mean = lambdas.iter().sum::<f64>() / nf;
    let m2 = lambdas.iter().map(|x| (x - mean).powi(2)).sum::<f64>() / nf;
    let m3 = lambdas.iter().map(|x| (x - mean).powi(3)).sum::<f64>() / nf;
    let degenerate = lambdas.iter().all(|x| *x == lambdas[0]);
    let std = if degenerate {
        0.0
    } else {
        (m2 * nf / (nf - 1.0)).sqrt()
    };
    let skewness = if degenerate { 0.0 } else { m3 / m2.powf(1.5) };
    let mut sorted = lambdas.to_vec();
    sorted.sort_by(f64::total_cmp);
    let normal = Normal::standard();
    let normal_probability_plot = sorted
        .iter()
        .enumerate()
        .map(|(i, &x)| (normal.inverse_cdf((i as f64 + 0.5) / nf), x))
        .collect();
    Ok(ExponentEnsembleStats {
        n,
        mean,
        std,
        skewness,
        normal_probability_plot,
        degenerate,
    })
}

impl ExponentEnsembleStats {
    /// Writes `theoretical,sample`.
    pub fn write_plot_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "theoretical,sample")?;
        for (q, x) in &self.normal_probability_plot {
            writeln!(w, "{},{}", fmt_g(*q), fmt_g(*x))?;
        }
        Ok(())
    }
}

/// The per-run variables `x1` (price) and `x2` (volume).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Variable {
    X1,
    X2,
}

impl Variable {
    pub fn label(self) -> &'static str {
        match self {
            Variable::X1 => "x1",
            Variable::X2 => "x2",
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunTailFit {
    pub run: usize,
    pub variable: Variable,
    pub fit: TailFit,
}

/// Per-run fits of both variables. Runs too short or too flat to fit are
/// skipped and listed in the second vector as `(run, variable, reason)`.
pub fn fit_runs(
    series: &[RunSeries],
    side: Side,
    fit_fraction: f64,
    estimator: Estimator,
) -> (Vec<RunTailFit>, Vec<(usize, Variable, String)>) {
    let mut fits = Vec::new();
    let mut skipped = Vec::new();
    for s in series {
        for (variable, values) in [(Variable::X1, &s.x1), (Variable::X2, &s.x2)] {
            match fit_tail_with(values, side, fit_fraction, estimator) {
                Ok(fit) => fits.push(RunTailFit {
                    run: s.run,
                    variable,
                    fit,
                }),
                Err(e) => skipped.push((s.run, variable, e.to_string())),
            }
        }
    }
    (fits, skipped)
}

/// Writes `run,variable,side,lambda,r2,n_points`.
pub fn write_fits_csv<W: Write>(fits: &[RunTailFit], mut w: W) -> Result<()> {
    writeln!(w, "run,variable,side,lambda,r2,n_points")?;
    for f in fits {
        writeln!(
            w,
            "{},{},{},{},{},{}",
            f.run,
            f.variable.label(),
            f.fit.side.label(),
            fmt_g(f.fit.lambda),
            fmt_g(f.fit.r_squared),
            f.fit.n_points
        )?;
    }
    Ok(())
}

#[cfg(test)]
mod tests {
    use super::*;
    use rand::{Rng, SeedableRng};
    use rand_chacha::ChaCha8Rng;

    fn pareto(lambda: f64, n: usize, seed: u64) -> Vec<f64> {
        let mut rng = ChaCha8Rng::seed_from_u64(seed);
        (0..n)
            .map(|_| (1.0 - rng.random::<f64>()).powf(1.0 / lambda))
            .collect()
    }

    #[test]
    fn exact_square_law() {
        let n = 1000;
        let xs: Vec<f64> = (1..=n).map(|i| (i as f64 / n as f64).sqrt()).collect();
        let fit = fit_tail(&xs, Side::Left, 0.1).unwrap();
        assert!((fit.lambda - 2.0).abs() < 1e-6, "{}", fit.lambda);
        assert!(fit.r_squared > 1.0 - 1e-12);
        assert_eq!(fit.n_points, 100);
    }

    #[test]
    fn synthetic_pareto_recovery() {
        for (i, lambda) in [-1.5, -0.9, -0.5].into_iter().enumerate() {
            let xs = pareto(lambda, 100_000, i as u64);
            for est in [Estimator::Ols, Estimator::Hill] {
                let fit = fit_tail_with(&xs, Side::Right, 0.1, est).unwrap();
                assert!(
                    ((fit.lambda - lambda) / lambda).abs() < 0.05,
                    "{est:?}: {} vs {lambda}",
                    fit.lambda
                );
            }
        }
    }

    #[test]
    fn hill_on_square_law() {
        let n = 1000;
        let xs: Vec<f64> = (1..=n).map(|i| (i as f64 / n as f64).sqrt()).collect();
        let fit = fit_tail_with(&xs, Side::Left, 0.1, Estimator::Hill).unwrap();
        assert!((fit.lambda - 2.0).abs() < 0.25, "{}", fit.lambda);
    }

    #[test]
    fn left_of_x_is_right_of_minus_x() {
        let mut rng = ChaCha8Rng::seed_from_u64(9);
        let xs: Vec<f64> = (0..500).map(|_| rng.random::<f64>() * 4.0 - 1.0).collect();
        let neg: Vec<f64> = xs.iter().map(|x| -x).collect();
        for frac in [0.05, 0.1, 0.3] {
            let a = fit_tail(&xs, Side::Left, frac).unwrap();
            let b = fit_tail(&neg, Side::Right, frac).unwrap();
            assert!((a.lambda - b.lambda).abs() < 1e-12);
            assert_eq!(a.n_points, b.n_points);
        }
    }

    #[test]
    fn order_does_not_matter() {
        let xs = pareto(-0.9, 1000, 3);
        let mut rev = xs.clone();
        rev.reverse();
        assert_eq!(
            fit_tail(&xs, Side::Right, 0.1).unwrap(),
            fit_tail(&rev, Side::Right, 0.1).unwrap()
        );
    }

    #[test]
    fn mixed_sign_tail_is_shifted() {
        let xs: Vec<f64> = (0..200).map(|i| i as f64 - 10.0).collect();
        let fit = fit_tail(&xs, Side::Left, 0.2).unwrap();
        assert!(fit.shifted);
        assert_eq!(fit.n_points, 39);
    }

    #[test]
    fn preconditions() {
        assert!(matches!(
            fit_tail(&[1.0; 50], Side::Left, 0.1),
            Err(Error::InsufficientSamples { .. })
        ));
        assert!(fit_tail(&pareto(-1.0, 200, 0), Side::Left, 0.6).is_err());
        assert!(fit_tail(&pareto(-1.0, 200, 0), Side::Left, 0.0).is_err());
    }

    #[test]
    fn stats_of_constant_sequence() {
        let s = exponent_stats(&[-0.8; 40]).unwrap();
        assert!(s.degenerate);
        assert_eq!(s.std, 0.0);
        assert_eq!(s.normal_probability_plot.len(), 40);
        assert!(exponent_stats(&[1.0; 10]).is_err());
    }

    #[test]
    fn stats_moments() {
        let xs: Vec<f64> = (0..100).map(|i| (i as f64).powi(2)).collect();
        let s = exponent_stats(&xs).unwrap();
        assert!((s.mean - 3283.5).abs() < 1e-9);
        assert!(s.skewness > 0.5);
        let plot = &s.normal_probability_plot;
        assert!(plot.windows(2).all(|w| w[0].0 < w[1].0 && w[0].1 <= w[1].1));
        assert!((plot[0].0 + plot[99].0).abs() < 1e-9);
    }
}
