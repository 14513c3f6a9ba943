//! The market maker's control problem.
//!
//! A strategy `z` is scored by its entanglement `|corr(z, x1)|` with the
//! price path, subject to
//!
//! ```text
//! integral of x1'^2 dt <= U
//! c2 beta2 x1' - c1 beta1 U x1 + beta2 L <= 0     at every sample
//! ```
//!
//! with profit rate `Pi' = c1 U beta1 / beta2 x1 - c2 x1'`. Strategies are
//! searched over the family `z = k / u`.

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{Input, IntegratorSettings, MarketState, ModelParams, Termination};
use crate::error::{Error, Result};
use crate::forcing::integrate_forced_full;
use crate::format::fmt_g;
use crate::montecarlo::correlation;

/// Trapezoid rule.
pub fn trapezoid(t: &[f64], y: &[f64]) -> f64 {
    t.windows(2)
        .zip(y.windows(2))
        .map(|(t, y)| 0.5 * (y[0] + y[1]) * (t[1] - t[0]))
        .sum()
}

/// Running trapezoid integral starting from zero.
pub fn cumulative_trapezoid(t: &[f64], y: &[f64]) -> Vec<f64> {
    let mut acc = 0.0;
    let mut out = Vec::with_capacity(t.len());
    for i in 0..t.len() {
        if i > 0 {
            acc += 0.5 * (y[i - 1] + y[i]) * (t[i] - t[i - 1]);
        }
        out.push(acc);
    }
    out
}

/// `integral of x1'^2 dt`.
pub fn regularity(times: &[f64], x1_dot: &[f64]) -> f64 {
    let sq: Vec<f64> = x1_dot.iter().map(|d| d * d).collect();
    trapezoid(times, &sq)
}

/// `c1 U beta1 / beta2 x1 - c2 x1'`.
pub fn profit_rate(x1: f64, x1_dot: f64, params: &ModelParams) -> f64 {
    params.c1 * params.regularity_bound * params.beta1 / params.beta2 * x1 - params.c2 * x1_dot
}

/// `c2 beta2 x1' - c1 beta1 U x1 + beta2 L`; feasible where `<= 0`.
pub fn profit_constraint(x1: f64, x1_dot: f64, params: &ModelParams) -> f64 {
    params.c2 * params.beta2 * x1_dot - params.c1 * params.beta1 * params.regularity_bound * x1
        + params.beta2 * params.loss_bound
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct StrategyEvaluation {
    /// `k` for members of the `k / u` family.
    pub strategy_param: Option<f64>,
    /// `|corr(z, x1)|`; `None` when `z` does not vary.
    pub objective: Option<f64>,
    pub regularity: f64,
    /// Largest value of the profit constraint over the samples.
    pub margin: f64,
    pub feasible: bool,
    /// `max(0, regularity - U)`.
    pub regularity_excess: f64,
    /// `max(0, margin)`.
    pub margin_excess: f64,
    pub termination: Termination,
    /// `(t, Pi(t))` with `Pi(0) = 0`.
    #[serde(skip_serializing_if = "Option::is_none")]
    pub profit_path: Option<Vec<(f64, f64)>>,
}

/// Scores sampled `z`, `x1` and `x1'` series on a common time grid.
pub fn evaluate_path(
    times: &[f64],
    z: &[f64],
    x1: &[f64],
    x1_dot: &[f64],
    params: &ModelParams,
) -> Result<StrategyEvaluation> {
    let n = times.len();
    for len in [z.len(), x1.len(), x1_dot.len()] {
        if len != n {
            return Err(Error::LengthMismatch(n, len));
        }
    }
    if n < 2 {
        return Err(Error::InsufficientSamples { need: 2, got: n });
    }
    let objective = match correlation(z, x1) {
        Ok(r) => Some(r.abs().min(1.0)),
        Err(Error::ZeroVariance) => None,
        Err(e) => return Err(e),
    };
    let reg = regularity(times, x1_dot);
    let margin = x1
        .iter()
        .zip(x1_dot)
        .map(|(&x, &d)| profit_constraint(x, d, params))
        .fold(f64::NEG_INFINITY, f64::max);
    let rates: Vec<f64> = x1
        .iter()
        .zip(x1_dot)
        .map(|(&x, &d)| profit_rate(x, d, params))
        .collect();
    let profit = cumulative_trapezoid(times, &rates);
    Ok(StrategyEvaluation {
        strategy_param: None,
        objective,
        regularity: reg,
        margin,
        feasible: reg <= params.regularity_bound && margin <= 0.0,
        regularity_excess: (reg - params.regularity_bound).max(0.0),
        margin_excess: margin.max(0.0),
        termination: Termination::HorizonReached,
        profit_path: Some(times.iter().copied().zip(profit).collect()),
    })
}

/// Problem instance for the `k / u` strategy family.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct ControlProblem {
    pub params: ModelParams,
    pub k_min: f64,
    pub k_max: f64,
    pub horizon: f64,
    pub sample_dt: f64,
    pub tolerance: f64,
    /// Evenly spaced family members evaluated before refinement.
    pub grid_points: usize,
    /// Refinement draws evaluated together per round.
    pub batch: usize,
}

impl Default for ControlProblem {
    fn default() -> Self {
        Self {
            params: ModelParams::default().with_control(1.0, 1.0, 0.15, -0.5),
            k_min: -0.1,
            k_max: 0.1,
            horizon: 2.0,
            sample_dt: 0.01,
            tolerance: 1e-10,
            grid_points: 41,
            batch: 8,
        }
    }
}

impl ControlProblem {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        if !(self.k_min <= 0.0 && 0.0 <= self.k_max)
            || !self.k_min.is_finite()
            || !self.k_max.is_finite()
        {
            return Err(Error::InvalidParameter(format!(
                "strategy range [{}, {}] must contain k = 0",
                self.k_min, self.k_max
            )));
        }
        if !(self.horizon > 0.0) || !(self.sample_dt > 0.0) || !(self.tolerance > 0.0) {
            return Err(Error::InvalidParameter(
                "horizon, sample_dt and tolerance must be positive".into(),
            ));
        }
        if self.grid_points == 0 || self.batch == 0 {
            return Err(Error::InvalidParameter(
                "grid_points and batch must be at least 1".into(),
            ));
        }
        Ok(())
    }

    pub fn settings(&self) -> IntegratorSettings {
        IntegratorSettings::adaptive(self.tolerance).sampled(self.sample_dt)
    }

    /// The evaluation grid, deduplicated.
    pub fn grid(&self) -> Vec<f64> {
        let n = self.grid_points;
        let mut ks: Vec<f64> = if n == 1 || self.k_min == self.k_max {
            vec![if self.k_min == self.k_max {
                self.k_min
            } else {
                0.0
            }]
        } else {
            (0..n)
                .map(|i| self.k_min + (self.k_max - self.k_min) * i as f64 / (n - 1) as f64)
                .collect()
        };
        ks.dedup();
        ks
    }
}

/// Runs the strategy from `initial` and scores it. Runs that stop before the
/// horizon are scored on the window they reached and marked infeasible.
pub fn evaluate_strategy(
    problem: &ControlProblem,
    strategy: &Input,
    initial: &MarketState,
) -> Result<StrategyEvaluation> {
    problem.validate()?;
    let p = &problem.params;
    let traj = integrate_forced_full(initial, strategy, p, problem.horizon, &problem.settings())?;
    let derivs = traj.derivatives(p)?;
    let x1: Vec<f64> = traj.states.iter().map(|s| s.x1).collect();
    let x1_dot: Vec<f64> = derivs.iter().map(|d| d[0]).collect();
    let z = traj.inputs.clone().unwrap_or_else(|| vec![0.0; traj.len()]);
    let mut eval = evaluate_path(&traj.times, &z, &x1, &x1_dot, p)?;
    eval.strategy_param = strategy.k();
    eval.termination = traj.termination;
    if traj.termination != Termination::HorizonReached {
        eval.feasible = false;
    }
    Ok(eval)
}

fn evaluate_k(
    problem: &ControlProblem,
    initial: &MarketState,
    k: f64,
) -> Result<StrategyEvaluation> {
    let input = if k == 0.0 {
        Input::Zero
    } else {
        Input::InverseU { k }
    };
    evaluate_strategy(problem, &input, initial)
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchResult {
    /// Feasible strategies by ascending objective; undefined objectives last.
    pub feasible: Vec<StrategyEvaluation>,
    /// Infeasible strategies in evaluation order, with their excesses.
    pub infeasible: Vec<StrategyEvaluation>,
    pub evaluations: usize,
    pub seed: u64,
}

impl SearchResult {
    pub fn best(&self) -> Option<&StrategyEvaluation> {
        self.feasible.first()
    }

    /// Strategy parameters that are feasible, ascending.
    pub fn feasible_params(&self) -> Vec<f64> {
        let mut ks: Vec<f64> = self
            .feasible
            .iter()
            .filter_map(|e| e.strategy_param)
            .collect();
        ks.sort_by(f64::total_cmp);
        ks
    }

    /// Writes `strategy_param,objective,regularity,margin,feasible`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "strategy_param,objective,regularity,margin,feasible")?;
        for e in self.feasible.iter().chain(&self.infeasible) {
            writeln!(
                w,
                "{},{},{},{},{}",
                fmt_g(e.strategy_param.unwrap_or(f64::NAN)),
                fmt_g(e.objective.unwrap_or(f64::NAN)),
                fmt_g(e.regularity),
                fmt_g(e.margin),
                e.feasible
            )?;
        }
        Ok(())
    }

    pub fn summary(&self, problem: &ControlProblem) -> SearchSummary {
        let strip = |e: &StrategyEvaluation| StrategyEvaluation {
            profit_path: None,
            ..e.clone()
        };
        SearchSummary {
            problem: problem.clone(),
            seed: self.seed,
            evaluations: self.evaluations,
            feasible_count: self.feasible.len(),
            infeasible_count: self.infeasible.len(),
            best: self.best().map(strip),
            objective_undefined: self.best().is_some_and(|b| b.objective.is_none()),
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SearchSummary {
    pub problem: ControlProblem,
    pub seed: u64,
    pub evaluations: usize,
    pub feasible_count: usize,
    pub infeasible_count: usize,
    pub best: Option<StrategyEvaluation>,
    /// Set when the best strategy has no defined objective.
    pub objective_undefined: bool,
}

/// Evaluates the grid, then spends the rest of `budget` on seeded draws
/// around the best feasible member with a radius halving every round.
pub fn search_strategies(
    problem: &ControlProblem,
    initial: &MarketState,
    budget: usize,
    seed: u64,
) -> Result<SearchResult> {
    problem.validate()?;
    if budget == 0 {
        return Err(Error::InvalidParameter("budget must be at least 1".into()));
    }
    let mut grid = problem.grid();
    grid.truncate(budget);
    let mut evals: Vec<StrategyEvaluation> = grid
        .par_iter()
        .map(|&k| evaluate_k(problem, initial, k))
        .collect::<Result<_>>()?;

    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    let spacing = if grid.len() > 1 {
        (problem.k_max - problem.k_min) / (grid.len() - 1) as f64
    } else {
        0.0
    };
    let mut radius = spacing;
    while evals.len() < budget && radius > 0.0 {
        let Some(centre) = best_index(&evals).and_then(|i| evals[i].strategy_param) else {
            break;
        };
        let m = problem.batch.min(budget - evals.len());
        let lo = (centre - radius).max(problem.k_min);
        let hi = (centre + radius).min(problem.k_max);
        let draws: Vec<f64> = (0..m).map(|_| rng.random_range(lo..=hi)).collect();
        let batch: Vec<StrategyEvaluation> = draws
            .par_iter()
            .map(|&k| evaluate_k(problem, initial, k))
            .collect::<Result<_>>()?;
        evals.extend(batch);
        radius *= 0.5;
    }

    let evaluations = evals.len();
    let (mut feasible, infeasible): (Vec<_>, Vec<_>) = evals.into_iter().partition(|e| e.feasible);
    feasible.sort_by(|a, b| rank(a).total_cmp(&rank(b)));
    Ok(SearchResult {
        feasible,
        infeasible,
        evaluations,
        seed,
    })
}

fn rank(e: &StrategyEvaluation) -> f64 {
    e.objective.unwrap_or(f64::INFINITY)
}

fn best_index(evals: &[StrategyEvaluation]) -> Option<usize> {
    evals
        .iter()
        .enumerate()
        .filter(|(_, e)| e.feasible && e.objective.is_some())
        .min_by(|a, b| rank(a.1).total_cmp(&rank(b.1)))
        .map(|(i, _)| i)
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::dynamics::matched_initial_state;

    fn start(p: &ModelParams) -> MarketState {
        matched_initial_state(0.2, 0.5, 1.0, p).unwrap()
    }

    #[test]
    fn constant_price_margin() {
        let p = ModelParams::default().with_control(2.0, 1.0, 0.5, 0.3);
        let t: Vec<f64> = (0..11).map(|i| i as f64 * 0.1).collect();
        let x1 = vec![0.4; 11];
        let e = evaluate_path(&t, &[0.0; 11], &x1, &[0.0; 11], &p).unwrap();
        assert!((e.margin - (0.3 - 2.0 * 0.5 * 0.4)).abs() < 1e-15);
        assert!(e.feasible);
        assert_eq!(e.objective, None);
        assert_eq!(e.regularity, 0.0);
        let p = p.with_control(2.0, 1.0, 0.5, 0.41);
        assert!(
            !evaluate_path(&t, &[0.0; 11], &x1, &[0.0; 11], &p)
                .unwrap()
                .feasible
        );
    }

    #[test]
    fn zero_strategy_objective_undefined() {
        let problem = ControlProblem::default();
        let e = evaluate_strategy(&problem, &Input::Zero, &start(&problem.params)).unwrap();
        assert_eq!(e.objective, None);
        assert_eq!(e.strategy_param, Some(0.0));
        assert!(e.regularity > 0.0);
    }

    #[test]
    fn objective_in_unit_interval() {
        let problem = ControlProblem::default();
        let e = evaluate_strategy(
            &problem,
            &Input::InverseU { k: 0.05 },
            &start(&problem.params),
        )
        .unwrap();
        let o = e.objective.unwrap();
        assert!((0.0..=1.0).contains(&o));
    }

    #[test]
    fn halving_sample_dt_is_stable() {
        let mut problem = ControlProblem::default();
        let s = start(&problem.params);
        let a = evaluate_strategy(&problem, &Input::InverseU { k: 0.05 }, &s).unwrap();
        problem.sample_dt /= 2.0;
        let b = evaluate_strategy(&problem, &Input::InverseU { k: 0.05 }, &s).unwrap();
        assert!((a.regularity - b.regularity).abs() < 1e-4 * a.regularity.max(1.0));
        assert!((a.margin - b.margin).abs() < 1e-3);
    }

    #[test]
    fn profit_path_integrates_rate() {
        let problem = ControlProblem::default();
        let e = evaluate_strategy(
            &problem,
            &Input::InverseU { k: 0.05 },
            &start(&problem.params),
        )
        .unwrap();
        let path = e.profit_path.unwrap();
        assert_eq!(path[0].1, 0.0);
        assert!(path.last().unwrap().1.is_finite());
    }

    #[test]
    fn zero_only_family() {
        let problem = ControlProblem {
            k_min: 0.0,
            k_max: 0.0,
            params: ModelParams::default().with_control(1.0, 1.0, 100.0, -10.0),
            ..ControlProblem::default()
        };
        let r = search_strategies(&problem, &start(&problem.params), 5, 1).unwrap();
        assert_eq!(r.evaluations, 1);
        assert_eq!(r.feasible.len(), 1);
        assert!(r.summary(&problem).objective_undefined);
    }

    #[test]
    fn rejects_family_without_zero() {
        let problem = ControlProblem {
            k_min: 0.01,
            ..ControlProblem::default()
        };
        assert!(problem.validate().is_err());
    }
}
