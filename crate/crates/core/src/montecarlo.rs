//! Seeded ensembles of reduced trajectories with random branch resolution.
//!
//! Each run samples `(u0, v0)`, integrates the master equation in time and
//! records `x1 = a / beta1`, `x2 = v / beta2` on a fixed grid. Two kinds of
//! event interrupt the integration:
//!
//! - **passage**: `|u|` reaches the passage gap near B or E. The run crosses
//!   to the other sign of `u` on the same closed-form curve, either onto the
//!   cycle arc ([`Branch::Continue`]) or onto the explosive branch
//!   ([`Branch::Explode`]). The time spent inside the gap is skipped.
//! - **crossing**: `v` changes sign at C or D. The run either keeps going or
//!   jumps to the outer branch at the same `u` (G or F, [`Branch::Detour`]).
//!
//! Passages need both axis contacts, so they only happen for `C1 < 0`; for
//! other values a run that reaches the gap ends with
//! [`Termination::Singularity`].
//!
//! Run `i` draws from `ChaCha8Rng::seed_from_u64(seed)` on stream `i`, so the
//! ensemble does not depend on thread scheduling.

use std::io::{BufRead, Write};

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::dynamics::{IntegratorSettings, Limits, ModelParams, Termination, BLOW_UP_THRESHOLD};
use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::ode::{Method, Output, StepControl, Stop};
use crate::phase::{BifurcationPoint, Branch, BranchPolicy, PhaseCurve, RandomBranches, Regime};
use crate::reduction::{master_acceleration, solve_reduced};

/// Distribution of the initial point `(u0, v0)`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum InitSampler {
    /// `|u0|` uniform on `[u_min, u_max]` with a random sign, `v0` uniform on
    /// `[v_min, v_max]` minus a band of half-width `exclusion` around the
    /// numerator roots.
    Uniform {
        u_min: f64,
        u_max: f64,
        v_min: f64,
        v_max: f64,
        exclusion: f64,
    },
    Fixed {
        u0: f64,
        v0: f64,
    },
}

impl Default for InitSampler {
    fn default() -> Self {
        InitSampler::Uniform {
            u_min: 0.2,
            u_max: 2.0,
            v_min: -3.0,
            v_max: 1.0,
            exclusion: 1e-3,
        }
    }
}

impl InitSampler {
    pub fn sample<R: Rng>(&self, rng: &mut R, c1: f64) -> Result<(f64, f64)> {
        match *self {
            InitSampler::Fixed { u0, v0 } => Ok((u0, v0)),
            InitSampler::Uniform {
                u_min,
                u_max,
                v_min,
                v_max,
                exclusion,
            } => {
                let magnitude = rng.random_range(u_min..=u_max);
                let u0 = if rng.random::<bool>() {
                    magnitude
                } else {
                    -magnitude
                };
                let avoid: Vec<f64> = if c1 <= 1.0 {
                    let s = (1.0 - c1).sqrt();
                    vec![-1.0 - s, -1.0 + s]
                } else {
                    Vec::new()
                };
                for _ in 0..10_000 {
                    let v0 = rng.random_range(v_min..=v_max);
                    if avoid.iter().all(|r| (v0 - r).abs() >= exclusion) {
                        return Ok((u0, v0));
                    }
                }
                Err(Error::InvalidParameter(
                    "v0 range lies inside the exclusion bands".into(),
                ))
            }
        }
    }

    fn validate(&self) -> Result<()> {
        let ok = match *self {
            InitSampler::Fixed { u0, v0 } => u0.is_finite() && v0.is_finite() && u0 != 0.0,
            InitSampler::Uniform {
                u_min,
                u_max,
                v_min,
                v_max,
                exclusion,
            } => {
                0.0 < u_min
                    && u_min <= u_max
                    && v_min <= v_max
                    && exclusion >= 0.0
                    && u_max.is_finite()
            }
        };
        if ok {
            Ok(())
        } else {
            Err(Error::InvalidParameter(format!(
                "bad initial sampler {self:?}"
            )))
        }
    }
}

/// Probabilities of the random branch choices.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct BranchPolicySpec {
    /// Chance of jumping to the outer branch at C or D.
    pub p_detour: f64,
    /// Chance of taking the explosive branch at B or E.
    pub p_explode: f64,
}

impl Default for BranchPolicySpec {
    fn default() -> Self {
        Self {
            p_detour: 0.5,
            p_explode: 0.05,
        }
    }
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
#[serde(default)]
pub struct EnsembleConfig {
    pub n_runs: usize,
    pub c1: f64,
    pub params: ModelParams,
    pub init_sampler: InitSampler,
    pub horizon: f64,
    pub sample_dt: f64,
    pub seed: u64,
    pub branch_policy: BranchPolicySpec,
    /// `|u|` at which a passage through `u = 0` is resolved.
    pub passage_gap: f64,
    /// Runs with fewer samples are excluded from the statistics.
    pub min_samples: usize,
    /// Fewer valid runs than this is an error.
    pub min_valid_runs: usize,
    /// Adaptive integration tolerance.
    pub tolerance: f64,
    /// `|v|` at which a run counts as blown up. `v` does not change under
    /// the rescaling `u -> k u, t -> k t` that maps curves of one `C1` onto
    /// each other, so one level serves every curve.
    pub escape_v: f64,
    pub keep_series: bool,
}

impl Default for EnsembleConfig {
    fn default() -> Self {
        Self {
            n_runs: 1000,
            c1: -0.5,
            params: ModelParams::default(),
            init_sampler: InitSampler::default(),
            horizon: 1000.0,
            sample_dt: 0.5,
            seed: 0,
            branch_policy: BranchPolicySpec::default(),
            passage_gap: 0.05,
            min_samples: 50,
            min_valid_runs: 1,
            tolerance: 1e-9,
            escape_v: 10.0,
            keep_series: false,
        }
    }
}

impl EnsembleConfig {
    pub fn validate(&self) -> Result<()> {
        self.params.validate()?;
        self.init_sampler.validate()?;
        let p = self.branch_policy;
        let checks = [
            (self.n_runs >= 1, "n_runs must be at least 1"),
            (self.c1.is_finite(), "C1 must be finite"),
            (
                self.horizon > 0.0 && self.horizon.is_finite(),
                "horizon must be positive",
            ),
            (self.sample_dt > 0.0, "sample_dt must be positive"),
            (
                (0.0..=1.0).contains(&p.p_detour),
                "p_detour must lie in [0, 1]",
            ),
            (
                (0.0..=1.0).contains(&p.p_explode),
                "p_explode must lie in [0, 1]",
            ),
            (self.passage_gap > 0.0, "passage_gap must be positive"),
            (self.min_samples >= 2, "min_samples must be at least 2"),
            (self.tolerance > 0.0, "tolerance must be positive"),
            (self.escape_v > 0.0, "escape_v must be positive"),
        ];
        match checks.iter().find(|(ok, _)| !ok) {
            Some((_, msg)) => Err(Error::InvalidParameter((*msg).into())),
            None => Ok(()),
        }
    }

    fn settings(&self) -> IntegratorSettings {
        IntegratorSettings {
            method: Method::Adaptive(
                StepControl::with_tolerance(self.tolerance).max_step(self.sample_dt),
            ),
            limits: Limits {
                singular_floor: self.passage_gap,
                blow_up: BLOW_UP_THRESHOLD,
            },
            sample_dt: Some(self.sample_dt),
        }
    }
}

/// Why a run does not contribute a correlation.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Exclusion {
    TooShort,
    ZeroVariance,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunRecord {
    pub run: usize,
    pub u0: f64,
    pub v0: f64,
    pub abs_rho: Option<f64>,
    pub termination: Termination,
    pub n_samples: usize,
    pub passages: usize,
    pub detours: usize,
    pub exploded: bool,
    pub exclusion: Option<Exclusion>,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct RunSeries {
    pub run: usize,
    pub times: Vec<f64>,
    pub x1: Vec<f64>,
    pub x2: Vec<f64>,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct HistogramBin {
    pub left: f64,
    pub right: f64,
    pub count: usize,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct EnsembleResult {
    /// `|rho(x1, x2)|` of the valid runs, in run order.
    pub correlations: Vec<f64>,
    pub runs: Vec<RunRecord>,
    /// Filled when `keep_series` is set.
    pub series: Vec<RunSeries>,
}

impl EnsembleResult {
    pub fn completed(&self) -> usize {
        self.correlations.len()
    }

    pub fn excluded(&self) -> usize {
        self.runs.len() - self.correlations.len()
    }

    pub fn max_abs_rho(&self) -> Option<f64> {
        self.correlations.iter().copied().reduce(f64::max)
    }

    /// Empirical quantile with linear interpolation between order statistics.
    pub fn quantile(&self, p: f64) -> Option<f64> {
        quantile(&self.correlations, p)
    }

    /// `bins` equal-width bins on `[0, 1]`; the last bin is closed.
    pub fn histogram(&self, bins: usize) -> Vec<HistogramBin> {
        let bins = bins.max(1);
        let mut counts = vec![0usize; bins];
        for &r in &self.correlations {
            let i = ((r * bins as f64) as usize).min(bins - 1);
            counts[i] += 1;
        }
        counts
            .into_iter()
            .enumerate()
            .map(|(i, count)| HistogramBin {
                left: i as f64 / bins as f64,
                right: (i + 1) as f64 / bins as f64,
                count,
            })
            .collect()
    }

    /// Writes `run,abs_rho,termination`; excluded runs have an empty `abs_rho`.
    pub fn write_correlations_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "run,abs_rho,termination")?;
        for r in &self.runs {
            let rho = r.abs_rho.map(fmt_g).unwrap_or_default();
            writeln!(w, "{},{},{}", r.run, rho, r.termination.label())?;
        }
        Ok(())
    }

    /// Writes `run,t,x1,x2` for the retained series.
    pub fn write_series_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "run,t,x1,x2")?;
        for s in &self.series {
            for i in 0..s.times.len() {
                writeln!(
                    w,
                    "{},{},{},{}",
                    s.run,
                    fmt_g(s.times[i]),
                    fmt_g(s.x1[i]),
                    fmt_g(s.x2[i])
                )?;
            }
        }
        Ok(())
    }
}

/// Reads the `run,t,x1,x2` layout written by
/// [`EnsembleResult::write_series_csv`].
pub fn read_series_csv<R: BufRead>(r: R) -> Result<Vec<RunSeries>> {
    let mut out: Vec<RunSeries> = Vec::new();
    for (i, line) in r.lines().enumerate() {
        let line = line?;
        if i == 0 {
            if line.trim() != "run,t,x1,x2" {
                return Err(Error::InvalidParameter(format!(
                    "unexpected series header {line:?}"
                )));
            }
            continue;
        }
        if line.trim().is_empty() {
            continue;
        }
        let bad = || Error::InvalidParameter(format!("malformed series line {}: {line:?}", i + 1));
        let fields: Vec<&str> = line.split(',').collect();
        if fields.len() != 4 {
            return Err(bad());
        }
        let run: usize = fields[0].parse().map_err(|_| bad())?;
        let num = |s: &str| s.parse::<f64>().map_err(|_| bad());
        let (t, x1, x2) = (num(fields[1])?, num(fields[2])?, num(fields[3])?);
        match out.last_mut() {
            Some(s) if s.run == run => {
                s.times.push(t);
                s.x1.push(x1);
                s.x2.push(x2);
            }
            _ => out.push(RunSeries {
                run,
                times: vec![t],
                x1: vec![x1],
                x2: vec![x2],
            }),
        }
    }
    Ok(out)
}

pub fn write_histogram_csv<W: Write>(bins: &[HistogramBin], mut w: W) -> Result<()> {
    writeln!(w, "bin_left,bin_right,count")?;
    for b in bins {
        writeln!(w, "{},{},{}", fmt_g(b.left), fmt_g(b.right), b.count)?;
    }
    Ok(())
}

pub(crate) fn quantile(values: &[f64], p: f64) -> Option<f64> {
    if values.is_empty() || !(0.0..=1.0).contains(&p) {
        return None;
    }
    let mut sorted = values.to_vec();
    sorted.sort_by(f64::total_cmp);
    let pos = p * (sorted.len() - 1) as f64;
    let lo = pos.floor() as usize;
    let hi = pos.ceil() as usize;
    Some(sorted[lo] + (sorted[hi] - sorted[lo]) * (pos - lo as f64))
}

/// Pearson sample correlation.
pub fn correlation(x: &[f64], y: &[f64]) -> Result<f64> {
    if x.len() != y.len() {
        return Err(Error::LengthMismatch(x.len(), y.len()));
    }
    if x.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: x.len(),
        });
    }
    let n = x.len() as f64;
    let mx = x.iter().sum::<f64>() / n;
    let my = y.iter().sum::<f64>() / n;
    let (mut sxy, mut sxx, mut syy) = (0.0, 0.0, 0.0);
    for (a, b) in x.iter().zip(y) {
        let (dx, dy) = (a - mx, b - my);
        sxy += dx * dy;
        sxx += dx * dx;
        syy += dy * dy;
    }
    let degenerate = |s: f64, m: f64| s <= (1e-14 * m.abs()).powi(2) * n || s == 0.0;
    if degenerate(sxx, mx) || degenerate(syy, my) {
        return Err(Error::ZeroVariance);
    }
    Ok((sxy / (sxx.sqrt() * syy.sqrt())).clamp(-1.0, 1.0))
}

const MAX_SEGMENTS: usize = 100_000;

/// Simulates run `index` of the ensemble.
pub fn simulate_run(config: &EnsembleConfig, index: usize) -> Result<(RunRecord, RunSeries)> {
    let mut rng = ChaCha8Rng::seed_from_u64(config.seed);
    rng.set_stream(index as u64);
    let (u0, v0) = config.init_sampler.sample(&mut rng, config.c1)?;
    let p = config.branch_policy;
    let mut policy = RandomBranches::from_rng(p.p_detour, p.p_explode, rng);

    let c1 = config.c1;
    let settings = config.settings();
    let gap = config.passage_gap;
    let passages_allowed = Regime::classify(c1) == Regime::BelowOne && c1 < 0.0;
    // passages and detours land on the curve fixed by the initial point
    let curve = PhaseCurve::through(c1, u0, v0)?;
    let escape = config.escape_v;
    // changes sign on v = 0 (when passages are resolved) and on |v| = escape
    let event = |_: f64, y: &[f64]| {
        let out = escape - y[1].abs();
        if passages_allowed {
            y[1] * out
        } else {
            out
        }
    };

    let mut record = RunRecord {
        run: index,
        u0,
        v0,
        abs_rho: None,
        termination: Termination::HorizonReached,
        n_samples: 0,
        passages: 0,
        detours: 0,
        exploded: false,
        exclusion: None,
    };
    let mut series = RunSeries {
        run: index,
        times: Vec::new(),
        x1: Vec::new(),
        x2: Vec::new(),
    };
    let (b1, b2) = (config.params.beta1, config.params.beta2);
    let mut t = 0.0;
    let mut y = [u0, v0];
    let mut segments = 0;

    if v0.abs() >= escape {
        record.termination = Termination::BlowUp;
    }
    while record.termination != Termination::BlowUp {
        segments += 1;
        if segments > MAX_SEGMENTS {
            return Err(Error::TooManySteps(MAX_SEGMENTS));
        }
        let sol = solve_reduced(
            t,
            y,
            c1,
            config.horizon,
            &settings,
            Output::every(config.sample_dt),
            Some(&event),
        )?;
        for (ts, ys) in sol.t.iter().zip(&sol.y) {
            let on_grid = ((ts / config.sample_dt).round() * config.sample_dt - ts).abs()
                <= 1e-9 * config.sample_dt;
            if on_grid
                && series
                    .times
                    .last()
                    .is_none_or(|&last| *ts > last + 0.5 * config.sample_dt)
            {
                series.times.push(*ts);
                series.x1.push(master_acceleration(ys[0], ys[1], c1) / b1);
                series.x2.push(ys[1] / b2);
            }
        }
        t = sol.stop_t;
        let [u, v] = sol.stop_y;
        match sol.stop {
            Stop::Horizon => {
                record.termination = Termination::HorizonReached;
                break;
            }
            Stop::BlowUp => {
                record.termination = Termination::BlowUp;
                break;
            }
            Stop::Event if v.abs() >= escape * (1.0 - 1e-9) => {
                record.termination = Termination::BlowUp;
                break;
            }
            Stop::Event => {
                let point = if u < 0.0 {
                    BifurcationPoint::C
                } else {
                    BifurcationPoint::D
                };
                y = [u, v];
                match policy.choose(point, u, v) {
                    Branch::Detour => {
                        let v_out = if u < 0.0 {
                            curve.upper_branch_v(u.abs())?
                        } else {
                            curve.lower_branch_v(u.abs())?
                        };
                        y = [u, v_out];
                        record.detours += 1;
                    }
                    Branch::Continue => {}
                    Branch::Explode => {
                        return Err(Error::UnreachableBranch {
                            point: format!("{point:?}"),
                            branch: "Explode".into(),
                        })
                    }
                }
            }
            Stop::Singular => {
                if !passages_allowed {
                    record.termination = Termination::Singularity;
                    break;
                }
                match pass_through_axis(&curve, u, v, gap, &mut policy)? {
                    Some((landing, explode)) => {
                        t += (u.abs() + landing[0].abs())
                            / (0.5 * (v.abs() + landing[1].abs())).max(1e-12);
                        y = landing;
                        record.passages += 1;
                        record.exploded |= explode;
                        if t >= config.horizon {
                            record.termination = Termination::HorizonReached;
                            break;
                        }
                    }
                    None => {
                        record.termination = Termination::Singularity;
                        break;
                    }
                }
            }
        }
    }

    record.n_samples = series.times.len();
    if record.n_samples < config.min_samples {
        record.exclusion = Some(Exclusion::TooShort);
    } else {
        match correlation(&series.x1, &series.x2) {
            Ok(rho) => record.abs_rho = Some(rho.abs()),
            Err(Error::ZeroVariance) => record.exclusion = Some(Exclusion::ZeroVariance),
            Err(e) => return Err(e),
        }
    }
    Ok((record, series))
}

/// Resolves a passage at `|u| = gap`. Returns the landing state on the
/// opposite sign of `u` and whether the explosive branch was taken, or `None`
/// if the curve has no arc to land on.
fn pass_through_axis(
    curve: &PhaseCurve,
    u: f64,
    v: f64,
    gap: f64,
    policy: &mut dyn BranchPolicy,
) -> Result<Option<([f64; 2], bool)>> {
    let (b, e) = curve.numerator_roots().expect("C1 < 0 has numerator roots");
    let point = if (v - e).abs() < (v - b).abs() {
        BifurcationPoint::E
    } else {
        BifurcationPoint::B
    };
    let target = gap * (1.0 + 1e-6);
    let branch = policy.choose(point, 0.0, if point == BifurcationPoint::E { e } else { b });
    // (root, side of the root to land on, whether the arc ends at v = 0)
    let (root, side, bounded) = match (point, branch) {
        (BifurcationPoint::E, Branch::Continue) => (e, -1.0, true),
        (BifurcationPoint::E, Branch::Explode) => (e, 1.0, false),
        (BifurcationPoint::B, Branch::Continue) => (b, 1.0, true),
        (BifurcationPoint::B, Branch::Explode) => (b, -1.0, false),
        (point, branch) => {
            return Err(Error::UnreachableBranch {
                point: format!("{point:?}"),
                branch: format!("{branch:?}"),
            })
        }
    };
    let landing_v = match (bounded, side > 0.0) {
        (true, false) => curve.inner_upper_v(target),
        (false, true) => curve.upper_branch_v(target),
        (true, true) => curve.inner_lower_v(target),
        (false, false) => curve.lower_branch_v(target),
    };
    let sign = -u.signum();
    let explode = branch == Branch::Explode;
    match landing_v {
        Ok(lv) => Ok(Some(([sign * target, lv], explode))),
        Err(Error::NoBracket { .. }) => {
            if bounded && curve.eval(0.0)? < target {
                return Ok(None);
            }
            // the landing point is closer to the root than one ulp: take the
            // neighbouring double and stay on the curve
            let lv = if side > 0.0 {
                root.next_up()
            } else {
                root.next_down()
            };
            Ok(Some(([sign * curve.eval(lv)?, lv], explode)))
        }
        Err(e) => Err(e),
    }
}

/// Runs the ensemble in parallel; results are in run order.
pub fn run_ensemble(config: &EnsembleConfig) -> Result<EnsembleResult> {
    config.validate()?;
    let outcomes: Vec<(RunRecord, RunSeries)> = (0..config.n_runs)
        .into_par_iter()
        .map(|i| simulate_run(config, i))
        .collect::<Result<_>>()?;
    let correlations: Vec<f64> = outcomes.iter().filter_map(|(r, _)| r.abs_rho).collect();
    if correlations.len() < config.min_valid_runs {
        return Err(Error::DegenerateEnsemble {
            valid: correlations.len(),
            need: config.min_valid_runs,
        });
    }
    let (runs, series): (Vec<_>, Vec<_>) = outcomes.into_iter().unzip();
    Ok(EnsembleResult {
        correlations,
        runs,
        series: if config.keep_series {
            series
        } else {
            Vec::new()
        },
    })
}
