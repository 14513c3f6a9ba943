//! Reduction of the homogeneous dynamics to a single second-order equation.
//!
//! On the matched manifold `x3 / x4 = beta1 / beta2` the slope `u = x4`
//! carries the whole state: `v = u' = beta2 x2` and `a = u'' = beta1 x1`.
//! With no input, `2 u a - v (v + 2)` is an integral of motion `C1`, so
//!
//! ```text
//! u'' = (C1 + u' (u' + 2)) / (2 u)
//! ```
//!
//! and price and volume are recovered as `x1 = a / beta1`, `x2 = v / beta2`.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{IntegratorSettings, MarketState, ModelParams, Termination};
use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::ode::{self, Guards, Output, Solution};

/// Relative tolerance of the matched-manifold check in [`reduce`].
pub const MANIFOLD_TOLERANCE: f64 = 1e-8;

/// `(u, v, a) = (x4, x4', x4'')`.
#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct ReducedState {
    pub u: f64,
    pub v: f64,
    pub a: f64,
}

impl ReducedState {
    pub fn new(u: f64, v: f64, a: f64) -> Self {
        Self { u, v, a }
    }

    pub fn motion_integral(&self) -> MotionIntegral {
        MotionIntegral(conserved_functional(self.u, self.v, self.a))
    }
}

/// The value `C1` of the conserved functional.
#[derive(Clone, Copy, Debug, PartialEq, PartialOrd, Serialize, Deserialize)]
pub struct MotionIntegral(pub f64);

/// `2 u a - v (v + 2)`.
pub fn conserved_functional(u: f64, v: f64, a: f64) -> f64 {
    2.0 * u * a - v * (v + 2.0)
}

/// `u''` from the master equation.
#[inline]
pub fn master_acceleration(u: f64, v: f64, c1: f64) -> f64 {
    (c1 + v * (v + 2.0)) / (2.0 * u)
}

/// Maps a matched state to `(u, v, a)`.
pub fn reduce(state: &MarketState, params: &ModelParams) -> Result<ReducedState> {
    params.validate()?;
    let expected = params.slope_ratio();
    let ratio = state.x3 / state.x4;
    if !((ratio - expected).abs() <= MANIFOLD_TOLERANCE * expected.abs().max(1.0)) {
        return Err(Error::OffManifold { ratio, expected });
    }
    Ok(ReducedState::new(
        state.x4,
        params.beta2 * state.x2,
        params.beta1 * state.x1,
    ))
}

/// Price and volume `(x1, x2)` from a reduced state.
pub fn recover(reduced: &ReducedState, params: &ModelParams) -> Result<(f64, f64)> {
    if params.beta1 == 0.0 || params.beta2 == 0.0 {
        return Err(Error::InvalidParameter(
            "recovery needs nonzero beta1 and beta2".into(),
        ));
    }
    Ok((reduced.a / params.beta1, reduced.v / params.beta2))
}

/// Full matched state from a reduced one.
pub fn lift(reduced: &ReducedState, params: &ModelParams) -> Result<MarketState> {
    let (x1, x2) = recover(reduced, params)?;
    Ok(MarketState::new(
        x1,
        x2,
        params.slope_ratio() * reduced.u,
        reduced.u,
    ))
}

/// Sampled solution of the master equation.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ReducedTrajectory {
    pub c1: f64,
    pub times: Vec<f64>,
    pub points: Vec<ReducedState>,
    pub termination: Termination,
}

impl ReducedTrajectory {
    pub(crate) fn from_solution(c1: f64, sol: Solution<2>) -> Self {
        let points = sol
            .y
            .iter()
            .map(|y| ReducedState::new(y[0], y[1], master_acceleration(y[0], y[1], c1)))
            .collect();
        Self {
            c1,
            times: sol.t,
            points,
            termination: Termination::from_stop(sol.stop),
        }
    }

    /// Largest `|C(t) - C1|` over the samples.
    pub fn max_drift(&self) -> f64 {
        self.points
            .iter()
            .map(|p| (p.motion_integral().0 - self.c1).abs())
            .fold(0.0, f64::max)
    }

    /// Writes `t,u,v,a`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,u,v,a")?;
        for (t, p) in self.times.iter().zip(&self.points) {
            writeln!(
                w,
                "{},{},{},{}",
                fmt_g(*t),
                fmt_g(p.u),
                fmt_g(p.v),
                fmt_g(p.a)
            )?;
        }
        Ok(())
    }
}

/// Integrates `u' = v`, `v' = (C1 + v (v + 2)) / (2 u)` from `(u0, v0)`.
///
/// `a` is reported from the master equation, never by differencing. The run
/// stops with [`Termination::Singularity`] when `|u|` falls below the floor.
pub fn integrate_reduced(
    u0: f64,
    v0: f64,
    c1: f64,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<ReducedTrajectory> {
    let sol = solve_reduced(
        0.0,
        [u0, v0],
        c1,
        horizon,
        settings,
        settings.output(),
        None,
    )?;
    Ok(ReducedTrajectory::from_solution(c1, sol))
}

pub(crate) fn solve_reduced(
    t0: f64,
    y0: [f64; 2],
    c1: f64,
    t_end: f64,
    settings: &IntegratorSettings,
    output: Output,
    event: Option<&dyn Fn(f64, &[f64]) -> f64>,
) -> Result<Solution<2>> {
    if !(t_end > t0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {}",
            t_end - t0
        )));
    }
    if !c1.is_finite() {
        return Err(Error::InvalidParameter("C1 must be finite".into()));
    }
    let floor = settings.limits.singular_floor;
    if !(y0[0].abs() >= floor) {
        return Err(Error::Singularity {
            component: "u",
            value: y0[0].abs(),
            floor,
        });
    }
    let f = |_t: f64, y: &[f64; 2]| [y[1], master_acceleration(y[0], y[1], c1)];
    let guards = Guards {
        singular: &[0],
        floor,
        blow_up: settings.limits.blow_up,
        event,
    };
    ode::solve(f, t0, y0, t_end, &settings.method, &guards, output)
}
