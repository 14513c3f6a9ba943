//! The master equation under an input `z`.
//!
//! On the matched manifold the input enters only through
//! `u''' = u'' / u + beta1 z`. Parameterising by `u` on arcs where `v` keeps
//! its sign, with `w = dv/du`, gives
//!
//! ```text
//! dv/du = w
//! dw/du = (v w (1 - u w) + beta1 u z(u)) / (u v^2)
//! ```
//!
//! For `z(u) = k / u` the forcing term is the constant `k beta1`. The
//! integrated form
//!
//! ```text
//! w = (C1 + v (v + 2) + 2 beta1 I(u)) / (2 u v),   I(u) = integral of u z / v du
//! ```
//!
//! is checked pointwise by [`verify_master4`]. Arcs are joined across `v = 0`
//! by integrating `(u, v, a)` in time.

use std::io::Write;

use serde::{Deserialize, Serialize};

use crate::dynamics::{
    integrate, integrate_with_output, motion_integral, Input, IntegratorSettings, MarketState,
    ModelParams, Trajectory,
};
use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::ode::{self, Guards, Method, Output, StepControl, Stop};
use crate::reduction::reduce;

/// Full four-state integration with the input applied to `x1'`.
///
/// The initial state must be matched; the input may be any [`Input`].
pub fn integrate_forced_full(
    initial: &MarketState,
    z: &Input,
    params: &ModelParams,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    reduce(initial, params)?;
    integrate(initial, z, params, horizon, settings)
}

/// The conserved functional evaluated along a trajectory. Constant without
/// input; under forcing it drifts at the rate `2 beta1 u z`.
pub fn effective_c1(traj: &Trajectory, params: &ModelParams) -> Vec<f64> {
    traj.states
        .iter()
        .map(|s| motion_integral(s, params))
        .collect()
}

/// Why a `u`-parameterised arc ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum PhaseStop {
    SpanEnd,
    /// `|v|` fell to the floor: the arc meets `v = 0`.
    VZero,
    /// `|u|` fell to the floor.
    UZero,
    BlowUp,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcedPhasePoint {
    pub u: f64,
    pub v: f64,
    pub w: f64,
    /// Time along the arc, `dt = du / v`, from 0 at the start.
    pub t: f64,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ForcedPhasePath {
    /// The `k` of `z = k / u`, when the input is of that form.
    pub k: Option<f64>,
    /// `2 u0 v0 w0 - v0 (v0 + 2)`.
    pub c1: f64,
    pub points: Vec<ForcedPhasePoint>,
    pub stop: PhaseStop,
}

impl ForcedPhasePath {
    /// `2 u v w - v (v + 2)` at each point.
    pub fn functional(&self) -> Vec<f64> {
        self.points
            .iter()
            .map(|p| 2.0 * p.u * p.v * p.w - p.v * (p.v + 2.0))
            .collect()
    }

    /// Writes `u,v,w`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "u,v,w")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", fmt_g(p.u), fmt_g(p.v), fmt_g(p.w))?;
        }
        Ok(())
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseSettings {
    pub tolerance: f64,
    /// Number of equal `u` steps at which the path is recorded.
    pub samples: usize,
    /// Floor for `|u|` and `|v|`.
    pub floor: f64,
    pub blow_up: f64,
}

impl Default for PhaseSettings {
    fn default() -> Self {
        Self {
            tolerance: 1e-11,
            samples: 2000,
            floor: 1e-6,
            blow_up: 1e12,
        }
    }
}

/// Integrates the `z = k / u` phase equations from `(u0, v0, w0)` to `u_end`.
pub fn integrate_forced_phase(
    u0: f64,
    v0: f64,
    w0: f64,
    k: f64,
    params: &ModelParams,
    u_end: f64,
    settings: &PhaseSettings,
) -> Result<ForcedPhasePath> {
    let mut path = integrate_forced_phase_with(u0, v0, w0, &|u| k / u, params, u_end, settings)?;
    path.k = Some(k);
    Ok(path)
}

/// As [`integrate_forced_phase`] for an arbitrary `z(u)`.
pub fn integrate_forced_phase_with(
    u0: f64,
    v0: f64,
    w0: f64,
    z: &dyn Fn(f64) -> f64,
    params: &ModelParams,
    u_end: f64,
    settings: &PhaseSettings,
) -> Result<ForcedPhasePath> {
    params.validate()?;
    let floor = settings.floor;
    if !(u0.abs() >= floor) || !(v0.abs() >= floor) {
        return Err(Error::InvalidParameter(format!(
            "need |u0|, |v0| >= {floor:e}, got u0 = {u0}, v0 = {v0}"
        )));
    }
    if ![u0, v0, w0, u_end].iter().all(|x| x.is_finite()) {
        return Err(Error::InvalidParameter(
            "phase start and span must be finite".into(),
        ));
    }
    // the span may not cross u = 0
    let crosses = u_end.signum() != u0.signum() || u_end.abs() < floor;
    let target = if crosses { u0.signum() * floor } else { u_end };
    if target == u0 {
        return Err(Error::InvalidParameter("empty u-span".into()));
    }
    let b1 = params.beta1;
    let f = |u: f64, y: &[f64; 3]| {
        let (v, w) = (y[0], y[1]);
        [
            w,
            (v * w * (1.0 - u * w) + b1 * u * z(u)) / (u * v * v),
            1.0 / v,
        ]
    };
    let guards = Guards {
        singular: &[0],
        floor,
        blow_up: settings.blow_up,
        event: None,
    };
    let method = Method::Adaptive(StepControl::with_tolerance(settings.tolerance));
    let step = (target - u0).abs() / settings.samples.max(1) as f64;
    let sol = ode::solve(
        f,
        u0,
        [v0, w0, 0.0],
        target,
        &method,
        &guards,
        Output::Grid { origin: u0, step },
    )?;
    let stop = match sol.stop {
        Stop::Horizon if crosses => PhaseStop::UZero,
        Stop::Horizon | Stop::Event => PhaseStop::SpanEnd,
        Stop::Singular => PhaseStop::VZero,
        Stop::BlowUp => PhaseStop::BlowUp,
    };
    let points = sol
        .t
        .iter()
        .zip(&sol.y)
        .map(|(&u, y)| ForcedPhasePoint {
            u,
            v: y[0],
            w: y[1],
            t: y[2],
        })
        .collect();
    Ok(ForcedPhasePath {
        k: None,
        c1: 2.0 * u0 * v0 * w0 - v0 * (v0 + 2.0),
        points,
        stop,
    })
}

/// Pointwise residual of the integrated form against a stored path.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct ResidualReport {
    /// `(u, residual)`.
    pub points: Vec<(f64, f64)>,
    pub max_abs: f64,
}

impl ResidualReport {
    /// Writes `u,residual`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "u,residual")?;
        for (u, r) in &self.points {
            writeln!(w, "{},{}", fmt_g(*u), fmt_g(*r))?;
        }
        Ok(())
    }
}

/// Residual of `w = (C1 + v(v+2) + 2 beta1 I(u)) / (2uv)` along `path`, with
/// `I` accumulated by the trapezoid rule over the stored points.
pub fn verify_master4(
    path: &ForcedPhasePath,
    z: &dyn Fn(f64) -> f64,
    params: &ModelParams,
) -> Result<ResidualReport> {
    let pts = &path.points;
    if pts.len() < 2 {
        return Err(Error::InsufficientSamples {
            need: 2,
            got: pts.len(),
        });
    }
    let integrand = |p: &ForcedPhasePoint| -> Result<f64> {
        if p.v.abs() < 1e-12 {
            return Err(Error::Quadrature { u: p.u });
        }
        Ok(p.u * z(p.u) / p.v)
    };
    let mut integral = 0.0;
    let mut prev = integrand(&pts[0])?;
    let mut out = Vec::with_capacity(pts.len());
    let mut max_abs: f64 = 0.0;
    for (i, p) in pts.iter().enumerate() {
        if i > 0 {
            let cur = integrand(p)?;
            integral += 0.5 * (prev + cur) * (p.u - pts[i - 1].u);
            prev = cur;
        }
        let w = (path.c1 + p.v * (p.v + 2.0) + 2.0 * params.beta1 * integral) / (2.0 * p.u * p.v);
        let r = p.w - w;
        max_abs = max_abs.max(r.abs());
        out.push((p.u, r));
    }
    Ok(ResidualReport {
        points: out,
        max_abs,
    })
}

/// Largest disagreement between a `u`-path and the time integration of the
/// full system with `z(t) = k / x4(t)`, compared at the path's times.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CrossCheck {
    pub max_x1_error: f64,
    pub max_x2_error: f64,
    pub compared: usize,
}

pub fn cross_check(
    path: &ForcedPhasePath,
    k: f64,
    params: &ModelParams,
    tolerance: f64,
) -> Result<CrossCheck> {
    let pts = &path.points;
    let first = pts
        .first()
        .ok_or(Error::InsufficientSamples { need: 2, got: 0 })?;
    if pts.windows(2).any(|w| !(w[1].t > w[0].t)) {
        return Err(Error::InvalidParameter(
            "path must run forward in time (u moving in the direction of v)".into(),
        ));
    }
    let (b1, b2) = (params.beta1, params.beta2);
    let state = MarketState::new(
        first.v * first.w / b1,
        first.v / b2,
        params.slope_ratio() * first.u,
        first.u,
    );
    let times: Vec<f64> = pts.iter().map(|p| p.t).collect();
    let horizon = *times.last().unwrap();
    let settings = IntegratorSettings::adaptive(tolerance);
    let traj = integrate_with_output(
        &state,
        &Input::InverseU { k },
        params,
        horizon,
        &settings,
        Output::Times(times),
    )?;
    let mut check = CrossCheck {
        max_x1_error: 0.0,
        max_x2_error: 0.0,
        compared: 0,
    };
    for (p, s) in pts.iter().zip(&traj.states) {
        check.max_x1_error = check.max_x1_error.max((p.v * p.w / b1 - s.x1).abs());
        check.max_x2_error = check.max_x2_error.max((p.v / b2 - s.x2).abs());
        check.compared += 1;
    }
    Ok(check)
}

/// Follows `z = k / u` through successive arcs, bridging each `v = 0`
/// crossing by integrating `(u, v, a)` in time until `|v|` reaches
/// `bridge_level` on the other side. Stops at `|u| = u_limit`, `u -> 0`,
/// blow-up, or after `max_arcs` arcs.
pub fn trace_forced_arcs(
    u0: f64,
    v0: f64,
    w0: f64,
    k: f64,
    params: &ModelParams,
    u_limit: f64,
    max_arcs: usize,
    settings: &PhaseSettings,
) -> Result<Vec<ForcedPhasePath>> {
    let bridge_level = 1e3 * settings.floor;
    let mut arcs = Vec::new();
    let (mut u, mut v, mut w) = (u0, v0, w0);
    let mut t0 = 0.0;
    for _ in 0..max_arcs {
        // move with the flow: u grows in the direction of v
        let u_end = if u.signum() == v.signum() {
            u.signum() * u_limit
        } else {
            0.0
        };
        if u.abs() >= u_limit && u_end != 0.0 {
            break;
        }
        let mut arc = integrate_forced_phase(u, v, w, k, params, u_end, settings)?;
        for p in &mut arc.points {
            p.t += t0;
        }
        let last = *arc.points.last().expect("arcs have points");
        let stop = arc.stop;
        arcs.push(arc);
        if stop != PhaseStop::VZero {
            break;
        }
        match bridge(last, k, params, bridge_level, settings)? {
            Some((t, [bu, bv, ba])) => {
                (u, v, w) = (bu, bv, ba / bv);
                t0 = t;
            }
            None => break,
        }
    }
    Ok(arcs)
}

fn bridge(
    from: ForcedPhasePoint,
    k: f64,
    params: &ModelParams,
    level: f64,
    settings: &PhaseSettings,
) -> Result<Option<(f64, [f64; 3])>> {
    let b1 = params.beta1;
    let f = |_t: f64, y: &[f64; 3]| [y[1], y[2], y[2] / y[0] + b1 * k / y[0]];
    let side = from.v.signum();
    let crossed = move |_: f64, y: &[f64]| side * y[1] + level;
    let guards = Guards {
        singular: &[0],
        floor: settings.floor,
        blow_up: settings.blow_up,
        event: Some(&crossed),
    };
    let method = Method::Adaptive(StepControl::with_tolerance(settings.tolerance));
    // v'' = a is of order one near the crossing, so the bridge is short
    let span = 10.0 * (level + from.v.abs()).sqrt().max(1.0);
    let sol = ode::solve(
        f,
        from.t,
        [from.u, from.v, from.v * from.w],
        from.t + span,
        &method,
        &guards,
        Output::Times(Vec::new()),
    )?;
    Ok((sol.stop == Stop::Event).then_some((sol.stop_t, sol.stop_y)))
}
