//! The four-state price/volume model and its time integration.
//!
//! State `(x1, x2, x3, x4)` is price deviation, volume innovation and the two
//! coupling slopes:
//!
//! ```text
//! x1' = x1 / x4 + z
//! x2' = x3 * x1 / x4
//! x3' = beta1 * x2
//! x4' = beta2 * x2
//! ```
//!
//! `z` is the exogenous input (the specialist's intervention). The right-hand
//! side is singular at `x4 = 0`; integration stops with
//! [`Termination::Singularity`] when `|x4|` drops below the configured floor.

use std::io::Write;
use std::sync::Arc;

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::ode::{self, Guards, Method, Output, Stop};

/// Default lower bound on `|x4|`.
pub const SINGULARITY_FLOOR: f64 = 1e-8;
/// Default bound on the state norm.
pub const BLOW_UP_THRESHOLD: f64 = 1e12;

#[derive(Clone, Copy, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct MarketState {
    /// Price deviation.
    pub x1: f64,
    /// Volume innovation.
    pub x2: f64,
    /// Volume-price coupling slope.
    pub x3: f64,
    /// Price-momentum slope.
    pub x4: f64,
}

impl MarketState {
    pub const fn new(x1: f64, x2: f64, x3: f64, x4: f64) -> Self {
        Self { x1, x2, x3, x4 }
    }

    pub fn to_array(self) -> [f64; 4] {
        [self.x1, self.x2, self.x3, self.x4]
    }

    pub fn from_array(a: [f64; 4]) -> Self {
        Self::new(a[0], a[1], a[2], a[3])
    }

    pub fn norm(&self) -> f64 {
        self.to_array().iter().map(|v| v * v).sum::<f64>().sqrt()
    }
}

/// Model coefficients and the constants of the specialist's control problem.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    #[serde(default = "one")]
    pub beta1: f64,
    #[serde(default = "one")]
    pub beta2: f64,
    /// Volume coefficient of the profit rate.
    #[serde(default = "one")]
    pub c1: f64,
    /// Trend penalty of the profit rate.
    #[serde(default = "one")]
    pub c2: f64,
    /// Cap on the integrated squared price increments.
    #[serde(rename = "U", default = "one")]
    pub regularity_bound: f64,
    /// Worst acceptable profit rate.
    #[serde(rename = "L", default)]
    pub loss_bound: f64,
}

fn one() -> f64 {
    1.0
}

impl Default for ModelParams {
    fn default() -> Self {
        Self::new(1.0, 1.0)
    }
}

impl ModelParams {
    /// Dynamics coefficients with unit control constants.
    pub fn new(beta1: f64, beta2: f64) -> Self {
        Self {
            beta1,
            beta2,
            c1: 1.0,
            c2: 1.0,
            regularity_bound: 1.0,
            loss_bound: 0.0,
        }
    }

    pub fn with_control(
        mut self,
        c1: f64,
        c2: f64,
        regularity_bound: f64,
        loss_bound: f64,
    ) -> Self {
        self.c1 = c1;
        self.c2 = c2;
        self.regularity_bound = regularity_bound;
        self.loss_bound = loss_bound;
        self
    }

    /// `beta1 / beta2`, the slope ratio preserved on the matched manifold.
    pub fn slope_ratio(&self) -> f64 {
        self.beta1 / self.beta2
    }

    pub fn validate(&self) -> Result<()> {
        let all = [
            self.beta1,
            self.beta2,
            self.c1,
            self.c2,
            self.regularity_bound,
            self.loss_bound,
        ];
        if all.iter().any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "model parameters must be finite".into(),
            ));
        }
        if self.beta2 == 0.0 {
            return Err(Error::InvalidParameter("beta2 must be nonzero".into()));
        }
        if self.c1 <= 0.0 || self.c2 <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "c1 and c2 must be positive (got {}, {})",
                self.c1, self.c2
            )));
        }
        if self.regularity_bound <= 0.0 {
            return Err(Error::InvalidParameter(format!(
                "U must be positive (got {})",
                self.regularity_bound
            )));
        }
        Ok(())
    }
}

/// Linearly interpolated input samples. Outside the sampled range the input
/// is held at the nearest end value.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct SampledPath {
    times: Vec<f64>,
    values: Vec<f64>,
}

impl SampledPath {
    pub fn new(times: Vec<f64>, values: Vec<f64>) -> Result<Self> {
        if times.len() != values.len() {
            return Err(Error::LengthMismatch(times.len(), values.len()));
        }
        if times.is_empty() {
            return Err(Error::InsufficientSamples { need: 1, got: 0 });
        }
        if times.iter().chain(&values).any(|v| !v.is_finite()) {
            return Err(Error::InvalidParameter(
                "sampled path must be finite".into(),
            ));
        }
        if times.windows(2).any(|w| w[1] <= w[0]) {
            return Err(Error::InvalidParameter(
                "sample times must be strictly increasing".into(),
            ));
        }
        Ok(Self { times, values })
    }

    pub fn times(&self) -> &[f64] {
        &self.times
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn first_time(&self) -> f64 {
        self.times[0]
    }

    pub fn last_time(&self) -> f64 {
        *self.times.last().unwrap()
    }

    pub fn value_at(&self, t: f64) -> f64 {
        let n = self.times.len();
        if t <= self.times[0] {
            return self.values[0];
        }
        if t >= self.times[n - 1] {
            return self.values[n - 1];
        }
        let j = self.times.partition_point(|&s| s <= t);
        let (t0, t1) = (self.times[j - 1], self.times[j]);
        let (z0, z1) = (self.values[j - 1], self.values[j]);
        z0 + (z1 - z0) * (t - t0) / (t1 - t0)
    }
}

/// Exogenous input `z` applied to the price equation.
#[derive(Clone)]
pub enum Input {
    Zero,
    /// `z = f(t)`.
    OfTime(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// State feedback `z = f(u)` with `u = x4`.
    OfU(Arc<dyn Fn(f64) -> f64 + Send + Sync>),
    /// The feedback family `z = k / u`.
    InverseU {
        k: f64,
    },
    Sampled(SampledPath),
}

/// Which representation an [`Input`] uses.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum InputKind {
    TimeFunction,
    UFunction,
    SampledPath,
}

impl std::fmt::Debug for Input {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        match self {
            Input::Zero => write!(f, "Zero"),
            Input::OfTime(_) => write!(f, "OfTime(..)"),
            Input::OfU(_) => write!(f, "OfU(..)"),
            Input::InverseU { k } => write!(f, "InverseU {{ k: {k} }}"),
            Input::Sampled(p) => write!(f, "Sampled({} samples)", p.times.len()),
        }
    }
}

impl Input {
    pub fn of_time(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Input::OfTime(Arc::new(f))
    }

    pub fn of_u(f: impl Fn(f64) -> f64 + Send + Sync + 'static) -> Self {
        Input::OfU(Arc::new(f))
    }

    pub fn kind(&self) -> InputKind {
        match self {
            Input::Zero | Input::OfTime(_) => InputKind::TimeFunction,
            Input::OfU(_) | Input::InverseU { .. } => InputKind::UFunction,
            Input::Sampled(_) => InputKind::SampledPath,
        }
    }

    /// The family parameter `k` for `z = k / u`.
    pub fn k(&self) -> Option<f64> {
        match self {
            Input::InverseU { k } => Some(*k),
            Input::Zero => Some(0.0),
            _ => None,
        }
    }

    pub fn is_zero(&self) -> bool {
        matches!(self, Input::Zero) || matches!(self, Input::InverseU { k } if *k == 0.0)
    }

    /// Value of `z` at time `t` in state `x4`.
    pub fn eval(&self, t: f64, x4: f64) -> f64 {
        match self {
            Input::Zero => 0.0,
            Input::OfTime(f) => f(t),
            Input::OfU(f) => f(x4),
            Input::InverseU { k } => k / x4,
            Input::Sampled(p) => p.value_at(t),
        }
    }

    /// Whether `[t0, t1]` leaves the sampled range.
    pub fn extrapolates(&self, t0: f64, t1: f64) -> bool {
        match self {
            Input::Sampled(p) => t0 < p.first_time() || t1 > p.last_time(),
            _ => false,
        }
    }
}

/// Singularity floor and blow-up threshold.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct Limits {
    pub singular_floor: f64,
    pub blow_up: f64,
}

impl Default for Limits {
    fn default() -> Self {
        Self {
            singular_floor: SINGULARITY_FLOOR,
            blow_up: BLOW_UP_THRESHOLD,
        }
    }
}

/// Everything that controls one time integration.
#[derive(Clone, Debug, Default, PartialEq, Serialize, Deserialize)]
pub struct IntegratorSettings {
    pub method: Method,
    pub limits: Limits,
    /// Output spacing; `None` records every accepted step.
    pub sample_dt: Option<f64>,
}

impl IntegratorSettings {
    pub fn adaptive(tol: f64) -> Self {
        Self {
            method: Method::Adaptive(ode::StepControl::with_tolerance(tol)),
            ..Self::default()
        }
    }

    pub fn fixed_rk4(dt: f64) -> Self {
        Self {
            method: Method::FixedRk4 { dt },
            ..Self::default()
        }
    }

    pub fn sampled(mut self, dt: f64) -> Self {
        self.sample_dt = Some(dt);
        self
    }

    pub(crate) fn output(&self) -> Output {
        match self.sample_dt {
            Some(dt) => Output::every(dt),
            None => Output::Steps,
        }
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Termination {
    HorizonReached,
    Singularity,
    BlowUp,
}

impl Termination {
    pub(crate) fn from_stop(stop: Stop) -> Self {
        match stop {
            Stop::Horizon | Stop::Event => Termination::HorizonReached,
            Stop::Singular => Termination::Singularity,
            Stop::BlowUp => Termination::BlowUp,
        }
    }

    pub fn label(&self) -> &'static str {
        match self {
            Termination::HorizonReached => "horizon_reached",
            Termination::Singularity => "singularity",
            Termination::BlowUp => "blow_up",
        }
    }
}

/// Sampled solution of the four-state system.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct Trajectory {
    pub times: Vec<f64>,
    pub states: Vec<MarketState>,
    /// `z` at each sample; `None` for homogeneous runs.
    pub inputs: Option<Vec<f64>>,
    pub termination: Termination,
    /// Set when a sampled input was held past its last sample.
    pub input_extrapolated: bool,
}

impl Trajectory {
    pub fn len(&self) -> usize {
        self.times.len()
    }

    pub fn is_empty(&self) -> bool {
        self.times.is_empty()
    }

    pub fn last_state(&self) -> MarketState {
        *self
            .states
            .last()
            .expect("trajectory has at least one sample")
    }

    /// Right-hand side evaluated at each sample.
    pub fn derivatives(&self, params: &ModelParams) -> Result<Vec<[f64; 4]>> {
        self.states
            .iter()
            .enumerate()
            .map(|(i, s)| {
                let z = self.inputs.as_ref().map_or(0.0, |zs| zs[i]);
                rhs(s, z, params, 0.0)
            })
            .collect()
    }

    /// Writes `t,x1,x2,x3,x4,z`.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "t,x1,x2,x3,x4,z")?;
        for (i, (t, s)) in self.times.iter().zip(&self.states).enumerate() {
            let z = self.inputs.as_ref().map_or(0.0, |zs| zs[i]);
            writeln!(
                w,
                "{},{},{},{},{},{}",
                fmt_g(*t),
                fmt_g(s.x1),
                fmt_g(s.x2),
                fmt_g(s.x3),
                fmt_g(s.x4),
                fmt_g(z)
            )?;
        }
        Ok(())
    }

    /// JSON document with the run metadata and the samples.
    pub fn to_document(
        &self,
        params: &ModelParams,
        settings: &IntegratorSettings,
    ) -> TrajectoryDocument {
        TrajectoryDocument {
            params: *params,
            settings: settings.clone(),
            termination: self.termination,
            input_extrapolated: self.input_extrapolated,
            samples: self.len(),
            trajectory: self.clone(),
        }
    }
}

#[derive(Clone, Debug, Serialize, Deserialize)]
pub struct TrajectoryDocument {
    pub params: ModelParams,
    pub settings: IntegratorSettings,
    pub termination: Termination,
    pub input_extrapolated: bool,
    pub samples: usize,
    pub trajectory: Trajectory,
}

/// Time derivative of the state. Fails when `|x4|` is below `floor`.
pub fn rhs(state: &MarketState, z: f64, params: &ModelParams, floor: f64) -> Result<[f64; 4]> {
    if !(state.x4.abs() >= floor) || state.x4 == 0.0 {
        return Err(Error::Singularity {
            component: "x4",
            value: state.x4.abs(),
            floor,
        });
    }
    Ok(raw_rhs(&state.to_array(), z, params))
}

#[inline]
pub(crate) fn raw_rhs(x: &[f64; 4], z: f64, p: &ModelParams) -> [f64; 4] {
    let m = x[0] / x[3];
    [m + z, x[2] * m, p.beta1 * x[1], p.beta2 * x[1]]
}

/// Initial state on the matched manifold `beta2 * x3 = beta1 * x4`.
pub fn matched_initial_state(
    x1: f64,
    x2: f64,
    x4: f64,
    params: &ModelParams,
) -> Result<MarketState> {
    params.validate()?;
    if x4 == 0.0 || !x4.is_finite() {
        return Err(Error::InvalidParameter(format!(
            "x4(0) must be finite and nonzero, got {x4}"
        )));
    }
    Ok(MarketState::new(x1, x2, params.slope_ratio() * x4, x4))
}

/// `2 x4 x4'' - x4' (x4' + 2)` with `x4' = beta2 x2` and `x4'' = beta2 x2'`
/// taken from the right-hand side.
pub fn motion_integral(state: &MarketState, params: &ModelParams) -> f64 {
    let d = raw_rhs(&state.to_array(), 0.0, params);
    let v = d[3];
    let a = params.beta2 * d[1];
    2.0 * state.x4 * a - v * (v + 2.0)
}

/// Integrates the four-state system up to `horizon`.
pub fn integrate(
    initial: &MarketState,
    input: &Input,
    params: &ModelParams,
    horizon: f64,
    settings: &IntegratorSettings,
) -> Result<Trajectory> {
    integrate_with_output(initial, input, params, horizon, settings, settings.output())
}

pub(crate) fn integrate_with_output(
    initial: &MarketState,
    input: &Input,
    params: &ModelParams,
    horizon: f64,
    settings: &IntegratorSettings,
    output: Output,
) -> Result<Trajectory> {
    params.validate()?;
    if !(horizon > 0.0) {
        return Err(Error::InvalidParameter(format!(
            "horizon must be positive, got {horizon}"
        )));
    }
    let floor = settings.limits.singular_floor;
    if !(initial.x4.abs() >= floor) {
        return Err(Error::Singularity {
            component: "x4",
            value: initial.x4.abs(),
            floor,
        });
    }
    let p = *params;
    let f = |t: f64, x: &[f64; 4]| raw_rhs(x, input.eval(t, x[3]), &p);
    let guards = Guards {
        singular: &[3],
        floor,
        blow_up: settings.limits.blow_up,
        event: None,
    };
    let sol = ode::solve(
        f,
        0.0,
        initial.to_array(),
        horizon,
        &settings.method,
        &guards,
        output,
    )?;
    let inputs = (!input.is_zero()).then(|| {
        sol.t
            .iter()
            .zip(&sol.y)
            .map(|(t, x)| input.eval(*t, x[3]))
            .collect::<Vec<_>>()
    });
    Ok(Trajectory {
        input_extrapolated: input.extrapolates(0.0, sol.stop_t),
        times: sol.t,
        states: sol.y.into_iter().map(MarketState::from_array).collect(),
        inputs,
        termination: Termination::from_stop(sol.stop),
    })
}
