//! Explicit Runge-Kutta integrators for small fixed-size systems.
//!
//! Two schemes share one driver:
//!
//! * Dormand-Prince 5(4) with adaptive steps and the 4th-order continuous
//!   extension for dense output;
//! * classical fixed-step RK4 with cubic Hermite interpolation between steps.
//!
//! Both watch the same [`Guards`]: selected components must stay away from
//! zero (a crossing or a dip below the floor stops the run with
//! [`Stop::Singular`]), the Euclidean norm must stay below a blow-up
//! threshold, and an optional scalar event function stops the run at its
//! first sign change.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Adaptive step-size settings.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct StepControl {
    pub rtol: f64,
    pub atol: f64,
    pub initial_step: Option<f64>,
    pub min_step: f64,
    pub max_step: f64,
    pub max_steps: usize,
}

impl Default for StepControl {
    fn default() -> Self {
        Self::with_tolerance(1e-9)
    }
}

impl StepControl {
    /// Uses `tol` for both the relative and the absolute tolerance.
    pub fn with_tolerance(tol: f64) -> Self {
        Self {
            rtol: tol,
            atol: tol,
            initial_step: None,
            min_step: 1e-14,
            max_step: f64::INFINITY,
            max_steps: 2_000_000,
        }
    }

    pub fn max_step(mut self, h: f64) -> Self {
        self.max_step = h;
        self
    }

    fn validate(&self) -> Result<()> {
        if !(self.rtol > 0.0 && self.atol >= 0.0) {
            return Err(Error::InvalidParameter(format!(
                "tolerances must be positive (rtol = {}, atol = {})",
                self.rtol, self.atol
            )));
        }
        if !(self.max_step > 0.0) || !(self.min_step >= 0.0) {
            return Err(Error::InvalidParameter(
                "step bounds must be positive".into(),
            ));
        }
        Ok(())
    }
}

/// Integration method.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum Method {
    /// Dormand-Prince 5(4) with the given step control.
    Adaptive(StepControl),
    /// Classical fourth-order scheme with a fixed step.
    FixedRk4 { dt: f64 },
}

impl Default for Method {
    fn default() -> Self {
        Method::Adaptive(StepControl::default())
    }
}

/// Why an integration run ended.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Stop {
    Horizon,
    Singular,
    BlowUp,
    Event,
}

/// Which points of the solution are recorded.
#[derive(Clone, Debug, PartialEq)]
pub enum Output {
    /// Every accepted step.
    Steps,
    /// The grid `origin + k * step` restricted to the integration interval.
    Grid { origin: f64, step: f64 },
    /// Explicit sample times, ordered along the integration direction.
    Times(Vec<f64>),
}

impl Output {
    pub fn every(step: f64) -> Self {
        Output::Grid { origin: 0.0, step }
    }
}

/// Termination conditions watched after every accepted step.
#[derive(Clone, Copy)]
pub struct Guards<'a> {
    /// Components that must not reach zero.
    pub singular: &'a [usize],
    pub floor: f64,
    pub blow_up: f64,
    /// Stops the run at the first sign change of this function.
    pub event: Option<&'a dyn Fn(f64, &[f64]) -> f64>,
}

impl Default for Guards<'_> {
    fn default() -> Self {
        Self {
            singular: &[],
            floor: 0.0,
            blow_up: f64::INFINITY,
            event: None,
        }
    }
}

/// Recorded samples plus the state at which integration ended.
#[derive(Clone, Debug)]
pub struct Solution<const N: usize> {
    pub t: Vec<f64>,
    pub y: Vec<[f64; N]>,
    pub stop: Stop,
    pub stop_t: f64,
    pub stop_y: [f64; N],
    pub accepted: usize,
    pub rejected: usize,
}

// Dormand-Prince 5(4) coefficients.
const C2: f64 = 1.0 / 5.0;
const C3: f64 = 3.0 / 10.0;
const C4: f64 = 4.0 / 5.0;
const C5: f64 = 8.0 / 9.0;
const A21: f64 = 1.0 / 5.0;
const A31: f64 = 3.0 / 40.0;
const A32: f64 = 9.0 / 40.0;
const A41: f64 = 44.0 / 45.0;
const A42: f64 = -56.0 / 15.0;
const A43: f64 = 32.0 / 9.0;
const A51: f64 = 19372.0 / 6561.0;
const A52: f64 = -25360.0 / 2187.0;
const A53: f64 = 64448.0 / 6561.0;
const A54: f64 = -212.0 / 729.0;
const A61: f64 = 9017.0 / 3168.0;
const A62: f64 = -355.0 / 33.0;
const A63: f64 = 46732.0 / 5247.0;
const A64: f64 = 49.0 / 176.0;
const A65: f64 = -5103.0 / 18656.0;
const A71: f64 = 35.0 / 384.0;
const A73: f64 = 500.0 / 1113.0;
const A74: f64 = 125.0 / 192.0;
const A75: f64 = -2187.0 / 6784.0;
const A76: f64 = 11.0 / 84.0;
const E1: f64 = 71.0 / 57600.0;
const E3: f64 = -71.0 / 16695.0;
const E4: f64 = 71.0 / 1920.0;
const E5: f64 = -17253.0 / 339200.0;
const E6: f64 = 22.0 / 525.0;
const E7: f64 = -1.0 / 40.0;
const D1: f64 = -12715105075.0 / 11282082432.0;
const D3: f64 = 87487479700.0 / 32700410799.0;
const D4: f64 = -10690763975.0 / 1880347072.0;
const D5: f64 = 701980252875.0 / 199316789632.0;
const D6: f64 = -1453857185.0 / 822651844.0;
const D7: f64 = 69997945.0 / 29380423.0;

enum Interp<const N: usize> {
    Dopri {
        t0: f64,
        h: f64,
        r: [[f64; N]; 5],
    },
    Hermite {
        t0: f64,
        h: f64,
        y0: [f64; N],
        y1: [f64; N],
        f0: [f64; N],
        f1: [f64; N],
    },
}

impl<const N: usize> Interp<N> {
    fn eval(&self, t: f64) -> [f64; N] {
        match self {
            Interp::Dopri { t0, h, r } => {
                let th = (t - t0) / h;
                let th1 = 1.0 - th;
                std::array::from_fn(|i| {
                    r[0][i] + th * (r[1][i] + th1 * (r[2][i] + th * (r[3][i] + th1 * r[4][i])))
                })
            }
            Interp::Hermite {
                t0,
                h,
                y0,
                y1,
                f0,
                f1,
            } => {
                let s = (t - t0) / h;
                let s2 = s * s;
                let s3 = s2 * s;
                let h00 = 2.0 * s3 - 3.0 * s2 + 1.0;
                let h10 = s3 - 2.0 * s2 + s;
                let h01 = -2.0 * s3 + 3.0 * s2;
                let h11 = s3 - s2;
                std::array::from_fn(|i| {
                    h00 * y0[i] + h10 * h * f0[i] + h01 * y1[i] + h11 * h * f1[i]
                })
            }
        }
    }
}

fn norm<const N: usize>(y: &[f64; N]) -> f64 {
    y.iter().map(|v| v * v).sum::<f64>().sqrt()
}

fn axpy<const N: usize>(y: &[f64; N], h: f64, terms: &[(f64, &[f64; N])]) -> [f64; N] {
    std::array::from_fn(|i| y[i] + h * terms.iter().map(|(c, k)| c * k[i]).sum::<f64>())
}

struct Sampler {
    output: Output,
    dir: f64,
    next: usize,
    t0: f64,
}

impl Sampler {
    fn new(output: Output, t0: f64, dir: f64) -> Self {
        let next = match &output {
            Output::Grid { origin, step } => {
                // first grid index at or after t0 along the direction
                let k = ((t0 - origin) / (dir * step)).ceil();
                let mut k = k.max(0.0) as usize;
                if k > 0 && (origin + dir * step * (k - 1) as f64 - t0).abs() <= 1e-12 * step {
                    k -= 1;
                }
                k
            }
            Output::Times(times) => times.iter().take_while(|&&s| dir * (s - t0) < 0.0).count(),
            Output::Steps => 0,
        };
        Self {
            output,
            dir,
            next,
            t0,
        }
    }

    fn peek(&self) -> Option<f64> {
        match &self.output {
            Output::Grid { origin, step } => Some(origin + self.dir * step * self.next as f64),
            Output::Times(times) => times.get(self.next).copied(),
            Output::Steps => None,
        }
    }

    /// Emits samples in `(from, to]` (or `[from, to]` for the first call).
    fn emit<const N: usize>(
        &mut self,
        to: f64,
        interp: Option<&Interp<N>>,
        y_end: &[f64; N],
        t_out: &mut Vec<f64>,
        y_out: &mut Vec<[f64; N]>,
    ) {
        while let Some(s) = self.peek() {
            if self.dir * (s - to) > 1e-13 * (1.0 + to.abs()) {
                break;
            }
            if self.dir * (s - self.t0) < -1e-13 * (1.0 + s.abs()) {
                self.next += 1;
                continue;
            }
            let y = match interp {
                Some(ip) if s != to => ip.eval(s),
                _ => *y_end,
            };
            if t_out.last().is_none_or(|&last| self.dir * (s - last) > 0.0) {
                t_out.push(s);
                y_out.push(y);
            }
            self.next += 1;
        }
    }
}

fn bisect(mut lo: f64, mut hi: f64, mut f: impl FnMut(f64) -> f64) -> (f64, f64) {
    let f_lo = f(lo);
    for _ in 0..80 {
        let mid = 0.5 * (lo + hi);
        if mid == lo || mid == hi {
            break;
        }
        let fm = f(mid);
        if (fm > 0.0) == (f_lo > 0.0) && fm != 0.0 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    (lo, hi)
}

fn check_step<const N: usize>(
    guards: &Guards<'_>,
    interp: &Interp<N>,
    t0: f64,
    y0: &[f64; N],
    t1: f64,
    y1: &[f64; N],
) -> Option<(Stop, f64, [f64; N])> {
    let mut best: Option<(Stop, f64, [f64; N])> = None;
    let dir = (t1 - t0).signum();
    let mut consider = |cand: (Stop, f64, [f64; N])| {
        if best.as_ref().is_none_or(|b| dir * (cand.1 - b.1) < 0.0) {
            best = Some(cand);
        }
    };

    for &i in guards.singular {
        let crossed = y0[i] * y1[i] <= 0.0;
        if crossed || y1[i].abs() < guards.floor {
            // end of the sub-interval where the component is still on its starting side
            let t_side = if crossed {
                bisect(t0, t1, |t| interp.eval(t)[i] * y0[i].signum()).0
            } else {
                t1
            };
            let (lo, _) = bisect(t0, t_side, |t| interp.eval(t)[i].abs() - guards.floor);
            let y = interp.eval(lo);
            consider((Stop::Singular, lo, y));
        }
    }

    if let Some(g) = guards.event {
        let g0 = g(t0, y0);
        let g1 = g(t1, y1);
        if g0 != 0.0 && (g0 * g1 < 0.0 || g1 == 0.0) {
            let (_, hi) = bisect(t0, t1, |t| g(t, &interp.eval(t)));
            let y = if hi == t1 { *y1 } else { interp.eval(hi) };
            consider((Stop::Event, hi, y));
        }
    }

    if norm(y1) >= guards.blow_up || y1.iter().any(|v| !v.is_finite()) {
        consider((Stop::BlowUp, t1, *y1));
    }
    best
}

fn initial_stop<const N: usize>(guards: &Guards<'_>, y0: &[f64; N]) -> Option<Stop> {
    if guards.singular.iter().any(|&i| y0[i].abs() < guards.floor) {
        Some(Stop::Singular)
    } else if norm(y0) >= guards.blow_up {
        Some(Stop::BlowUp)
    } else {
        None
    }
}

/// Integrates `y' = f(t, y)` from `t0` to `t_end` (either direction).
pub fn solve<const N: usize, F>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    method: &Method,
    guards: &Guards<'_>,
    output: Output,
) -> Result<Solution<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    if !t0.is_finite() || !t_end.is_finite() {
        return Err(Error::InvalidParameter(
            "integration bounds must be finite".into(),
        ));
    }
    if y0.iter().any(|v| !v.is_finite()) {
        return Err(Error::InvalidParameter(
            "initial state must be finite".into(),
        ));
    }
    match method {
        Method::Adaptive(ctrl) => {
            ctrl.validate()?;
            dopri5(f, t0, y0, t_end, ctrl, guards, output)
        }
        Method::FixedRk4 { dt } => {
            if !(*dt > 0.0) {
                return Err(Error::InvalidParameter(format!(
                    "fixed step must be positive, got {dt}"
                )));
            }
            rk4(f, t0, y0, t_end, *dt, guards, output)
        }
    }
}

struct Recorder<const N: usize> {
    sampler: Sampler,
    steps: bool,
    t: Vec<f64>,
    y: Vec<[f64; N]>,
}

impl<const N: usize> Recorder<N> {
    fn new(output: Output, t0: f64, y0: &[f64; N], dir: f64) -> Self {
        let steps = matches!(output, Output::Steps);
        let mut rec = Self {
            sampler: Sampler::new(output, t0, dir),
            steps,
            t: Vec::new(),
            y: Vec::new(),
        };
        if steps {
            rec.t.push(t0);
            rec.y.push(*y0);
        } else {
            rec.sampler.emit(t0, None, y0, &mut rec.t, &mut rec.y);
        }
        rec
    }

    fn record(&mut self, t1: f64, y1: &[f64; N], interp: &Interp<N>) {
        if self.steps {
            self.t.push(t1);
            self.y.push(*y1);
        } else {
            self.sampler
                .emit(t1, Some(interp), y1, &mut self.t, &mut self.y);
        }
    }

    fn finish(
        mut self,
        stop: Stop,
        t: f64,
        y: [f64; N],
        dir: f64,
        accepted: usize,
        rejected: usize,
    ) -> Solution<N> {
        let explicit = matches!(self.sampler.output, Output::Times(_));
        if !explicit && self.t.last().is_none_or(|&last| dir * (t - last) > 0.0) {
            self.t.push(t);
            self.y.push(y);
        }
        Solution {
            t: self.t,
            y: self.y,
            stop,
            stop_t: t,
            stop_y: y,
            accepted,
            rejected,
        }
    }
}

fn dopri5<const N: usize, F>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    ctrl: &StepControl,
    guards: &Guards<'_>,
    output: Output,
) -> Result<Solution<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut rec = Recorder::new(output, t0, &y0, dir);
    if let Some(stop) = initial_stop(guards, &y0) {
        return Ok(rec.finish(stop, t0, y0, dir, 0, 0));
    }
    let span = (t_end - t0).abs();
    if span == 0.0 {
        return Ok(rec.finish(Stop::Horizon, t0, y0, dir, 0, 0));
    }

    let scale =
        |a: &[f64; N], b: &[f64; N], i: usize| ctrl.atol + ctrl.rtol * a[i].abs().max(b[i].abs());
    let mut t = t0;
    let mut y = y0;
    let mut k1 = f(t, &y);

    let mut h = match ctrl.initial_step {
        Some(h) => h.abs(),
        None => {
            let d0 = (y
                .iter()
                .enumerate()
                .map(|(i, v)| (v / scale(&y, &y, i)).powi(2))
                .sum::<f64>()
                / N as f64)
                .sqrt();
            let d1 = (k1
                .iter()
                .enumerate()
                .map(|(i, v)| (v / scale(&y, &y, i)).powi(2))
                .sum::<f64>()
                / N as f64)
                .sqrt();
            let h0 = if d0 < 1e-5 || d1 < 1e-5 || !d1.is_finite() {
                1e-6
            } else {
                0.01 * d0 / d1
            };
            let y1 = axpy(&y, dir * h0, &[(1.0, &k1)]);
            let f1 = f(t + dir * h0, &y1);
            let d2 = (f1
                .iter()
                .zip(k1.iter())
                .enumerate()
                .map(|(i, (a, b))| ((a - b) / scale(&y, &y, i)).powi(2))
                .sum::<f64>()
                / N as f64)
                .sqrt()
                / h0;
            let dm = d1.max(d2);
            let h1 = if dm <= 1e-15 || !dm.is_finite() {
                (h0 * 1e-3).max(1e-6)
            } else {
                (0.01 / dm).powf(0.2)
            };
            (100.0 * h0).min(h1)
        }
    };
    h = h.min(span).min(ctrl.max_step);

    let mut accepted = 0usize;
    let mut rejected = 0usize;
    let mut last_rejected = false;

    loop {
        if accepted + rejected >= ctrl.max_steps {
            return Err(Error::TooManySteps(ctrl.max_steps));
        }
        let remaining = (t_end - t) * dir;
        let last = h >= remaining * (1.0 - 1e-12);
        if last {
            h = remaining;
        }
        let hs = dir * h;

        let k2 = f(t + C2 * hs, &axpy(&y, hs, &[(A21, &k1)]));
        let k3 = f(t + C3 * hs, &axpy(&y, hs, &[(A31, &k1), (A32, &k2)]));
        let k4 = f(
            t + C4 * hs,
            &axpy(&y, hs, &[(A41, &k1), (A42, &k2), (A43, &k3)]),
        );
        let k5 = f(
            t + C5 * hs,
            &axpy(&y, hs, &[(A51, &k1), (A52, &k2), (A53, &k3), (A54, &k4)]),
        );
        let k6 = f(
            t + hs,
            &axpy(
                &y,
                hs,
                &[(A61, &k1), (A62, &k2), (A63, &k3), (A64, &k4), (A65, &k5)],
            ),
        );
        let y1 = axpy(
            &y,
            hs,
            &[(A71, &k1), (A73, &k3), (A74, &k4), (A75, &k5), (A76, &k6)],
        );
        let t1 = if last { t_end } else { t + hs };
        let k7 = f(t1, &y1);

        let mut err = 0.0;
        for i in 0..N {
            let e =
                hs * (E1 * k1[i] + E3 * k3[i] + E4 * k4[i] + E5 * k5[i] + E6 * k6[i] + E7 * k7[i]);
            err += (e / scale(&y, &y1, i)).powi(2);
        }
        let err = (err / N as f64).sqrt();

        if !err.is_finite() || err > 1.0 {
            rejected += 1;
            last_rejected = true;
            let fac = if err.is_finite() {
                (0.9 * err.powf(-0.2)).max(0.2)
            } else {
                0.25
            };
            h *= fac;
            if h < ctrl.min_step {
                return Err(Error::StepUnderflow { t, h });
            }
            continue;
        }
        accepted += 1;

        let r = [
            y,
            std::array::from_fn(|i| y1[i] - y[i]),
            std::array::from_fn(|i| hs * k1[i] - (y1[i] - y[i])),
            std::array::from_fn(|i| (y1[i] - y[i]) - hs * k7[i] - (hs * k1[i] - (y1[i] - y[i]))),
            std::array::from_fn(|i| {
                hs * (D1 * k1[i] + D3 * k3[i] + D4 * k4[i] + D5 * k5[i] + D6 * k6[i] + D7 * k7[i])
            }),
        ];
        let interp = Interp::Dopri { t0: t, h: hs, r };

        if let Some((stop, ts, ys)) = check_step(guards, &interp, t, &y, t1, &y1) {
            rec.record(ts, &ys, &interp);
            return Ok(rec.finish(stop, ts, ys, dir, accepted, rejected));
        }
        rec.record(t1, &y1, &interp);

        if last {
            return Ok(rec.finish(Stop::Horizon, t1, y1, dir, accepted, rejected));
        }

        t = t1;
        y = y1;
        k1 = k7;
        let mut fac = (0.9 * err.max(1e-10).powf(-0.2)).clamp(0.2, 10.0);
        if last_rejected {
            fac = fac.min(1.0);
        }
        last_rejected = false;
        h = (h * fac).min(ctrl.max_step);
    }
}

fn rk4<const N: usize, F>(
    f: F,
    t0: f64,
    y0: [f64; N],
    t_end: f64,
    dt: f64,
    guards: &Guards<'_>,
    output: Output,
) -> Result<Solution<N>>
where
    F: Fn(f64, &[f64; N]) -> [f64; N],
{
    let dir = if t_end >= t0 { 1.0 } else { -1.0 };
    let mut rec = Recorder::new(output, t0, &y0, dir);
    if let Some(stop) = initial_stop(guards, &y0) {
        return Ok(rec.finish(stop, t0, y0, dir, 0, 0));
    }
    let span = (t_end - t0).abs();
    let n_steps = (span / dt - 1e-9).ceil().max(0.0) as usize;
    let mut t = t0;
    let mut y = y0;
    let mut f0 = f(t, &y);
    for step in 0..n_steps {
        let t1 = if step + 1 == n_steps {
            t_end
        } else {
            t0 + dir * dt * (step + 1) as f64
        };
        let hs = t1 - t;
        let k1 = f0;
        let k2 = f(t + 0.5 * hs, &axpy(&y, hs, &[(0.5, &k1)]));
        let k3 = f(t + 0.5 * hs, &axpy(&y, hs, &[(0.5, &k2)]));
        let k4 = f(t + hs, &axpy(&y, hs, &[(1.0, &k3)]));
        let y1 = axpy(
            &y,
            hs,
            &[
                (1.0 / 6.0, &k1),
                (1.0 / 3.0, &k2),
                (1.0 / 3.0, &k3),
                (1.0 / 6.0, &k4),
            ],
        );
        let f1 = f(t1, &y1);
        let interp = Interp::Hermite {
            t0: t,
            h: hs,
            y0: y,
            y1,
            f0,
            f1,
        };
        if let Some((stop, ts, ys)) = check_step(guards, &interp, t, &y, t1, &y1) {
            rec.record(ts, &ys, &interp);
            return Ok(rec.finish(stop, ts, ys, dir, step + 1, 0));
        }
        rec.record(t1, &y1, &interp);
        t = t1;
        y = y1;
        f0 = f1;
    }
    Ok(rec.finish(Stop::Horizon, t, y, dir, n_steps, 0))
}

#[cfg(test)]
mod tests {
    use super::*;

    fn exp_growth(_t: f64, y: &[f64; 1]) -> [f64; 1] {
        [y[0]]
    }

    #[test]
    fn dopri_matches_exponential_and_dense_output() {
        let m = Method::Adaptive(StepControl::with_tolerance(1e-10));
        let sol = solve(
            exp_growth,
            0.0,
            [1.0],
            2.0,
            &m,
            &Guards::default(),
            Output::every(0.05),
        )
        .unwrap();
        assert_eq!(sol.stop, Stop::Horizon);
        assert_eq!(sol.t.len(), 41);
        for (t, y) in sol.t.iter().zip(&sol.y) {
            assert!((y[0] - t.exp()).abs() < 1e-8 * t.exp(), "t = {t}");
        }
    }

    #[test]
    fn backward_integration() {
        let m = Method::Adaptive(StepControl::with_tolerance(1e-10));
        let sol = solve(
            exp_growth,
            1.0,
            [1.0f64.exp()],
            0.0,
            &m,
            &Guards::default(),
            Output::Steps,
        )
        .unwrap();
        assert_eq!(*sol.t.last().unwrap(), 0.0);
        assert!((sol.stop_y[0] - 1.0).abs() < 1e-8);
    }

    #[test]
    fn rk4_fourth_order() {
        let errs: Vec<f64> = [0.1, 0.05]
            .iter()
            .map(|&dt| {
                let sol = solve(
                    exp_growth,
                    0.0,
                    [1.0],
                    1.0,
                    &Method::FixedRk4 { dt },
                    &Guards::default(),
                    Output::Steps,
                )
                .unwrap();
                (sol.stop_y[0] - 1.0f64.exp()).abs()
            })
            .collect();
        let order = (errs[0] / errs[1]).log2();
        assert!((order - 4.0).abs() < 0.2, "observed order {order}");
    }

    #[test]
    fn zero_crossing_stops_above_floor() {
        // y = 1 - t crosses zero at t = 1
        let f = |_t: f64, _y: &[f64; 1]| [-1.0];
        let guards = Guards {
            singular: &[0],
            floor: 1e-8,
            ..Default::default()
        };
        for method in [Method::default(), Method::FixedRk4 { dt: 0.3 }] {
            let sol = solve(f, 0.0, [1.0], 3.0, &method, &guards, Output::Steps).unwrap();
            assert_eq!(sol.stop, Stop::Singular);
            assert!(sol.stop_y[0] > 0.0 && sol.stop_y[0] <= 1e-8 * 1.01);
            assert!((sol.stop_t - 1.0).abs() < 1e-7);
        }
    }

    #[test]
    fn event_stops_after_sign_change() {
        let f = |_t: f64, y: &[f64; 2]| [y[1], -y[0]];
        let ev = |_t: f64, y: &[f64]| y[0];
        let guards = Guards {
            event: Some(&ev),
            ..Default::default()
        };
        let sol = solve(
            f,
            0.0,
            [1.0, 0.0],
            10.0,
            &Method::default(),
            &guards,
            Output::Steps,
        )
        .unwrap();
        assert_eq!(sol.stop, Stop::Event);
        assert!((sol.stop_t - std::f64::consts::FRAC_PI_2).abs() < 1e-9);
        assert!(sol.stop_y[0] <= 0.0);
    }

    #[test]
    fn blow_up_detected() {
        let f = |_t: f64, y: &[f64; 1]| [y[0] * y[0]];
        let guards = Guards {
            blow_up: 1e6,
            ..Default::default()
        };
        let sol = solve(
            f,
            0.0,
            [1.0],
            2.0,
            &Method::default(),
            &guards,
            Output::Steps,
        )
        .unwrap();
        assert_eq!(sol.stop, Stop::BlowUp);
        assert!(sol.stop_y[0] >= 1e6);
    }

    #[test]
    fn explicit_times_are_respected() {
        let times = vec![0.25, 0.5, 1.5];
        let sol = solve(
            exp_growth,
            0.0,
            [1.0],
            2.0,
            &Method::default(),
            &Guards::default(),
            Output::Times(times.clone()),
        )
        .unwrap();
        assert_eq!(sol.t, times);
    }
}
