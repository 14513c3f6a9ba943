//! Closed-form phase portraits of the master equation.
//!
//! Writing `v = u'` turns the homogeneous master equation into the separable
//! slope field
//!
//! ```text
//! dv/du = (C1 + v (v + 2)) / (2 u v)
//! ```
//!
//! whose solutions are the curves `|u| = F(v)`:
//!
//! | regime        | `F(v)` up to the normalisation constant                         |
//! |---------------|-----------------------------------------------------------------|
//! | `C1 > 1`      | `(v^2 + 2v + C1) exp(-2/sqrt(C1-1) * atan((v+1)/sqrt(C1-1)))`   |
//! | `C1 = 1`      | `(v+1)^2 exp(-2v/(v+1))`                                        |
//! | `C1 < 1, != 0`| `l+^(1+C5) * l-^(1-C5)`, `l± = |v + 1 ± 1/C5|`, `C5 = (1-C1)^-1/2` |
//! | `C1 = 0`      | `(v+2)^2`                                                       |
//!
//! The constant is fixed by requiring the curve to pass through `(1, v0)`.
//! The same constant is used on every interval between the numerator roots
//! `v = -1 ± sqrt(1 - C1)`, which is the principal-value continuation of the
//! logarithmic antiderivative.
//!
//! The line `v = -1 + sqrt(1 - C1)` is where the `l-` factor vanishes: the
//! curve diverges there for `0 < C1 < 1` and touches the `u = 0` axis
//! vertically for `C1 < 0` (the bifurcation point E). The other root
//! `-1 - sqrt(1 - C1)` is a tangency with the `u = 0` axis (point B).

use std::io::Write;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::format::fmt_g;
use crate::roots::brent;

/// Half-width of the band around a divergent line where evaluation fails.
pub const POLE_GUARD: f64 = 1e-9;
/// Tolerance used to classify the exact regimes `C1 = 0` and `C1 = 1`.
pub const REGIME_EPS: f64 = 1e-12;

#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
pub enum Regime {
    #[serde(rename = "c1_gt_1")]
    AboveOne,
    #[serde(rename = "c1_eq_1")]
    One,
    /// `C1 < 1` and `C1 != 0`.
    #[serde(rename = "c1_lt_1")]
    BelowOne,
    #[serde(rename = "c1_eq_0")]
    Zero,
}

impl Regime {
    pub fn classify(c1: f64) -> Self {
        if (c1 - 1.0).abs() <= REGIME_EPS {
            Regime::One
        } else if c1.abs() <= REGIME_EPS {
            Regime::Zero
        } else if c1 > 1.0 {
            Regime::AboveOne
        } else {
            Regime::BelowOne
        }
    }
}

/// How the curve behaves on the line `l- = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum SingularKind {
    /// `F -> infinity` (`0 < C1 < 1`).
    Divergent,
    /// `F -> 0` with infinite slope: the curve meets `u = 0` (`C1 < 0`).
    AxisContact,
}

/// One member of the `C1` family, normalised through `(u_ref, v0)`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseCurve {
    pub c1: f64,
    pub v0: f64,
    pub regime: Regime,
    /// The applicable `C2`, `C3` or `C4`.
    pub norm_constant: f64,
    /// `(1 - C1)^(-1/2)` when `C1 <= 1`.
    pub c5: Option<f64>,
    log_norm: f64,
}

impl PhaseCurve {
    /// The curve through `(u, v) = (1, v0)`.
    pub fn new(c1: f64, v0: f64) -> Result<Self> {
        Self::through(c1, 1.0, v0)
    }

    /// The curve through `(±u, v)`.
    pub fn through(c1: f64, u: f64, v: f64) -> Result<Self> {
        if !c1.is_finite() || !u.is_finite() || !v.is_finite() {
            return Err(Error::InvalidParameter(
                "curve parameters must be finite".into(),
            ));
        }
        if u == 0.0 {
            return Err(Error::InvalidParameter(
                "normalisation point must have u != 0".into(),
            ));
        }
        let regime = Regime::classify(c1);
        let c5 = (c1 <= 1.0 + REGIME_EPS).then(|| match regime {
            Regime::One => f64::INFINITY,
            _ => 1.0 / (1.0 - c1).sqrt(),
        });
        let mut curve = Self {
            c1,
            v0: v,
            regime,
            norm_constant: 1.0,
            c5,
            log_norm: 0.0,
        };
        let g = curve.log_shape(v);
        if !g.is_finite() {
            return Err(Error::InvalidParameter(format!(
                "v0 = {v} lies on a singular line of the C1 = {c1} curve"
            )));
        }
        curve.log_norm = u.abs().ln() - g;
        curve.norm_constant = curve.log_norm.exp();
        Ok(curve)
    }

    /// `sqrt(1 - C1)` for `C1 <= 1`.
    fn root_offset(&self) -> Option<f64> {
        match self.regime {
            Regime::AboveOne => None,
            Regime::One => Some(0.0),
            Regime::Zero => Some(1.0),
            Regime::BelowOne => Some((1.0 - self.c1).sqrt()),
        }
    }

    /// Numerator roots `(-1 - sqrt(1-C1), -1 + sqrt(1-C1))`.
    pub fn numerator_roots(&self) -> Option<(f64, f64)> {
        self.root_offset().map(|s| (-1.0 - s, -1.0 + s))
    }

    /// Logarithm of the unnormalised shape.
    fn log_shape(&self, v: f64) -> f64 {
        let c1 = self.c1;
        match self.regime {
            Regime::AboveOne => {
                let s = (c1 - 1.0).sqrt();
                let q = v * v + 2.0 * v + c1;
                q.ln() - 2.0 / s * ((v + 1.0) / s).atan()
            }
            Regime::One => {
                let w = v + 1.0;
                if w == 0.0 {
                    f64::NEG_INFINITY
                } else if w < 0.0 && 2.0 / w < -700.0 {
                    // exp(2/w) underflows; the limit is 0
                    f64::NEG_INFINITY
                } else {
                    2.0 * w.abs().ln() - 2.0 * v / w
                }
            }
            Regime::Zero => 2.0 * (v + 2.0).abs().ln(),
            Regime::BelowOne => {
                let s = (1.0 - c1).sqrt();
                let c5 = 1.0 / s;
                let lp = (v + 1.0 + s).abs();
                let lm = (v + 1.0 - s).abs();
                let tp = if lp == 0.0 {
                    f64::NEG_INFINITY
                } else {
                    (1.0 + c5) * lp.ln()
                };
                let tm = if lm == 0.0 {
                    if 1.0 - c5 > 0.0 {
                        f64::NEG_INFINITY
                    } else {
                        f64::INFINITY
                    }
                } else {
                    (1.0 - c5) * lm.ln()
                };
                tp + tm
            }
        }
    }

    /// The line `l- = 0` and its character, when present.
    pub fn singular_line(&self) -> Option<(f64, SingularKind)> {
        match self.regime {
            Regime::BelowOne => {
                let s = (1.0 - self.c1).sqrt();
                let kind = if self.c1 > 0.0 {
                    SingularKind::Divergent
                } else {
                    SingularKind::AxisContact
                };
                Some((-1.0 + s, kind))
            }
            _ => None,
        }
    }

    /// `|u| = F(v)`.
    pub fn eval(&self, v: f64) -> Result<f64> {
        if let Some((line, SingularKind::Divergent)) = self.singular_line() {
            if (v - line).abs() < POLE_GUARD {
                return Err(Error::Pole { v: line });
            }
        }
        if self.regime == Regime::One {
            let w = v + 1.0;
            if w > 0.0 && w < POLE_GUARD {
                return Err(Error::Pole { v: -1.0 });
            }
        }
        Ok((self.log_norm + self.log_shape(v)).exp())
    }

    /// `ln F(v)`; `-inf` where the curve touches `u = 0`.
    pub fn log_eval(&self, v: f64) -> f64 {
        self.log_norm + self.log_shape(v)
    }

    /// `F(v)` carrying the sign of `v^2 + 2v + C1` (negative on the
    /// interval A between the numerator roots).
    pub fn signed_eval(&self, v: f64) -> Result<f64> {
        let f = self.eval(v)?;
        let q = v * v + 2.0 * v + self.c1;
        Ok(if q < 0.0 { -f } else { f })
    }

    /// Slope `dv/du` of the curve branch with sign of `u` given by `u`.
    pub fn slope(&self, u: f64, v: f64) -> f64 {
        (self.c1 + v * (v + 2.0)) / (2.0 * u * v)
    }

    /// `[(v, F(v), -F(v))]` on `grid`, skipping points inside a pole band.
    pub fn sample(&self, grid: &[f64]) -> Vec<CurveSample> {
        grid.iter()
            .filter_map(|&v| {
                self.eval(v).ok().map(|u| CurveSample {
                    v,
                    u_plus: u,
                    u_minus: -u,
                })
            })
            .collect()
    }

    /// Solves `F(v) = target` on the monotone piece `(lo, hi)`.
    fn solve_on(&self, target: f64, lo: f64, hi: f64) -> Result<f64> {
        let lt = target.ln();
        brent(
            |v| self.log_eval(v).clamp(-1e300, 1e300) - lt,
            lo,
            hi,
            1e-14,
        )
    }

    /// Point on the outer branch above E (`v > E_v`) with `|u| = target`.
    pub fn upper_branch_v(&self, target: f64) -> Result<f64> {
        let (_, e) = self.numerator_roots().ok_or_else(|| self.unsupported())?;
        let mut hi = e + 1.0;
        while self.log_eval(hi) < target.ln() {
            hi = e + 2.0 * (hi - e);
            if hi > 1e12 {
                return Err(Error::NoBracket { lo: e, hi });
            }
        }
        self.solve_on(target, e.next_up(), hi)
    }

    /// Point on the outer branch below B (`v < B_v`) with `|u| = target`.
    pub fn lower_branch_v(&self, target: f64) -> Result<f64> {
        let (b, _) = self.numerator_roots().ok_or_else(|| self.unsupported())?;
        let mut lo = b - 1.0;
        while self.log_eval(lo) < target.ln() {
            lo = b - 2.0 * (b - lo);
            if lo < -1e12 {
                return Err(Error::NoBracket { lo, hi: b });
            }
        }
        self.solve_on(target, lo, b.next_down())
    }

    /// Point on the inner arc between B and `v = 0` with `|u| = target`.
    pub fn inner_lower_v(&self, target: f64) -> Result<f64> {
        let (b, _) = self.numerator_roots().ok_or_else(|| self.unsupported())?;
        self.solve_on(target, b.next_up(), 0.0)
    }

    /// Point on the inner arc between `v = 0` and E with `|u| = target`.
    pub fn inner_upper_v(&self, target: f64) -> Result<f64> {
        let (_, e) = self.numerator_roots().ok_or_else(|| self.unsupported())?;
        self.solve_on(target, 0.0, e.next_down())
    }

    fn unsupported(&self) -> Error {
        Error::UnsupportedRegime(format!("C1 = {} has no numerator roots", self.c1))
    }
}

/// `F(v)` and its mirror image.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct CurveSample {
    pub v: f64,
    pub u_plus: f64,
    pub u_minus: f64,
}

/// Writes `v,u_plus,u_minus`.
pub fn write_curve_csv<W: Write>(samples: &[CurveSample], mut w: W) -> Result<()> {
    writeln!(w, "v,u_plus,u_minus")?;
    for s in samples {
        writeln!(w, "{},{},{}", fmt_g(s.v), fmt_g(s.u_plus), fmt_g(s.u_minus))?;
    }
    Ok(())
}

/// Evenly spaced grid on `[lo, hi]` with points closer than `band` to any of
/// `avoid` removed.
pub fn grid_avoiding(lo: f64, hi: f64, n: usize, avoid: &[f64], band: f64) -> Vec<f64> {
    let n = n.max(2);
    (0..n)
        .map(|i| lo + (hi - lo) * i as f64 / (n - 1) as f64)
        .filter(|v| avoid.iter().all(|a| (v - a).abs() >= band))
        .collect()
}

/// Named points of the phase diagram.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum Label {
    B,
    C,
    D,
    E,
    F,
    G,
}

impl std::fmt::Display for Label {
    fn fmt(&self, f: &mut std::fmt::Formatter<'_>) -> std::fmt::Result {
        write!(f, "{self:?}")
    }
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
pub struct LabeledPoint {
    pub label: Label,
    pub u: f64,
    pub v: f64,
}

/// Geometric features of a [`PhaseCurve`].
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PhaseFeatures {
    pub c1: f64,
    pub v0: f64,
    pub regime: Regime,
    /// The line `v = -1 + sqrt(1 - C1)`, present for `C1 < 1, C1 != 0`.
    pub pole: Option<f64>,
    pub pole_kind: Option<SingularKind>,
    /// `v = -1 - sqrt(1 - C1)`, where the curve is tangent to `u = 0`.
    pub tangency: Option<f64>,
    /// The `u`-values where the curve meets `v = 0`.
    pub v_axis_crossings: Vec<f64>,
    pub bifurcation_points: Vec<LabeledPoint>,
    /// `[-1 - sqrt(1-C1), -1 + sqrt(1-C1))`, where `C1 + v(v+2) < 0`.
    pub sign_flip_interval: Option<(f64, f64)>,
}

impl PhaseFeatures {
    pub fn point(&self, label: Label) -> Option<LabeledPoint> {
        self.bifurcation_points
            .iter()
            .copied()
            .find(|p| p.label == label)
    }
}

pub fn features(curve: &PhaseCurve) -> PhaseFeatures {
    let roots = curve.numerator_roots();
    let (pole, pole_kind) = match curve.singular_line() {
        Some((v, kind)) => (Some(v), Some(kind)),
        None => (None, None),
    };
    let tangency = roots.map(|(b, _)| b);
    let crossing = curve.eval(0.0).ok().filter(|u| *u > 0.0 && u.is_finite());
    let v_axis_crossings = crossing.map(|u| vec![-u, u]).unwrap_or_default();

    let mut points = Vec::new();
    if let Some(b) = tangency {
        points.push(LabeledPoint {
            label: Label::B,
            u: 0.0,
            v: b,
        });
    }
    if let Some(u) = crossing {
        points.push(LabeledPoint {
            label: Label::C,
            u: -u,
            v: 0.0,
        });
        points.push(LabeledPoint {
            label: Label::D,
            u,
            v: 0.0,
        });
    }
    if let (Some(e), Some(SingularKind::AxisContact)) = (pole, pole_kind) {
        points.push(LabeledPoint {
            label: Label::E,
            u: 0.0,
            v: e,
        });
    }
    let sign_flip_interval = match curve.regime {
        Regime::BelowOne | Regime::Zero => roots,
        _ => None,
    };
    PhaseFeatures {
        c1: curve.c1,
        v0: curve.v0,
        regime: curve.regime,
        pole,
        pole_kind,
        tangency,
        v_axis_crossings,
        bifurcation_points: points,
        sign_flip_interval,
    }
}

/// Slope of the curve where it meets `v = 0`.
#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", content = "value", rename_all = "snake_case")]
pub enum CrossingSlope {
    Infinite,
    Finite(f64),
}

/// `dv/du` at the crossing `(u, 0)`: infinite unless `C1 = 0`, where the
/// slope field reduces to `(v + 2) / (2u)`, i.e. `1/u`.
pub fn crossing_slope(curve: &PhaseCurve, u: f64) -> CrossingSlope {
    match curve.regime {
        Regime::Zero => CrossingSlope::Finite(1.0 / u),
        _ => CrossingSlope::Infinite,
    }
}

/// Where a choice is made.
#[derive(Clone, Copy, Debug, PartialEq, Eq, Hash, Serialize, Deserialize)]
pub enum BifurcationPoint {
    B,
    C,
    D,
    E,
}

impl BifurcationPoint {
    pub fn label(self) -> Label {
        match self {
            BifurcationPoint::B => Label::B,
            BifurcationPoint::C => Label::C,
            BifurcationPoint::D => Label::D,
            BifurcationPoint::E => Label::E,
        }
    }

    fn from_label(label: Label) -> Option<Self> {
        match label {
            Label::B => Some(BifurcationPoint::B),
            Label::C => Some(BifurcationPoint::C),
            Label::D => Some(BifurcationPoint::D),
            Label::E => Some(BifurcationPoint::E),
            _ => None,
        }
    }
}

/// Continuation chosen at a bifurcation point.
///
/// At B and E (on the `u = 0` axis) the choice is between the cycle and the
/// explosive branch. At C and D (on the `v = 0` axis) the choice is between
/// the inner arc and a detour through the outer branch (via G or F).
#[derive(Clone, Copy, Debug, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Branch {
    Continue,
    Detour,
    Explode,
}

pub trait BranchPolicy {
    fn choose(&mut self, point: BifurcationPoint, u: f64, v: f64) -> Branch;
}

impl<F: FnMut(BifurcationPoint, f64, f64) -> Branch> BranchPolicy for F {
    fn choose(&mut self, point: BifurcationPoint, u: f64, v: f64) -> Branch {
        self(point, u, v)
    }
}

/// Always takes the inner arc and never explodes.
#[derive(Clone, Copy, Debug, Default)]
pub struct NeverDetour;

impl BranchPolicy for NeverDetour {
    fn choose(&mut self, _: BifurcationPoint, _: f64, _: f64) -> Branch {
        Branch::Continue
    }
}

/// Detours at C and D, never explodes.
#[derive(Clone, Copy, Debug, Default)]
pub struct AlwaysDetour;

impl BranchPolicy for AlwaysDetour {
    fn choose(&mut self, point: BifurcationPoint, _: f64, _: f64) -> Branch {
        match point {
            BifurcationPoint::C | BifurcationPoint::D => Branch::Detour,
            _ => Branch::Continue,
        }
    }
}

/// Seeded random choices with fixed probabilities.
#[derive(Clone, Debug)]
pub struct RandomBranches {
    pub p_detour: f64,
    pub p_explode: f64,
    rng: ChaCha8Rng,
}

impl RandomBranches {
    pub fn new(p_detour: f64, p_explode: f64, seed: u64) -> Self {
        Self::from_rng(p_detour, p_explode, ChaCha8Rng::seed_from_u64(seed))
    }

    pub fn from_rng(p_detour: f64, p_explode: f64, rng: ChaCha8Rng) -> Self {
        Self {
            p_detour,
            p_explode,
            rng,
        }
    }
}

impl BranchPolicy for RandomBranches {
    fn choose(&mut self, point: BifurcationPoint, _: f64, _: f64) -> Branch {
        let x: f64 = self.rng.random();
        match point {
            BifurcationPoint::C | BifurcationPoint::D if x < self.p_detour => Branch::Detour,
            BifurcationPoint::B | BifurcationPoint::E if x < self.p_explode => Branch::Explode,
            _ => Branch::Continue,
        }
    }
}

/// One sample along a traced path. `arc` names the segment, e.g. `"B>C"`.
#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct PathSample {
    pub arc: String,
    pub u: f64,
    pub v: f64,
}

#[derive(Clone, Copy, Debug, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "snake_case")]
pub enum CycleOutcome {
    /// The start label was reached again.
    Closed,
    /// An explosive branch was chosen at `from`; `direction` is the sign of
    /// `u` along the escape.
    Exploded { from: Label, direction: i8 },
    /// The transition budget ran out first.
    Truncated,
}

#[derive(Clone, Debug, PartialEq, Serialize, Deserialize)]
pub struct CycleTrace {
    pub labels: Vec<Label>,
    pub points: Vec<LabeledPoint>,
    pub path: Vec<PathSample>,
    pub outcome: CycleOutcome,
}

impl CycleTrace {
    /// The visited labels as a word, e.g. `"BCEDB"`.
    pub fn word(&self) -> String {
        self.labels.iter().map(|l| l.to_string()).collect()
    }

    /// Writes `label,u,v`: labeled points carry their label, path samples the
    /// arc name.
    pub fn write_csv<W: Write>(&self, mut w: W) -> Result<()> {
        writeln!(w, "label,u,v")?;
        for p in &self.points {
            writeln!(w, "{},{},{}", p.label, fmt_g(p.u), fmt_g(p.v))?;
        }
        for s in &self.path {
            writeln!(w, "{},{},{}", s.arc, fmt_g(s.u), fmt_g(s.v))?;
        }
        Ok(())
    }
}

const ARC_SAMPLES: usize = 64;
/// How far an explosive arc is drawn, in multiples of the crossing `|u|`.
const ESCAPE_REACH: f64 = 25.0;

/// Walks the phase diagram of a `C1 < 0` curve from `start`, following
/// `sign(v)` as the direction of motion in `u` and asking `policy` at each
/// bifurcation point. Stops when `start` is reached again, on explosion, or
/// after `max_transitions` arcs.
pub fn trace_cycle(
    curve: &PhaseCurve,
    policy: &mut dyn BranchPolicy,
    start: Label,
    max_transitions: usize,
) -> Result<CycleTrace> {
    if !(curve.regime == Regime::BelowOne && curve.c1 < 0.0) {
        return Err(Error::UnsupportedRegime(format!(
            "cycles are traced for C1 < 0 (axis contacts at B and E); got C1 = {}",
            curve.c1
        )));
    }
    let mut current = BifurcationPoint::from_label(start).ok_or_else(|| {
        Error::InvalidParameter(format!("start must be one of B, C, D, E; got {start}"))
    })?;
    let (b, e) = curve.numerator_roots().expect("C1 < 0 has roots");
    let u_cross = curve.eval(0.0)?;
    let v_g = curve.upper_branch_v(u_cross)?;
    let v_f = curve.lower_branch_v(u_cross)?;
    let point = |label: Label| -> LabeledPoint {
        let (u, v) = match label {
            Label::B => (0.0, b),
            Label::C => (-u_cross, 0.0),
            Label::D => (u_cross, 0.0),
            Label::E => (0.0, e),
            Label::G => (-u_cross, v_g),
            Label::F => (u_cross, v_f),
        };
        LabeledPoint { label, u, v }
    };

    let mut trace = CycleTrace {
        labels: vec![start],
        points: vec![point(start)],
        path: Vec::new(),
        outcome: CycleOutcome::Truncated,
    };
    let arc =
        |trace: &mut CycleTrace, from: Label, to: Label, sign: f64, v_from: f64, v_to: f64| {
            let name = format!("{from}>{to}");
            for i in 0..=ARC_SAMPLES {
                let v = v_from + (v_to - v_from) * i as f64 / ARC_SAMPLES as f64;
                if let Ok(u) = curve.eval(v) {
                    trace.path.push(PathSample {
                        arc: name.clone(),
                        u: sign * u,
                        v,
                    });
                }
            }
        };
    let visit = |trace: &mut CycleTrace, label: Label| {
        trace.labels.push(label);
        trace.points.push(point(label));
    };

    for _ in 0..max_transitions {
        let here = point(current.label());
        let branch = policy.choose(current, here.u, here.v);
        let next = match (current, branch) {
            (BifurcationPoint::B, Branch::Continue) => {
                arc(&mut trace, Label::B, Label::C, -1.0, b, 0.0);
                BifurcationPoint::C
            }
            (BifurcationPoint::C, Branch::Continue) => {
                arc(&mut trace, Label::C, Label::E, -1.0, 0.0, e);
                BifurcationPoint::E
            }
            (BifurcationPoint::C, Branch::Detour) => {
                trace.path.push(PathSample {
                    arc: "C>G".into(),
                    u: -u_cross,
                    v: 0.0,
                });
                trace.path.push(PathSample {
                    arc: "C>G".into(),
                    u: -u_cross,
                    v: v_g,
                });
                visit(&mut trace, Label::G);
                arc(&mut trace, Label::G, Label::E, -1.0, v_g, e);
                BifurcationPoint::E
            }
            (BifurcationPoint::E, Branch::Continue) => {
                arc(&mut trace, Label::E, Label::D, 1.0, e, 0.0);
                BifurcationPoint::D
            }
            (BifurcationPoint::D, Branch::Continue) => {
                arc(&mut trace, Label::D, Label::B, 1.0, 0.0, b);
                BifurcationPoint::B
            }
            (BifurcationPoint::D, Branch::Detour) => {
                trace.path.push(PathSample {
                    arc: "D>F".into(),
                    u: u_cross,
                    v: 0.0,
                });
                trace.path.push(PathSample {
                    arc: "D>F".into(),
                    u: u_cross,
                    v: v_f,
                });
                visit(&mut trace, Label::F);
                arc(&mut trace, Label::F, Label::B, 1.0, v_f, b);
                BifurcationPoint::B
            }
            (BifurcationPoint::E, Branch::Explode) => {
                let v_far = curve.upper_branch_v(ESCAPE_REACH * u_cross)?;
                arc(&mut trace, Label::E, Label::E, 1.0, e, v_far);
                trace.outcome = CycleOutcome::Exploded {
                    from: Label::E,
                    direction: 1,
                };
                return Ok(trace);
            }
            (BifurcationPoint::B, Branch::Explode) => {
                let v_far = curve.lower_branch_v(ESCAPE_REACH * u_cross)?;
                arc(&mut trace, Label::B, Label::B, -1.0, b, v_far);
                trace.outcome = CycleOutcome::Exploded {
                    from: Label::B,
                    direction: -1,
                };
                return Ok(trace);
            }
            (point, branch) => {
                return Err(Error::UnreachableBranch {
                    point: format!("{point:?}"),
                    branch: format!("{branch:?}"),
                })
            }
        };
        visit(&mut trace, next.label());
        current = next;
        if next.label() == start {
            trace.outcome = CycleOutcome::Closed;
            return Ok(trace);
        }
    }
    Ok(trace)
}

#[cfg(test)]
mod tests {
    use super::*;

    const SQRT6_2: f64 = 1.224_744_871_391_589;

    #[test]
    fn regimes() {
        assert_eq!(Regime::classify(2.0), Regime::AboveOne);
        assert_eq!(Regime::classify(1.0), Regime::One);
        assert_eq!(Regime::classify(0.5), Regime::BelowOne);
        assert_eq!(Regime::classify(-0.5), Regime::BelowOne);
        assert_eq!(Regime::classify(0.0), Regime::Zero);
    }

    #[test]
    fn normalisation_point() {
        for c1 in [-0.5, 0.0, 0.5, 1.0, 2.0, 5.0] {
            for v0 in [1.0, -3.0, 0.7] {
                let c = PhaseCurve::new(c1, v0).unwrap();
                assert!(
                    (c.eval(v0).unwrap() - 1.0).abs() < 1e-14,
                    "C1 = {c1}, v0 = {v0}"
                );
            }
        }
        assert!(PhaseCurve::new(-0.5, -1.0 + SQRT6_2).is_err());
    }

    #[test]
    fn tangency_at_minus_one_for_c1_one() {
        let c = PhaseCurve::new(1.0, 1.0).unwrap();
        assert_eq!(c.eval(-1.0).unwrap(), 0.0);
        assert!(c.eval(-1.0 + 1e-12).is_err());
        assert!(c.eval(-1.01).unwrap() < 1e-80);
    }

    #[test]
    fn figure_two_crossing() {
        let c = PhaseCurve::new(-0.5, 1.0).unwrap();
        let u = c.eval(0.0).unwrap();
        assert!((u - 0.4).abs() < 0.02, "crossing at {u}");
    }

    #[test]
    fn singular_line_character() {
        // diverges for 0 < C1 < 1
        let c = PhaseCurve::new(0.5, 1.0).unwrap();
        let (line, kind) = c.singular_line().unwrap();
        assert_eq!(kind, SingularKind::Divergent);
        assert!(c.eval(line + 1e-7).unwrap() > 1e2);
        assert!(matches!(c.eval(line), Err(Error::Pole { .. })));
        // touches u = 0 for C1 < 0
        let c = PhaseCurve::new(-0.5, 1.0).unwrap();
        let (line, kind) = c.singular_line().unwrap();
        assert_eq!(kind, SingularKind::AxisContact);
        assert!((line - (-1.0 + SQRT6_2)).abs() < 1e-15);
        assert_eq!(c.eval(line).unwrap(), 0.0);
        assert!(c.eval(line + 1e-6).unwrap() < 0.2);
    }

    #[test]
    fn features_for_figure_two() {
        let f = features(&PhaseCurve::new(-0.5, 1.0).unwrap());
        let b = f.point(Label::B).unwrap();
        let e = f.point(Label::E).unwrap();
        assert_eq!((b.u, e.u), (0.0, 0.0));
        assert!((b.v - (-1.0 - SQRT6_2)).abs() < 1e-15);
        assert!((e.v - (-1.0 + SQRT6_2)).abs() < 1e-15);
        assert!((f.point(Label::C).unwrap().u + 0.4).abs() < 0.02);
        assert!((f.point(Label::D).unwrap().u - 0.4).abs() < 0.02);
        let (lo, hi) = f.sign_flip_interval.unwrap();
        assert_eq!((lo, hi), (b.v, e.v));
    }

    #[test]
    fn features_other_regimes() {
        let f = features(&PhaseCurve::new(2.0, 1.0).unwrap());
        assert!(f.pole.is_none() && f.tangency.is_none());
        assert_eq!(f.v_axis_crossings.len(), 2);
        assert!(f.point(Label::B).is_none());

        let f = features(&PhaseCurve::new(1.0, 1.0).unwrap());
        assert!(f.pole.is_none());
        assert_eq!(f.tangency, Some(-1.0));

        let f = features(&PhaseCurve::new(0.0, 1.0).unwrap());
        assert!(f.pole.is_none());
        assert_eq!(f.tangency, Some(-2.0));

        let f = features(&PhaseCurve::new(0.5, 1.0).unwrap());
        assert_eq!(f.pole_kind, Some(SingularKind::Divergent));
        assert!(f.point(Label::E).is_none());
    }

    #[test]
    fn crossing_slopes() {
        let c = PhaseCurve::new(-0.5, 1.0).unwrap();
        assert_eq!(crossing_slope(&c, 0.4), CrossingSlope::Infinite);
        let c = PhaseCurve::new(0.0, 1.0).unwrap();
        assert_eq!(crossing_slope(&c, 0.5), CrossingSlope::Finite(2.0));
        assert_eq!(crossing_slope(&c, 1.0), CrossingSlope::Finite(1.0));
    }

    #[test]
    fn closed_form_solves_slope_field() {
        // d ln F / dv must equal 2v / (C1 + v(v+2))
        for c1 in [-0.5, 0.0, 0.5, 1.0, 2.0, 5.0] {
            let c = PhaseCurve::new(c1, 1.0).unwrap();
            for v in [-3.5, -0.6, 0.1, 0.9, 2.5] {
                let h = 1e-6;
                let num = (c.log_eval(v + h) - c.log_eval(v - h)) / (2.0 * h);
                let want = 2.0 * v / (c1 + v * (v + 2.0));
                assert!(
                    (num - want).abs() < 1e-6 * (1.0 + want.abs()),
                    "C1 = {c1}, v = {v}: {num} vs {want}"
                );
            }
        }
    }

    #[test]
    fn traced_words() {
        let c = PhaseCurve::new(-0.5, 1.0).unwrap();
        let t = trace_cycle(&c, &mut NeverDetour, Label::B, 16).unwrap();
        assert_eq!(t.word(), "BCEDB");
        assert_eq!(t.outcome, CycleOutcome::Closed);
        let t = trace_cycle(&c, &mut AlwaysDetour, Label::B, 16).unwrap();
        assert_eq!(t.word(), "BCGEDFB");

        let mut detour_at_c = |p: BifurcationPoint, _: f64, _: f64| {
            if p == BifurcationPoint::C {
                Branch::Detour
            } else {
                Branch::Continue
            }
        };
        assert_eq!(
            trace_cycle(&c, &mut detour_at_c, Label::B, 16)
                .unwrap()
                .word(),
            "BCGEDB"
        );
        let mut detour_at_d = |p: BifurcationPoint, _: f64, _: f64| {
            if p == BifurcationPoint::D {
                Branch::Detour
            } else {
                Branch::Continue
            }
        };
        assert_eq!(
            trace_cycle(&c, &mut detour_at_d, Label::B, 16)
                .unwrap()
                .word(),
            "BCEDFB"
        );
    }

    #[test]
    fn explosion_at_e() {
        let c = PhaseCurve::new(-0.5, 1.0).unwrap();
        let mut explode = |p: BifurcationPoint, _: f64, _: f64| {
            if p == BifurcationPoint::E {
                Branch::Explode
            } else {
                Branch::Continue
            }
        };
        let t = trace_cycle(&c, &mut explode, Label::B, 16).unwrap();
        assert_eq!(
            t.outcome,
            CycleOutcome::Exploded {
                from: Label::E,
                direction: 1
            }
        );
        let tail = t.path.last().unwrap();
        assert!(tail.u > 0.0 && tail.v > -1.0 + SQRT6_2);
    }

    #[test]
    fn unreachable_branch_is_rejected() {
        let c = PhaseCurve::new(-0.5, 1.0).unwrap();
        let mut bad = |_: BifurcationPoint, _: f64, _: f64| Branch::Detour;
        assert!(matches!(
            trace_cycle(&c, &mut bad, Label::B, 4),
            Err(Error::UnreachableBranch { .. })
        ));
        assert!(trace_cycle(
            &PhaseCurve::new(0.5, 1.0).unwrap(),
            &mut NeverDetour,
            Label::B,
            4
        )
        .is_err());
    }

    #[test]
    fn detour_points_lie_on_outer_branches() {
        let c = PhaseCurve::new(-0.5, 1.0).unwrap();
        let t = trace_cycle(&c, &mut AlwaysDetour, Label::B, 16).unwrap();
        let g = t.points.iter().find(|p| p.label == Label::G).unwrap();
        let f = t.points.iter().find(|p| p.label == Label::F).unwrap();
        let (b, e) = c.numerator_roots().unwrap();
        assert!(g.u < 0.0 && g.v > e);
        assert!(f.u > 0.0 && f.v < b);
        assert!((c.eval(g.v).unwrap() - g.u.abs()).abs() < 1e-12);
        assert!((c.eval(f.v).unwrap() - f.u.abs()).abs() < 1e-12);
    }

    #[test]
    fn random_policy_is_seeded() {
        let c = PhaseCurve::new(-0.5, 1.0).unwrap();
        let a = trace_cycle(&c, &mut RandomBranches::new(0.5, 0.1, 3), Label::B, 50).unwrap();
        let b = trace_cycle(&c, &mut RandomBranches::new(0.5, 0.1, 3), Label::B, 50).unwrap();
        assert_eq!(a, b);
    }
}
