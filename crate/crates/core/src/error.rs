use thiserror::Error;

/// Errors raised by the model, its integrators and the analysis routines.
#[derive(Debug, Error)]
pub enum Error {
    #[error("invalid parameter: {0}")]
    InvalidParameter(String),

    #[error("singularity: |{component}| = {value:e} is below the floor {floor:e}")]
    Singularity {
        component: &'static str,
        value: f64,
        floor: f64,
    },

    #[error("step size underflow at t = {t} (h = {h:e})")]
    StepUnderflow { t: f64, h: f64 },

    #[error("step budget of {0} steps exhausted")]
    TooManySteps(usize),

    #[error("state is off the matched manifold: x3/x4 = {ratio}, expected {expected}")]
    OffManifold { ratio: f64, expected: f64 },

    #[error("phase curve has a pole at v = {v}")]
    Pole { v: f64 },

    #[error("series has zero variance")]
    ZeroVariance,

    #[error("series lengths differ ({0} vs {1})")]
    LengthMismatch(usize, usize),

    #[error("insufficient samples: need at least {need}, got {got}")]
    InsufficientSamples { need: usize, got: usize },

    #[error("branch {branch} is not reachable at bifurcation point {point}")]
    UnreachableBranch { point: String, branch: String },

    #[error("unsupported regime: {0}")]
    UnsupportedRegime(String),

    #[error("quadrature failed near v = 0 at u = {u}")]
    Quadrature { u: f64 },

    #[error("ensemble produced {valid} valid runs, need at least {need}")]
    DegenerateEnsemble { valid: usize, need: usize },

    #[error("root bracketing failed on [{lo}, {hi}]")]
    NoBracket { lo: f64, hi: f64 },

    #[error(transparent)]
    Io(#[from] std::io::Error),

    #[error(transparent)]
    Json(#[from] serde_json::Error),
}

pub type Result<T> = std::result::Result<T, Error>;
