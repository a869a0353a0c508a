use thiserror::Error;

use crate::measures::EmpiricalMeasure;

pub type Result<T, E = Error> = std::result::Result<T, E>;

#[derive(Debug, Error)]
pub enum Error {
    #[error("{what} = {value} is outside its domain {domain}")]
    Domain {
        what: &'static str,
        value: f64,
        domain: &'static str,
    },

    #[error("invalid measure: {0}")]
    InvalidMeasure(String),

    #[error("grid mismatch: {0}")]
    GridMismatch(String),

    #[error("shift by {shift} moves {mass:e} of mass outside [{x_min}, {x_max}] (tolerance {tol:e}); enlarge the domain")]
    TruncationOverflow {
        shift: f64,
        mass: f64,
        tol: f64,
        x_min: f64,
        x_max: f64,
    },

    #[error("coefficient spec rejected: {0}")]
    InvalidSpec(String),

    #[error("gamma(t = {t}) = {value} exceeds its declared bound {bound}")]
    GammaBound { t: f64, value: f64, bound: f64 },

    #[error("Lipschitz probe ratio {ratio} exceeds declared constant {declared}")]
    LipschitzExceeded {
        ratio: f64,
        declared: f64,
        witness: Box<(EmpiricalMeasure, EmpiricalMeasure)>,
    },

    #[error("non-finite value at step {step}")]
    Blowup { step: usize },

    #[error("CFL violated: dt = {dt:e} exceeds the stable limit {limit:e}")]
    Cfl { dt: f64, limit: f64 },

    #[error("fixed-point iteration did not converge in {} iterations (last sup-W1 {:e})", .log.len(), .log.last().copied().unwrap_or(f64::NAN))]
    NoConvergence { log: Vec<f64> },

    #[error("time grid mismatch: {0}")]
    TimeGridMismatch(String),

    #[error("test function support [{lo}, {hi}] touches the domain boundary [{x_min}, {x_max}]")]
    SupportTouchesBoundary {
        lo: f64,
        hi: f64,
        x_min: f64,
        x_max: f64,
    },

    #[error("undefined slope: {0}")]
    UndefinedSlope(String),

    #[error("trajectory does not retain raw positions")]
    MissingPositions,

    #[error("parse error: {0}")]
    Parse(String),

    #[error(transparent)]
    Io(#[from] std::io::Error),
}
