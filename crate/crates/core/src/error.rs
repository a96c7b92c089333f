use thiserror::Error;

pub type Result<T> = std::result::Result<T, Error>;

#[derive(Debug, Clone, PartialEq, Error)]
pub enum Error {
    #[error("NotNormalized: initial density has mass {mass:.15}, expected 1 (tolerance 1e-12)")]
    NotNormalized { mass: f64 },

    #[error("NegativeDensity: initial density takes the value {value} near x = {position}")]
    NegativeDensity { position: f64, value: f64 },

    #[error(
        "SupercriticalSupNorm: sup-norm {sup_norm} of the initial density is not below alpha/2 = {}",
        alpha / 2.0
    )]
    SupercriticalSupNorm { sup_norm: f64, alpha: f64 },

    #[error("invalid density description: {0}")]
    InvalidDensity(String),

    #[error("invalid parameter {name} = {value}: {constraint}")]
    InvalidParameter {
        name: &'static str,
        value: f64,
        constraint: &'static str,
    },

    #[error("NonPositiveEpsilon: mollification requires epsilon > 0, got {0}")]
    NonPositiveEpsilon(f64),

    #[error("invalid boundary path: {0}")]
    InvalidBoundary(String),

    #[error("GridMismatch: {0}")]
    GridMismatch(String),

    #[error("CFLUnreasonable: step {step} does not assemble an M-matrix ({detail})")]
    CflUnreasonable { step: usize, detail: String },

    #[error("PreconditionLipschitz: boundary Lipschitz bound {bound} exceeds sup(f_eps)/eps = {allowed}")]
    PreconditionLipschitz { bound: f64, allowed: f64 },

    #[error("PreconditionFailed: {0}")]
    PreconditionFailed(String),

    #[error("WindowStalled: no contraction on the window starting at step {start} even with {window_steps} step(s)")]
    WindowStalled { start: usize, window_steps: usize },

    #[error("NotConverged: {sweeps} sweeps, last sup-norm change {change:e}")]
    NotConverged { sweeps: usize, change: f64 },
}

impl Error {
    /// True for errors raised by input validation rather than by a solver.
    pub fn is_validation(&self) -> bool {
        matches!(
            self,
            Error::NotNormalized { .. }
                | Error::NegativeDensity { .. }
                | Error::SupercriticalSupNorm { .. }
                | Error::InvalidDensity(_)
                | Error::InvalidParameter { .. }
                | Error::NonPositiveEpsilon(_)
                | Error::InvalidBoundary(_)
        )
    }
}
