//! Model parameters and the admissibility gate.

use serde::{Deserialize, Serialize};

use crate::density::DensitySpec;
use crate::error::{Error, Result};

/// Mass tolerance of the normalization check.
pub const MASS_TOLERANCE: f64 = 1e-12;

/// Latent-heat density `α` and kinetic-undercooling parameter `ε`
/// (`ε = 0` selects the unregularized limit problem).
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct ModelParams {
    pub alpha: f64,
    pub epsilon: f64,
}

impl ModelParams {
    pub fn new(alpha: f64, epsilon: f64) -> Result<Self> {
        if !(alpha.is_finite() && alpha > 0.0) {
            return Err(Error::InvalidParameter {
                name: "alpha",
                value: alpha,
                constraint: "must be finite and positive",
            });
        }
        if !(epsilon.is_finite() && epsilon >= 0.0) {
            return Err(Error::InvalidParameter {
                name: "epsilon",
                value: epsilon,
                constraint: "must be finite and non-negative",
            });
        }
        Ok(Self { alpha, epsilon })
    }

    pub fn with_epsilon(self, epsilon: f64) -> Result<Self> {
        Self::new(self.alpha, epsilon)
    }

    /// `2/α`, the a-priori upper bound of every free boundary.
    pub fn boundary_cap(&self) -> f64 {
        2.0 / self.alpha
    }
}

/// Accepts `(f, params)` iff `f >= 0`, `∫f = 1` to within `1e-12`, and
/// `‖f‖∞ < α/2` strictly.
pub fn validate_model(f: &DensitySpec, params: &ModelParams) -> Result<()> {
    ModelParams::new(params.alpha, params.epsilon)?;
    let (position, value) = f.min_value();
    if value < 0.0 {
        return Err(Error::NegativeDensity { position, value });
    }
    if (f.mass() - 1.0).abs() > MASS_TOLERANCE {
        return Err(Error::NotNormalized { mass: f.mass() });
    }
    if f.sup_norm() >= params.alpha / 2.0 {
        return Err(Error::SupercriticalSupNorm {
            sup_norm: f.sup_norm(),
            alpha: params.alpha,
        });
    }
    Ok(())
}
