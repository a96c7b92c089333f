//! Free boundaries of the one-phase supercooled Stefan problem with kinetic
//! undercooling, through their probabilistic representation.
//!
//! The regularized boundary `Λ_ε` is a fixed point of
//! `Λ ↦ (2/α)(1 - E[exp(-α L_t / ε)])`, where `L` is the local time at zero of
//! `X_0 + B - Λ` reflected at zero and `X_0 ~ f_ε`. The crate evaluates that
//! map two independent ways (a Robin-boundary heat equation and a particle
//! ensemble), solves for the fixed point by windowed Picard iteration and
//! tracks `Λ_ε` as `ε ↓ 0` against the hitting-time fixed point of the limit
//! problem.
//!
//! ```
//! use stefan_core::{DensitySpec, ModelParams, validate_model};
//!
//! let f = DensitySpec::uniform(0.0, 1.0).unwrap();
//! assert!(validate_model(&f, &ModelParams::new(3.0, 0.5).unwrap()).is_ok());
//! assert!(validate_model(&f, &ModelParams::new(2.0, 0.5).unwrap()).is_err());
//! ```

pub mod density;
pub mod error;
pub mod experiments;
pub mod fixedpoint;
pub mod grid;
pub mod kernel;
pub mod model;
pub mod montecarlo;
pub mod pde;
pub mod skorokhod;

pub use density::{mollify, sample_coupled_initial, DensityKind, DensitySpec, MollifiedDensity};
pub use error::{Error, Result};
pub use experiments::{epsilon_sweep, fk_cross_validate, SweepConfig, SweepReport};
pub use fixedpoint::{
    solve_limit, solve_regularized, Evaluator, EvaluatorKind, LimitConfig, PicardConfig,
    SolveReport,
};
pub use grid::{BoundaryPath, TimeGrid};
pub use model::{validate_model, ModelParams};
pub use montecarlo::EnsembleConfig;
pub use pde::{PdeOptions, SpaceGrid};

// The guide in book/ is compiled and run as doctests.
#[cfg(doctest)]
mod book {
    #[doc = include_str!("../../../book/src/introduction.md")]
    mod introduction {}
    #[doc = include_str!("../../../book/src/skorokhod.md")]
    mod skorokhod {}
    #[doc = include_str!("../../../book/src/densities.md")]
    mod densities {}
    #[doc = include_str!("../../../book/src/monte-carlo.md")]
    mod monte_carlo {}
    #[doc = include_str!("../../../book/src/pde.md")]
    mod pde {}
    #[doc = include_str!("../../../book/src/picard.md")]
    mod picard {}
    #[doc = include_str!("../../../book/src/limit.md")]
    mod limit {}
    #[doc = include_str!("../../../book/src/sweeps.md")]
    mod sweeps {}
    #[doc = include_str!("../../../book/src/reproducibility.md")]
    mod reproducibility {}
}
