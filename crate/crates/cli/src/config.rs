//! The run configuration: one TOML file, unknown keys rejected everywhere.
//!
//! ```toml
//! mode = "sweep"            # solve_regularized | solve_limit | sweep | fk_validate
//! seed = 42
//! output_dir = "out"
//! epsilons = [0.8, 0.4, 0.2]
//!
//! [model]
//! alpha = 3.0
//! [model.density]
//! kind = "uniform"          # uniform | piecewise-constant | tabulated
//! a = 0.0
//! b = 1.0
//!
//! [time]
//! t_max = 1.0
//! n_steps = 4096
//!
//! [space]                   # PDE grid
//! dx = 0.0009765625
//! x_max = 8.0               # optional
//!
//! [picard]
//! evaluator = "mc"          # pde | mc
//! tol = 1e-4
//!
//! [ensemble]
//! n_particles = 200000
//!
//! [limit]
//! n_particles = 500000
//! tol = 5e-4
//! ```

use std::path::PathBuf;

use serde::Deserialize;
use stefan_core::fixedpoint::EvaluatorKind;
use stefan_core::montecarlo::EnsembleConfig;
use stefan_core::{
    DensityKind, DensitySpec, Evaluator, LimitConfig, ModelParams, PdeOptions, PicardConfig,
    SweepConfig, TimeGrid,
};

use crate::error::CliError;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum Mode {
    SolveRegularized,
    SolveLimit,
    Sweep,
    FkValidate,
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct RunConfig {
    pub mode: Mode,
    #[serde(default)]
    pub seed: u64,
    #[serde(default = "default_output_dir")]
    pub output_dir: PathBuf,
    /// Ignored by `solve_limit`; strictly decreasing for `sweep`.
    #[serde(default)]
    pub epsilons: Vec<f64>,
    pub model: ModelSection,
    pub time: TimeSection,
    #[serde(default)]
    pub space: SpaceSection,
    #[serde(default)]
    pub picard: PicardSection,
    #[serde(default)]
    pub ensemble: EnsembleSection,
    #[serde(default)]
    pub limit: LimitSection,
}

fn default_output_dir() -> PathBuf {
    PathBuf::from("out")
}

#[derive(Debug, Clone, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct ModelSection {
    pub alpha: f64,
    pub density: DensityKind,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct TimeSection {
    pub t_max: f64,
    pub n_steps: usize,
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct SpaceSection {
    pub dx: f64,
    pub x_max: Option<f64>,
}

impl Default for SpaceSection {
    fn default() -> Self {
        Self {
            dx: 1.0 / 1024.0,
            x_max: None,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct PicardSection {
    pub evaluator: EvaluatorKind,
    pub tol: f64,
    pub max_iter: usize,
    pub window_steps: Option<usize>,
    pub min_window_steps: usize,
}

impl Default for PicardSection {
    fn default() -> Self {
        Self {
            evaluator: EvaluatorKind::Pde,
            tol: 1e-4,
            max_iter: 50,
            window_steps: None,
            min_window_steps: 1,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct EnsembleSection {
    pub n_particles: usize,
    /// Omitted: on for `ε <= 0.1` (and for the limit problem), off above.
    pub bridge_refinement: Option<bool>,
    pub antithetic: bool,
}

impl Default for EnsembleSection {
    fn default() -> Self {
        Self {
            n_particles: 200_000,
            bridge_refinement: None,
            antithetic: false,
        }
    }
}

#[derive(Debug, Clone, Copy, PartialEq, Deserialize)]
#[serde(deny_unknown_fields, default)]
pub struct LimitSection {
    pub n_particles: usize,
    pub tol: f64,
    pub max_sweeps: usize,
    pub bridge_refinement: Option<bool>,
}

impl Default for LimitSection {
    fn default() -> Self {
        Self {
            n_particles: 500_000,
            tol: 5e-4,
            max_sweeps: 200,
            bridge_refinement: None,
        }
    }
}

impl RunConfig {
    pub fn parse(text: &str) -> Result<Self, CliError> {
        toml::from_str(text).map_err(|e| CliError::Config(e.to_string()))
    }

    pub fn density(&self) -> Result<DensitySpec, CliError> {
        Ok(DensitySpec::new(self.model.density.clone())?)
    }

    pub fn params(&self, epsilon: f64) -> Result<ModelParams, CliError> {
        Ok(ModelParams::new(self.model.alpha, epsilon)?)
    }

    pub fn grid(&self) -> Result<TimeGrid, CliError> {
        Ok(TimeGrid::new(self.time.t_max, self.time.n_steps)?)
    }

    pub fn pde(&self) -> PdeOptions {
        let opts = PdeOptions::new(self.space.dx);
        match self.space.x_max {
            Some(x) => opts.with_x_max(x),
            None => opts,
        }
    }

    pub fn ensemble(&self) -> EnsembleConfig {
        EnsembleConfig {
            bridge_refinement: self.ensemble.bridge_refinement,
            ..EnsembleConfig::new(self.ensemble.n_particles, self.seed)
        }
        .with_antithetic(self.ensemble.antithetic)
    }

    pub fn picard(&self) -> PicardConfig {
        let evaluator = match self.picard.evaluator {
            EvaluatorKind::Pde => Evaluator::Pde(self.pde()),
            EvaluatorKind::Mc => Evaluator::MonteCarlo(self.ensemble()),
        };
        PicardConfig {
            tol: self.picard.tol,
            max_iter: self.picard.max_iter,
            window_steps: self.picard.window_steps,
            min_window_steps: self.picard.min_window_steps,
            ..PicardConfig::new(evaluator)
        }
    }

    pub fn limit(&self) -> LimitConfig {
        let ensemble = EnsembleConfig {
            bridge_refinement: self.limit.bridge_refinement,
            ..EnsembleConfig::new(self.limit.n_particles, self.seed)
        };
        LimitConfig {
            max_sweeps: self.limit.max_sweeps,
            ..LimitConfig::new(ensemble, self.limit.tol)
        }
    }

    pub fn sweep(&self) -> SweepConfig {
        SweepConfig {
            epsilons: self.epsilons.clone(),
            picard: self.picard(),
            pde: self.pde(),
            ensemble: self.ensemble(),
            limit: self.limit(),
        }
    }

    /// Checks that need the mode; the solvers check everything else.
    pub fn check(&self) -> Result<(), CliError> {
        if self.mode != Mode::SolveLimit && self.epsilons.is_empty() {
            return Err(CliError::Config("`epsilons` must list at least one value".into()));
        }
        Ok(())
    }
}
