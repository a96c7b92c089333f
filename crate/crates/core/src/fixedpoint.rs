//! Fixed points of the boundary maps.
//!
//! [`solve_regularized`] finds `Λ_ε = F(Λ_ε)` by Picard iteration on short
//! time windows: the map is causal (its value at `t` only depends on `Λ` on
//! `[0, t]`) and a contraction on windows of length of order
//! `ε² / ‖f_ε‖²`, so windows are solved one after another, each started from
//! the constant extension of the boundary so far. Iterates are projected
//! onto non-decreasing paths with slope at most `‖f_ε‖∞ / ε`.
//!
//! [`solve_limit`] iterates the hitting-time map of the limit problem from
//! `Λ ≡ 0` over the whole horizon.

use serde::{Deserialize, Serialize};

use crate::density::{mollify, DensitySpec, MollifiedDensity};
use crate::error::{Error, Result};
use crate::grid::{clamp_increments, BoundaryPath, TimeGrid};
use crate::model::{validate_model, ModelParams};
use crate::montecarlo::{hitting_estimate, EnsembleConfig, FkWindowEngine};
use crate::pde::{scheme_error_estimate, PdeOptions, PdeWindowEngine};

/// Below this `ε` the Monte Carlo evaluator's answers are flagged unreliable.
pub const MC_RELIABLE_EPSILON: f64 = 0.02;

#[derive(Debug, Clone, Copy, PartialEq, Eq, Serialize, Deserialize)]
#[serde(rename_all = "snake_case")]
pub enum EvaluatorKind {
    Pde,
    Mc,
}

/// How `F(Λ)` is evaluated inside the iteration.
#[derive(Debug, Clone, PartialEq)]
pub enum Evaluator {
    Pde(PdeOptions),
    MonteCarlo(EnsembleConfig),
}

impl Evaluator {
    pub fn kind(&self) -> EvaluatorKind {
        match self {
            Evaluator::Pde(_) => EvaluatorKind::Pde,
            Evaluator::MonteCarlo(_) => EvaluatorKind::Mc,
        }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct PicardConfig {
    /// Accept an iterate once `sup |F(Λ) - Λ|` over the window is at most this.
    pub tol: f64,
    /// Iterations per window before the window is halved.
    pub max_iter: usize,
    /// Initial window length in steps; `None` picks `ε² / (4 ‖f_ε‖² dt)`.
    pub window_steps: Option<usize>,
    pub min_window_steps: usize,
    pub evaluator: Evaluator,
}

impl PicardConfig {
    pub fn new(evaluator: Evaluator) -> Self {
        Self {
            tol: 1e-4,
            max_iter: 50,
            window_steps: None,
            min_window_steps: 1,
            evaluator,
        }
    }

    fn validate(&self) -> Result<()> {
        if !(self.tol.is_finite() && self.tol > 0.0) {
            return Err(Error::InvalidParameter {
                name: "tol",
                value: self.tol,
                constraint: "must be finite and positive",
            });
        }
        if self.max_iter == 0 {
            return Err(Error::InvalidParameter {
                name: "max_iter",
                value: 0.0,
                constraint: "must be at least 1",
            });
        }
        if self.min_window_steps == 0 || self.window_steps == Some(0) {
            return Err(Error::InvalidParameter {
                name: "window_steps",
                value: 0.0,
                constraint: "windows need at least one step",
            });
        }
        if let Evaluator::MonteCarlo(cfg) = &self.evaluator {
            cfg.validate()?;
        }
        Ok(())
    }

    /// Initial window length for a mollified density on `grid`.
    pub fn initial_window(&self, f_eps: &MollifiedDensity, grid: &TimeGrid) -> usize {
        let w = self.window_steps.unwrap_or_else(|| {
            let s = f_eps.sup_norm();
            let eps = f_eps.epsilon();
            (eps * eps / (4.0 * s * s * grid.dt())).round() as usize
        });
        w.max(self.min_window_steps).min(grid.n_steps())
    }
}

/// One accepted window of the iteration.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct WindowRecord {
    pub start: usize,
    pub end: usize,
    pub iterations: usize,
    pub residual: f64,
    /// Times the window was halved before it converged.
    pub halvings: usize,
}

/// Error indicators attached to a solution.
#[derive(Debug, Clone, PartialEq, Default, Serialize)]
pub struct SolveStats {
    /// Pointwise 99% half-widths of `F(Λ)` (Monte Carlo).
    pub ci: Option<Vec<f64>>,
    pub max_ci: Option<f64>,
    /// Estimated discretization error of `F(Λ)` (PDE).
    pub scheme_error: Option<f64>,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SolveReport {
    pub epsilon: f64,
    pub evaluator: EvaluatorKind,
    pub boundary: BoundaryPath,
    /// `F(Λ)` at the returned boundary, as computed by the evaluator.
    pub image: Vec<f64>,
    /// `sup_t |F(Λ)(t) - Λ(t)|`.
    pub residual: f64,
    pub windows: Vec<WindowRecord>,
    pub total_iterations: usize,
    pub stats: SolveStats,
    pub reliable: bool,
    pub warnings: Vec<String>,
}

trait WindowEvaluator {
    fn committed(&self) -> usize;
    fn evaluate(&mut self, lambda: &[f64], end: usize) -> Result<Vec<f64>>;
    fn commit(&mut self);
}

impl WindowEvaluator for PdeWindowEngine {
    fn committed(&self) -> usize {
        PdeWindowEngine::committed(self)
    }
    fn evaluate(&mut self, lambda: &[f64], end: usize) -> Result<Vec<f64>> {
        PdeWindowEngine::evaluate(self, lambda, end)
    }
    fn commit(&mut self) {
        PdeWindowEngine::commit(self)
    }
}

impl WindowEvaluator for FkWindowEngine {
    fn committed(&self) -> usize {
        FkWindowEngine::committed(self)
    }
    fn evaluate(&mut self, lambda: &[f64], end: usize) -> Result<Vec<f64>> {
        Ok(FkWindowEngine::evaluate(self, lambda, end))
    }
    fn commit(&mut self) {
        FkWindowEngine::commit(self)
    }
}

struct Outcome {
    values: Vec<f64>,
    image: Vec<f64>,
    windows: Vec<WindowRecord>,
}

fn iterate_windows(
    engine: &mut dyn WindowEvaluator,
    grid: &TimeGrid,
    lipschitz: f64,
    cfg: &PicardConfig,
    initial_window: usize,
) -> Result<Outcome> {
    let n = grid.n_steps();
    let max_step = lipschitz * grid.dt();
    let mut lambda = vec![0.0; grid.len()];
    let mut image = vec![0.0; grid.len()];
    let mut windows = Vec::new();

    while engine.committed() < n {
        let start = engine.committed();
        let mut width = initial_window;
        let mut halvings = 0;
        loop {
            let end = (start + width).min(n);
            let anchor = lambda[start];
            lambda[start + 1..=end].fill(anchor);
            let mut accepted = None;
            for iteration in 1..=cfg.max_iter {
                let values = engine.evaluate(&lambda, end)?;
                let residual = values[1..]
                    .iter()
                    .zip(&lambda[start + 1..=end])
                    .map(|(f, l)| (f - l).abs())
                    .fold(0.0, f64::max);
                if residual <= cfg.tol {
                    image[start..=end].copy_from_slice(&values);
                    accepted = Some((iteration, residual));
                    break;
                }
                let next = clamp_increments(anchor, values[1..].iter().copied(), max_step);
                lambda[start + 1..=end].copy_from_slice(&next);
            }
            if let Some((iterations, residual)) = accepted {
                engine.commit();
                windows.push(WindowRecord {
                    start,
                    end,
                    iterations,
                    residual,
                    halvings,
                });
                break;
            }
            if width <= cfg.min_window_steps {
                return Err(Error::WindowStalled {
                    start,
                    window_steps: width,
                });
            }
            width = (width / 2).max(cfg.min_window_steps);
            halvings += 1;
        }
    }
    Ok(Outcome {
        values: lambda,
        image,
        windows,
    })
}

/// Solves `Λ = F(Λ)` for `ε = params.epsilon > 0` on `grid`.
pub fn solve_regularized(
    f: &DensitySpec,
    params: &ModelParams,
    grid: TimeGrid,
    cfg: &PicardConfig,
) -> Result<SolveReport> {
    validate_model(f, params)?;
    if !(params.epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(params.epsilon));
    }
    cfg.validate()?;
    let f_eps = mollify(f, params.epsilon)?;
    let lipschitz = f_eps.sup_norm() / params.epsilon;
    let initial_window = cfg.initial_window(&f_eps, &grid);

    let mut warnings = Vec::new();
    let mut reliable = true;
    let (outcome, stats) = match &cfg.evaluator {
        Evaluator::Pde(opts) => {
            let mut engine = PdeWindowEngine::new(&f_eps, params, grid, opts)?;
            let outcome = iterate_windows(&mut engine, &grid, lipschitz, cfg, initial_window)?;
            let boundary = BoundaryPath::new(grid, outcome.values.clone(), lipschitz)?;
            let scheme_error = scheme_error_estimate(&f_eps, &boundary, params, opts)?;
            let stats = SolveStats {
                scheme_error: Some(scheme_error),
                ..SolveStats::default()
            };
            (outcome, stats)
        }
        Evaluator::MonteCarlo(ens) => {
            if params.epsilon < MC_RELIABLE_EPSILON {
                reliable = false;
                warnings.push(format!(
                    "Monte Carlo weights exp(-α L / ε) degenerate for ε = {} < {MC_RELIABLE_EPSILON}; \
                     prefer the PDE evaluator",
                    params.epsilon
                ));
            }
            let mut engine = FkWindowEngine::new(f, params, grid, ens)?;
            let outcome = iterate_windows(&mut engine, &grid, lipschitz, cfg, initial_window)?;
            let estimate = engine.estimate();
            let stats = SolveStats {
                max_ci: Some(estimate.max_ci()),
                ci: Some(estimate.ci),
                scheme_error: None,
            };
            (outcome, stats)
        }
    };

    let boundary = BoundaryPath::new(grid, outcome.values, lipschitz)?;
    let residual = outcome
        .image
        .iter()
        .zip(boundary.values())
        .map(|(f, l)| (f - l).abs())
        .fold(0.0, f64::max);
    let total_iterations = outcome.windows.iter().map(|w| w.iterations).sum();
    Ok(SolveReport {
        epsilon: params.epsilon,
        evaluator: cfg.evaluator.kind(),
        boundary,
        image: outcome.image,
        residual,
        windows: outcome.windows,
        total_iterations,
        stats,
        reliable,
        warnings,
    })
}

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct LimitConfig {
    pub ensemble: EnsembleConfig,
    /// Stop once successive sweeps differ by at most this in sup-norm.
    pub tol: f64,
    #[serde(default = "default_max_sweeps")]
    pub max_sweeps: usize,
}

fn default_max_sweeps() -> usize {
    200
}

impl LimitConfig {
    pub fn new(ensemble: EnsembleConfig, tol: f64) -> Self {
        Self {
            ensemble,
            tol,
            max_sweeps: default_max_sweeps(),
        }
    }
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct LimitReport {
    pub boundary: BoundaryPath,
    pub sweeps: usize,
    /// Sup-norm change of the last sweep.
    pub last_change: f64,
    /// Sup-norm change of every sweep, in order.
    pub changes: Vec<f64>,
    /// Pointwise binomial 99% half-widths of the last sweep.
    pub ci: Vec<f64>,
    pub max_ci: f64,
}

/// Iterates `Λ ↦ (2/α) P(τ_Λ <= ·)` from `Λ ≡ 0`; `params.epsilon` is ignored.
pub fn solve_limit(
    f: &DensitySpec,
    params: &ModelParams,
    grid: TimeGrid,
    cfg: &LimitConfig,
) -> Result<LimitReport> {
    validate_model(f, params)?;
    cfg.ensemble.validate()?;
    if !(cfg.tol.is_finite() && cfg.tol > 0.0) {
        return Err(Error::InvalidParameter {
            name: "tol",
            value: cfg.tol,
            constraint: "must be finite and positive",
        });
    }
    let mut lambda = BoundaryPath::zero(grid);
    let mut changes = Vec::new();
    for sweep in 1..=cfg.max_sweeps {
        let next = hitting_estimate(f, &lambda, params, &cfg.ensemble)?;
        let change = next.boundary.sup_distance(&lambda)?;
        changes.push(change);
        lambda = next.boundary;
        if change <= cfg.tol {
            return Ok(LimitReport {
                boundary: lambda,
                sweeps: sweep,
                last_change: change,
                changes,
                max_ci: next.ci.iter().copied().fold(0.0, f64::max),
                ci: next.ci,
            });
        }
    }
    Err(Error::NotConverged {
        sweeps: cfg.max_sweeps,
        change: changes.last().copied().unwrap_or(f64::INFINITY),
    })
}
