//! ε-sweeps towards the limit problem and cross-checks of the two evaluators.

use rayon::prelude::*;
use serde::Serialize;

use crate::density::{mollify, DensitySpec};
use crate::error::{Error, Result};
use crate::fixedpoint::{
    solve_limit, solve_regularized, Evaluator, LimitConfig, LimitReport, PicardConfig, SolveReport,
};
use crate::grid::{BoundaryPath, TimeGrid};
use crate::model::{validate_model, ModelParams};
use crate::montecarlo::{fk_estimate, EnsembleConfig};
use crate::pde::{fk_map_pde, scheme_error_estimate, PdeOptions};

#[derive(Debug, Clone, PartialEq)]
pub struct SweepConfig {
    /// Strictly decreasing, all positive.
    pub epsilons: Vec<f64>,
    /// Iteration settings; its evaluator solves every `Λ_ε`.
    pub picard: PicardConfig,
    /// Both evaluators, used for the cross-check at each solution.
    pub pde: PdeOptions,
    pub ensemble: EnsembleConfig,
    pub limit: LimitConfig,
}

/// `Λ_{ε_i}(t) > Λ_{ε_{i+1}}(t) + tol_mono`: the larger `ε` gave the larger
/// boundary by more than the statistical tolerance.
#[derive(Debug, Clone, Copy, PartialEq, Serialize)]
pub struct Violation {
    pub larger_epsilon: f64,
    pub smaller_epsilon: f64,
    pub t: f64,
    /// `Λ_{ε_i}(t) - Λ_{ε_{i+1}}(t)`, the size of the inversion.
    pub magnitude: f64,
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct SweepReport {
    pub epsilons: Vec<f64>,
    pub solutions: Vec<SolveReport>,
    pub limit: LimitReport,
    /// `sup_t |Λ_ε(t) - Λ(t)|` per `ε`.
    pub sup_distances: Vec<f64>,
    pub tol_mono: f64,
    /// The worst inversion of each offending adjacent pair.
    pub monotonicity_violations: Vec<Violation>,
    /// `sup_t |F_pde(Λ_ε) - F_mc(Λ_ε)|` per `ε`.
    pub fk_gaps: Vec<f64>,
    /// Largest statistical or discretization error indicator among the solutions.
    pub max_error_indicator: f64,
}

impl SweepReport {
    pub fn boundaries(&self) -> impl Iterator<Item = &BoundaryPath> {
        self.solutions.iter().map(|s| &s.boundary)
    }
}

fn error_indicator(report: &SolveReport) -> f64 {
    report
        .stats
        .max_ci
        .or(report.stats.scheme_error)
        .unwrap_or(0.0)
}

/// Adjacent-pair audit of the ordering `Λ_{ε_i} <= Λ_{ε_{i+1}}`.
pub fn monotonicity_violations(
    epsilons: &[f64],
    boundaries: &[&BoundaryPath],
    tol_mono: f64,
) -> Vec<Violation> {
    let mut out = Vec::new();
    for (i, pair) in boundaries.windows(2).enumerate() {
        let (hi_eps, lo_eps) = (pair[0], pair[1]);
        let worst = hi_eps
            .values()
            .iter()
            .zip(lo_eps.values())
            .enumerate()
            .map(|(k, (a, b))| (k, a - b))
            .filter(|&(_, d)| d > tol_mono)
            .max_by(|x, y| x.1.total_cmp(&y.1));
        if let Some((k, magnitude)) = worst {
            out.push(Violation {
                larger_epsilon: epsilons[i],
                smaller_epsilon: epsilons[i + 1],
                t: hi_eps.grid().time(k),
                magnitude,
            });
        }
    }
    out
}

/// Solves `Λ_ε` for every `ε` (same seed for the Monte Carlo evaluator), the
/// limit problem once, and assembles distances, ordering audit and
/// evaluator gaps.
pub fn epsilon_sweep(
    f: &DensitySpec,
    alpha: f64,
    grid: TimeGrid,
    cfg: &SweepConfig,
) -> Result<SweepReport> {
    let limit_params = ModelParams::new(alpha, 0.0)?;
    validate_model(f, &limit_params)?;
    if cfg.epsilons.is_empty() {
        return Err(Error::PreconditionFailed("the sweep needs at least one epsilon".into()));
    }
    if let Some(&bad) = cfg.epsilons.iter().find(|e| !(**e > 0.0) || !e.is_finite()) {
        return Err(Error::NonPositiveEpsilon(bad));
    }
    if cfg.epsilons.windows(2).any(|w| w[0] <= w[1]) {
        return Err(Error::PreconditionFailed("epsilons must be strictly decreasing".into()));
    }

    let solutions: Vec<SolveReport> = cfg
        .epsilons
        .par_iter()
        .map(|&eps| {
            let params = ModelParams::new(alpha, eps)?;
            solve_regularized(f, &params, grid, &cfg.picard)
        })
        .collect::<Result<_>>()?;
    let limit = solve_limit(f, &limit_params, grid, &cfg.limit)?;

    let fk_gaps: Vec<f64> = solutions
        .par_iter()
        .map(|s| {
            let params = ModelParams::new(alpha, s.epsilon)?;
            let (pde, mc) = match &cfg.picard.evaluator {
                Evaluator::MonteCarlo(_) => {
                    let f_eps = mollify(f, s.epsilon)?;
                    let pde = fk_map_pde(&f_eps, &s.boundary, &params, &cfg.pde)?;
                    (pde.into_values(), s.image.clone())
                }
                Evaluator::Pde(_) => {
                    let mc = fk_estimate(f, &s.boundary, &params, &cfg.ensemble)?;
                    (s.image.clone(), mc.boundary.into_values())
                }
            };
            Ok(sup_gap(&pde, &mc))
        })
        .collect::<Result<_>>()?;

    let sup_distances = solutions
        .iter()
        .map(|s| s.boundary.sup_distance(&limit.boundary))
        .collect::<Result<Vec<_>>>()?;
    let max_error_indicator = solutions.iter().map(error_indicator).fold(0.0, f64::max);
    let tol_mono = 2.0 * (cfg.picard.tol + max_error_indicator);
    let boundaries: Vec<&BoundaryPath> = solutions.iter().map(|s| &s.boundary).collect();
    let violations = monotonicity_violations(&cfg.epsilons, &boundaries, tol_mono);

    Ok(SweepReport {
        epsilons: cfg.epsilons.clone(),
        solutions,
        limit,
        sup_distances,
        tol_mono,
        monotonicity_violations: violations,
        fk_gaps,
        max_error_indicator,
    })
}

fn sup_gap(a: &[f64], b: &[f64]) -> f64 {
    a.iter().zip(b).map(|(x, y)| (x - y).abs()).fold(0.0, f64::max)
}

#[derive(Debug, Clone, PartialEq, Serialize)]
pub struct FkCrossValidation {
    pub epsilon: f64,
    pub f_pde: Vec<f64>,
    pub f_mc: Vec<f64>,
    /// `sup_t |F_pde(Λ)(t) - F_mc(Λ)(t)|`.
    pub gap: f64,
    /// Monte Carlo 99% half-widths per grid time.
    pub ci: Vec<f64>,
    pub ci_max: f64,
    pub scheme_error: f64,
    /// `3 (ci_max + scheme_error)`.
    pub bound: f64,
    pub pass: bool,
}

/// Evaluates `F(Λ)` with both evaluators and checks
/// `gap <= 3 (CI half-width + scheme error estimate)`.
pub fn fk_cross_validate(
    f: &DensitySpec,
    params: &ModelParams,
    lambda: &BoundaryPath,
    pde: &PdeOptions,
    ensemble: &EnsembleConfig,
) -> Result<FkCrossValidation> {
    validate_model(f, params)?;
    let f_eps = mollify(f, params.epsilon)?;
    let f_pde = fk_map_pde(&f_eps, lambda, params, pde)?.into_values();
    let scheme_error = scheme_error_estimate(&f_eps, lambda, params, pde)?;
    let mc = fk_estimate(f, lambda, params, ensemble)?;
    let ci_max = mc.max_ci();
    let f_mc = mc.boundary.into_values();
    let gap = sup_gap(&f_pde, &f_mc);
    let bound = 3.0 * (ci_max + scheme_error);
    Ok(FkCrossValidation {
        epsilon: params.epsilon,
        gap,
        ci: mc.ci,
        ci_max,
        scheme_error,
        bound,
        pass: gap <= bound,
        f_pde,
        f_mc,
    })
}
