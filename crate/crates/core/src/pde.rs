//! The Robin-boundary heat equation behind the Feynman-Kac map.
//!
//! The sub-probability density `p(t, x)` of the killed reflected process
//! solves
//!
//! ```text
//! p_t = ½ p_xx + Λ'(t) p_x            on x > 0,
//! p_x(t, 0) = (α/ε - 2Λ'(t)) p(t, 0),
//! p(0, ·) = f_ε,
//! ```
//!
//! and `F(Λ)(t) = (1/ε) ∫_0^t p(s, 0) ds`. The discretization is implicit
//! Euler in time, centered diffusion, upwind drift and a ghost-node closure
//! of the Robin condition, on nodes `x_i = i dx` with `p = 0` at `x_max`.
//! Every step assembles an M-matrix whose rows sum to at least `1/dt`, so
//! the scheme is positivity preserving and obeys the discrete maximum
//! principle.

use serde::{Deserialize, Serialize};

use crate::density::MollifiedDensity;
use crate::error::{Error, Result};
use crate::grid::{BoundaryPath, TimeGrid};
use crate::model::ModelParams;

/// Nodes `x_i = i dx`, `i = 0..=n_cells`; the last node carries `p = 0`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct SpaceGrid {
    dx: f64,
    n_cells: usize,
}

impl SpaceGrid {
    /// Rounds `x_max / dx` up to a whole number of cells.
    pub fn new(dx: f64, x_max: f64) -> Result<Self> {
        if !(dx.is_finite() && dx > 0.0) {
            return Err(Error::InvalidParameter {
                name: "dx",
                value: dx,
                constraint: "must be finite and positive",
            });
        }
        if !(x_max.is_finite() && x_max >= 2.0 * dx) {
            return Err(Error::InvalidParameter {
                name: "x_max",
                value: x_max,
                constraint: "must span at least two cells",
            });
        }
        let n_cells = (x_max / dx - 1e-9).ceil() as usize;
        Ok(Self { dx, n_cells })
    }

    pub fn dx(&self) -> f64 {
        self.dx
    }

    pub fn n_cells(&self) -> usize {
        self.n_cells
    }

    pub fn x_max(&self) -> f64 {
        self.n_cells as f64 * self.dx
    }

    pub fn node(&self, i: usize) -> f64 {
        i as f64 * self.dx
    }

    pub fn refined(&self) -> Self {
        Self {
            dx: 0.5 * self.dx,
            n_cells: 2 * self.n_cells,
        }
    }
}

/// Which time levels of the density to keep.
#[derive(Debug, Clone, Default, PartialEq)]
pub enum FieldStorage {
    Full,
    #[default]
    TraceOnly,
    /// Strictly increasing time-grid indices.
    Slices(Vec<usize>),
}

#[derive(Debug, Clone, PartialEq)]
pub struct PdeOptions {
    pub dx: f64,
    /// Defaults to `support_upper(f_ε) + 6 sqrt(t_max)`.
    pub x_max: Option<f64>,
    pub storage: FieldStorage,
    /// Replaces the Robin coefficient `α/ε - 2Λ'` by a constant (`0` gives a
    /// reflecting Neumann wall); for testing the discretization.
    pub robin_override: Option<f64>,
}

impl PdeOptions {
    pub fn new(dx: f64) -> Self {
        Self {
            dx,
            x_max: None,
            storage: FieldStorage::TraceOnly,
            robin_override: None,
        }
    }

    pub fn with_x_max(mut self, x_max: f64) -> Self {
        self.x_max = Some(x_max);
        self
    }

    pub fn with_storage(mut self, storage: FieldStorage) -> Self {
        self.storage = storage;
        self
    }

    pub fn space_grid(&self, f_eps: &MollifiedDensity, grid: &TimeGrid) -> Result<SpaceGrid> {
        let x_max = self
            .x_max
            .unwrap_or_else(|| f_eps.support_upper() + 6.0 * grid.t_max().sqrt());
        let space = SpaceGrid::new(self.dx, x_max)?;
        if space.x_max() < f_eps.support_upper() {
            return Err(Error::PreconditionFailed(format!(
                "x_max = {} cuts off the initial support, which extends to {}",
                space.x_max(),
                f_eps.support_upper()
            )));
        }
        Ok(space)
    }
}

/// Solution of the Robin problem on the (time grid) × (space grid) mesh.
#[derive(Debug, Clone, PartialEq)]
pub struct DensityField {
    pub grid: TimeGrid,
    pub space: SpaceGrid,
    /// Time indices of the stored rows.
    pub stored: Vec<usize>,
    /// Stored rows, `space.n_cells() + 1` values each (the last is the wall).
    pub rows: Vec<Vec<f64>>,
    /// `p(t_k, 0)` at every time index.
    pub trace: Vec<f64>,
    /// Trapezoidal mass `∫ p(t_k, x) dx` at every time index.
    pub mass: Vec<f64>,
    /// Extremes over all nodes and time levels.
    pub min_value: f64,
    pub max_value: f64,
}

impl DensityField {
    pub fn row_at(&self, k: usize) -> Option<&[f64]> {
        let j = self.stored.binary_search(&k).ok()?;
        Some(&self.rows[j])
    }

    /// `F = (1/ε) ∫ max(p(·, 0), 0)` by the trapezoidal rule on the time grid.
    pub fn boundary_map(&self, epsilon: f64) -> Result<BoundaryPath> {
        BoundaryPath::from_monotone(self.grid, integrate_trace(&self.trace, self.grid.dt(), epsilon, 0.0))
    }
}

fn integrate_trace(trace: &[f64], dt: f64, epsilon: f64, start: f64) -> Vec<f64> {
    let c = 0.5 * dt / epsilon;
    let mut acc = start;
    let mut out = Vec::with_capacity(trace.len());
    out.push(acc);
    for pair in trace.windows(2) {
        acc += c * (pair[0].max(0.0) + pair[1].max(0.0));
        out.push(acc);
    }
    out
}

fn trapezoid_mass(p: &[f64], dx: f64) -> f64 {
    let inner: f64 = p[1..].iter().sum();
    dx * (0.5 * p[0] + inner)
}

/// Implicit Euler step of the discretized operator. The unknowns are nodes
/// `0..n` where `n = n_cells`; node `n` is pinned to zero.
#[derive(Debug, Clone)]
struct RobinStepper {
    dx: f64,
    dt: f64,
    diffusion: f64,
    robin_base: f64,
    robin_override: Option<f64>,
    c_prime: Vec<f64>,
    d_prime: Vec<f64>,
}

impl RobinStepper {
    fn new(space: &SpaceGrid, grid: &TimeGrid, params: &ModelParams, robin_override: Option<f64>) -> Self {
        let n = space.n_cells();
        Self {
            dx: space.dx(),
            dt: grid.dt(),
            diffusion: 0.5 / (space.dx() * space.dx()),
            robin_base: params.alpha / params.epsilon,
            robin_override,
            c_prime: vec![0.0; n],
            d_prime: vec![0.0; n],
        }
    }

    /// Solves one step in place; `slope` is `Λ'` on the step and `step` its
    /// index, for error reporting.
    fn advance(&mut self, p: &mut [f64], slope: f64, step: usize) -> Result<()> {
        let n = self.c_prime.len();
        let d = self.diffusion;
        let inv_dt = 1.0 / self.dt;
        let drift = slope / self.dx;
        let kappa = self.robin_override.unwrap_or(self.robin_base - 2.0 * slope);

        let b0 = inv_dt + 2.0 * d * (1.0 + self.dx * kappa) + drift;
        let c0 = -(2.0 * d + drift);
        let a = -d;
        let b = inv_dt + 2.0 * d + drift;
        let c = -(d + drift);
        let m_matrix = b0 > 0.0
            && c0 <= 0.0
            && b0 >= -c0
            && b > 0.0
            && c <= 0.0
            && b >= -(a + c);
        if !m_matrix {
            return Err(Error::CflUnreasonable {
                step,
                detail: format!(
                    "Robin coefficient {kappa}, drift {slope}, dt {}, dx {}",
                    self.dt, self.dx
                ),
            });
        }

        self.c_prime[0] = c0 / b0;
        self.d_prime[0] = p[0] * inv_dt / b0;
        for i in 1..n {
            let m = b - a * self.c_prime[i - 1];
            self.c_prime[i] = c / m;
            self.d_prime[i] = (p[i] * inv_dt - a * self.d_prime[i - 1]) / m;
        }
        p[n - 1] = self.d_prime[n - 1];
        for i in (0..n - 1).rev() {
            p[i] = self.d_prime[i] - self.c_prime[i] * p[i + 1];
        }
        Ok(())
    }
}

fn check_inputs(f_eps: &MollifiedDensity, lambda: &BoundaryPath, params: &ModelParams) -> Result<()> {
    if !(params.epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(params.epsilon));
    }
    if (f_eps.epsilon() - params.epsilon).abs() > 1e-15 * params.epsilon {
        return Err(Error::PreconditionFailed(format!(
            "density is mollified at epsilon = {}, model has {}",
            f_eps.epsilon(),
            params.epsilon
        )));
    }
    let allowed = f_eps.sup_norm() / params.epsilon;
    if lambda.lipschitz_bound() > allowed * (1.0 + 1e-12) {
        return Err(Error::PreconditionLipschitz {
            bound: lambda.lipschitz_bound(),
            allowed,
        });
    }
    Ok(())
}

fn initial_state(f_eps: &MollifiedDensity, space: &SpaceGrid) -> Vec<f64> {
    (0..space.n_cells()).map(|i| f_eps.evaluate(space.node(i))).collect()
}

/// Solves the Robin problem for a given boundary.
pub fn solve_robin_pde(
    f_eps: &MollifiedDensity,
    lambda: &BoundaryPath,
    params: &ModelParams,
    opts: &PdeOptions,
) -> Result<DensityField> {
    check_inputs(f_eps, lambda, params)?;
    let grid = *lambda.grid();
    let space = opts.space_grid(f_eps, &grid)?;
    let mut stepper = RobinStepper::new(&space, &grid, params, opts.robin_override);
    let mut p = initial_state(f_eps, &space);

    let wanted = |k: usize| match &opts.storage {
        FieldStorage::Full => true,
        FieldStorage::TraceOnly => false,
        FieldStorage::Slices(s) => s.binary_search(&k).is_ok(),
    };
    let full_row = |p: &[f64]| {
        let mut row = p.to_vec();
        row.push(0.0);
        row
    };
    let extremes = |p: &[f64], lo: &mut f64, hi: &mut f64| {
        for &v in p {
            *lo = lo.min(v);
            *hi = hi.max(v);
        }
    };

    let (mut min_value, mut max_value) = (0.0f64, 0.0f64);
    extremes(&p, &mut min_value, &mut max_value);
    let mut stored = Vec::new();
    let mut rows = Vec::new();
    if wanted(0) {
        stored.push(0);
        rows.push(full_row(&p));
    }
    let mut trace = Vec::with_capacity(grid.len());
    let mut mass = Vec::with_capacity(grid.len());
    trace.push(p[0]);
    mass.push(trapezoid_mass(&p, space.dx()));
    for k in 0..grid.n_steps() {
        stepper.advance(&mut p, lambda.slope(k), k)?;
        extremes(&p, &mut min_value, &mut max_value);
        trace.push(p[0]);
        mass.push(trapezoid_mass(&p, space.dx()));
        if wanted(k + 1) {
            stored.push(k + 1);
            rows.push(full_row(&p));
        }
    }
    Ok(DensityField {
        grid,
        space,
        stored,
        rows,
        trace,
        mass,
        min_value,
        max_value,
    })
}

/// `F(Λ)` from the boundary trace of a solved field.
#[allow(non_snake_case)]
pub fn evaluate_F_pde(field: &DensityField, params: &ModelParams) -> Result<BoundaryPath> {
    if !(params.epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(params.epsilon));
    }
    field.boundary_map(params.epsilon)
}

/// Solves the Robin problem for `Λ` and returns `F(Λ)`, keeping only the trace.
///
/// ```
/// use stefan_core::pde::{fk_map_pde, PdeOptions};
/// use stefan_core::{mollify, BoundaryPath, DensitySpec, ModelParams, TimeGrid};
///
/// let f = DensitySpec::uniform(0.0, 1.0).unwrap();
/// let params = ModelParams::new(3.0, 0.5).unwrap();
/// let f_eps = mollify(&f, 0.5).unwrap();
/// let lambda = BoundaryPath::zero(TimeGrid::new(0.25, 64).unwrap());
/// let out = fk_map_pde(&f_eps, &lambda, &params, &PdeOptions::new(1.0 / 64.0)).unwrap();
/// assert!(out.last() > 0.0 && out.last() < params.boundary_cap());
/// ```
pub fn fk_map_pde(
    f_eps: &MollifiedDensity,
    lambda: &BoundaryPath,
    params: &ModelParams,
    opts: &PdeOptions,
) -> Result<BoundaryPath> {
    let trace_only = PdeOptions {
        storage: FieldStorage::TraceOnly,
        ..opts.clone()
    };
    evaluate_F_pde(&solve_robin_pde(f_eps, lambda, params, &trace_only)?, params)
}

/// `|∫p(t_k, ·) - 1 + (α/2) F(t_k)|` for every time index: the defect of the
/// mass balance (zero for the exact solution).
pub fn mass_identity_residual(
    field: &DensityField,
    f: &BoundaryPath,
    params: &ModelParams,
) -> Result<Vec<f64>> {
    if f.grid() != &field.grid {
        return Err(Error::GridMismatch("F and the field use different time grids".into()));
    }
    Ok(field
        .mass
        .iter()
        .zip(f.values())
        .map(|(m, v)| (m - 1.0 + 0.5 * params.alpha * v).abs())
        .collect())
}

/// Richardson-type estimate of the discretization error of `F(Λ)`: the
/// scheme is first order, so `2 sup |F_h - F_{h/2}|` over the coarse grid,
/// with `(dt, dx)` both halved and `Λ` interpolated.
pub fn scheme_error_estimate(
    f_eps: &MollifiedDensity,
    lambda: &BoundaryPath,
    params: &ModelParams,
    opts: &PdeOptions,
) -> Result<f64> {
    let coarse = fk_map_pde(f_eps, lambda, params, opts)?;
    let space = opts.space_grid(f_eps, lambda.grid())?;
    let fine_opts = PdeOptions {
        dx: 0.5 * opts.dx,
        x_max: Some(space.x_max()),
        ..opts.clone()
    };
    let fine = fk_map_pde(f_eps, &lambda.refined(2), params, &fine_opts)?;
    Ok(2.0
        * coarse
            .values()
            .iter()
            .enumerate()
            .map(|(k, v)| (v - fine.at(2 * k)).abs())
            .fold(0.0, f64::max))
}

/// The Robin solver checkpointed at a window start, for windowed Picard
/// iteration: [`evaluate`](Self::evaluate) restarts from the checkpoint for
/// every trial boundary, [`commit`](Self::commit) keeps the last trial.
pub struct PdeWindowEngine {
    grid: TimeGrid,
    epsilon: f64,
    stepper: RobinStepper,
    state: Vec<f64>,
    values: Vec<f64>,
    trace_at_checkpoint: f64,
    committed: usize,
    pending: Option<PdePending>,
}

struct PdePending {
    end: usize,
    state: Vec<f64>,
    values: Vec<f64>,
}

impl PdeWindowEngine {
    pub fn new(
        f_eps: &MollifiedDensity,
        params: &ModelParams,
        grid: TimeGrid,
        opts: &PdeOptions,
    ) -> Result<Self> {
        check_inputs(f_eps, &BoundaryPath::zero(grid), params)?;
        let space = opts.space_grid(f_eps, &grid)?;
        let state = initial_state(f_eps, &space);
        let values = vec![0.0; grid.len()];
        Ok(Self {
            grid,
            epsilon: params.epsilon,
            stepper: RobinStepper::new(&space, &grid, params, opts.robin_override),
            trace_at_checkpoint: state[0],
            state,
            values,
            committed: 0,
            pending: None,
        })
    }

    pub fn committed(&self) -> usize {
        self.committed
    }

    /// `F(Λ)` at `committed..=end` for a trial boundary; only
    /// `lambda[committed..=end]` is read.
    pub fn evaluate(&mut self, lambda: &[f64], end: usize) -> Result<Vec<f64>> {
        assert!(end > self.committed && end <= self.grid.n_steps());
        assert_eq!(lambda.len(), self.grid.len());
        let k0 = self.committed;
        let dt = self.grid.dt();
        let mut p = self.state.clone();
        let mut trace = Vec::with_capacity(end - k0 + 1);
        trace.push(self.trace_at_checkpoint);
        for k in k0..end {
            self.stepper.advance(&mut p, (lambda[k + 1] - lambda[k]) / dt, k)?;
            trace.push(p[0]);
        }
        let values = integrate_trace(&trace, dt, self.epsilon, self.values[k0]);
        self.pending = Some(PdePending {
            end,
            state: p,
            values: values.clone(),
        });
        Ok(values)
    }

    /// # Panics
    /// If nothing has been evaluated since the last commit.
    pub fn commit(&mut self) {
        let pending = self.pending.take().expect("commit without a pending evaluation");
        let k0 = self.committed;
        self.values[k0..=pending.end].copy_from_slice(&pending.values);
        self.trace_at_checkpoint = pending.state[0];
        self.state = pending.state;
        self.committed = pending.end;
    }

    /// Committed values of `F` on `0..=committed`.
    pub fn values(&self) -> &[f64] {
        &self.values[..=self.committed]
    }
}

#[cfg(test)]
mod tests {
    use super::*;
    use crate::density::{mollify, DensitySpec};

    fn setup(eps: f64) -> (MollifiedDensity, ModelParams) {
        let f = DensitySpec::uniform(0.0, 1.0).unwrap();
        (mollify(&f, eps).unwrap(), ModelParams::new(3.0, eps).unwrap())
    }

    #[test]
    fn space_grid_rounds_up() {
        let s = SpaceGrid::new(0.25, 1.1).unwrap();
        assert_eq!(s.n_cells(), 5);
        assert_eq!(SpaceGrid::new(0.25, 1.0).unwrap().n_cells(), 4);
        assert!(SpaceGrid::new(0.0, 1.0).is_err());
    }

    #[test]
    fn neumann_wall_conserves_mass() {
        let (f_eps, params) = setup(0.5);
        let lambda = BoundaryPath::zero(TimeGrid::new(0.5, 128).unwrap());
        let mut opts = PdeOptions::new(1.0 / 128.0).with_x_max(8.0);
        opts.robin_override = Some(0.0);
        let field = solve_robin_pde(&f_eps, &lambda, &params, &opts).unwrap();
        assert!(field.mass.iter().all(|m| (m - 1.0).abs() < 1e-10));
        let r = mass_identity_residual(&field, &BoundaryPath::zero(*lambda.grid()), &params).unwrap();
        assert!(r.iter().all(|&r| r <= 1e-10));
    }

    #[test]
    fn trapezoid_in_time_is_exact_on_constant_traces() {
        let grid = TimeGrid::new(1.0, 8).unwrap();
        let space = SpaceGrid::new(0.5, 2.0).unwrap();
        let field = DensityField {
            grid,
            space,
            stored: vec![],
            rows: vec![],
            trace: vec![0.3; 9],
            mass: vec![1.0; 9],
            min_value: 0.0,
            max_value: 0.3,
        };
        let params = ModelParams::new(3.0, 0.5).unwrap();
        let f = evaluate_F_pde(&field, &params).unwrap();
        for (k, t) in grid.times().enumerate() {
            assert!((f.at(k) - 0.3 * t / 0.5).abs() < 1e-15);
        }
    }

    #[test]
    fn negative_robin_coefficient_is_rejected() {
        let (f_eps, params) = setup(0.5);
        let lambda = BoundaryPath::zero(TimeGrid::new(0.5, 16).unwrap());
        let mut opts = PdeOptions::new(0.05);
        opts.robin_override = Some(-100.0);
        let err = solve_robin_pde(&f_eps, &lambda, &params, &opts).unwrap_err();
        assert!(matches!(err, Error::CflUnreasonable { step: 0, .. }));
    }

    #[test]
    fn steep_boundaries_violate_the_lipschitz_precondition() {
        let (f_eps, params) = setup(0.5);
        let grid = TimeGrid::new(1.0, 10).unwrap();
        let steep = BoundaryPath::new(grid, grid.times().map(|t| 5.0 * t).collect(), 5.0).unwrap();
        let err = fk_map_pde(&f_eps, &steep, &params, &PdeOptions::new(0.05)).unwrap_err();
        assert!(matches!(err, Error::PreconditionLipschitz { .. }));
    }

    #[test]
    fn storage_modes() {
        let (f_eps, params) = setup(0.5);
        let lambda = BoundaryPath::zero(TimeGrid::new(0.25, 8).unwrap());
        let base = PdeOptions::new(0.1).with_x_max(4.0);
        let full = solve_robin_pde(&f_eps, &lambda, &params, &base.clone().with_storage(FieldStorage::Full)).unwrap();
        assert_eq!(full.rows.len(), 9);
        assert_eq!(full.rows[0].len(), 41);
        assert_eq!(*full.rows[3].last().unwrap(), 0.0);
        let some = solve_robin_pde(
            &f_eps,
            &lambda,
            &params,
            &base.clone().with_storage(FieldStorage::Slices(vec![2, 8])),
        )
        .unwrap();
        assert_eq!(some.row_at(8), full.row_at(8));
        assert_eq!(some.row_at(3), None);
        assert_eq!(some.trace, full.trace);
    }

    #[test]
    fn window_engine_matches_direct_solve() {
        let (f_eps, params) = setup(0.4);
        let grid = TimeGrid::new(0.5, 50).unwrap();
        let values: Vec<f64> = grid.times().map(|t| 0.3 * t * t).collect();
        let lambda = BoundaryPath::from_monotone(grid, values.clone()).unwrap();
        let opts = PdeOptions::new(0.02).with_x_max(5.0);
        let direct = fk_map_pde(&f_eps, &lambda, &params, &opts).unwrap();
        let mut engine = PdeWindowEngine::new(&f_eps, &params, grid, &opts).unwrap();
        let mut trial = values.clone();
        for end in [10, 11, 37, 50] {
            for v in &mut trial[engine.committed() + 1..] {
                *v *= 1.5;
            }
            engine.evaluate(&trial, end).unwrap();
            trial.copy_from_slice(&values);
            engine.evaluate(&trial, end).unwrap();
            engine.commit();
        }
        assert_eq!(engine.values(), direct.values());
    }
}
