//! Time grids and sampled free boundaries.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};

/// Uniform partition `t_k = k * dt`, `k = 0..=n_steps`, of `[0, t_max]`.
#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
pub struct TimeGrid {
    t_max: f64,
    n_steps: usize,
    dt: f64,
}

impl TimeGrid {
    pub fn new(t_max: f64, n_steps: usize) -> Result<Self> {
        if !(t_max.is_finite() && t_max > 0.0) {
            return Err(Error::InvalidParameter {
                name: "t_max",
                value: t_max,
                constraint: "must be finite and positive",
            });
        }
        if n_steps == 0 {
            return Err(Error::InvalidParameter {
                name: "n_steps",
                value: 0.0,
                constraint: "must be at least 1",
            });
        }
        Ok(Self {
            t_max,
            n_steps,
            dt: t_max / n_steps as f64,
        })
    }

    pub fn t_max(&self) -> f64 {
        self.t_max
    }

    pub fn n_steps(&self) -> usize {
        self.n_steps
    }

    pub fn dt(&self) -> f64 {
        self.dt
    }

    /// Number of grid points, `n_steps + 1`.
    pub fn len(&self) -> usize {
        self.n_steps + 1
    }

    pub fn is_empty(&self) -> bool {
        false
    }

    pub fn time(&self, k: usize) -> f64 {
        k as f64 * self.dt
    }

    pub fn times(&self) -> impl ExactSizeIterator<Item = f64> + '_ {
        (0..self.len()).map(move |k| self.time(k))
    }

    /// Grid index of `t`, if `t` lies on the grid up to rounding.
    pub fn index_of(&self, t: f64) -> Option<usize> {
        let k = (t / self.dt).round();
        if k < 0.0 || k > self.n_steps as f64 {
            return None;
        }
        let k = k as usize;
        ((self.time(k) - t).abs() <= 1e-9 * self.dt.max(t.abs())).then_some(k)
    }

    /// The grid with `factor` times as many steps over the same horizon.
    pub fn refined(&self, factor: usize) -> Self {
        Self::new(self.t_max, self.n_steps * factor.max(1)).expect("refinement of a valid grid")
    }
}

/// A non-decreasing boundary `Λ` sampled on a [`TimeGrid`], with `Λ(0) = 0`
/// and a recorded Lipschitz bound. Between grid points the boundary is
/// understood as the linear interpolant.
#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
pub struct BoundaryPath {
    grid: TimeGrid,
    values: Vec<f64>,
    lipschitz_bound: f64,
}

impl BoundaryPath {
    pub fn zero(grid: TimeGrid) -> Self {
        Self {
            grid,
            values: vec![0.0; grid.len()],
            lipschitz_bound: 0.0,
        }
    }

    /// Checks every invariant: `values[0] == 0`, monotone, slopes within the bound.
    pub fn new(grid: TimeGrid, values: Vec<f64>, lipschitz_bound: f64) -> Result<Self> {
        if values.len() != grid.len() {
            return Err(Error::InvalidBoundary(format!(
                "{} values for a grid of {} points",
                values.len(),
                grid.len()
            )));
        }
        if !(lipschitz_bound >= 0.0) {
            return Err(Error::InvalidBoundary(format!(
                "Lipschitz bound {lipschitz_bound} must be non-negative"
            )));
        }
        if values[0] != 0.0 {
            return Err(Error::InvalidBoundary(format!(
                "boundary must start at 0, found {}",
                values[0]
            )));
        }
        let allowed = lipschitz_bound * grid.dt() * (1.0 + 1e-10) + 1e-15;
        for (k, pair) in values.windows(2).enumerate() {
            let step = pair[1] - pair[0];
            if !(step >= 0.0) {
                return Err(Error::InvalidBoundary(format!(
                    "boundary decreases between steps {k} and {}",
                    k + 1
                )));
            }
            if step > allowed {
                return Err(Error::InvalidBoundary(format!(
                    "increment {step:e} at step {k} exceeds Lipschitz bound {lipschitz_bound}"
                )));
            }
        }
        Ok(Self {
            grid,
            values,
            lipschitz_bound,
        })
    }

    /// A monotone path whose recorded Lipschitz bound is its observed maximal slope.
    pub fn from_monotone(grid: TimeGrid, values: Vec<f64>) -> Result<Self> {
        let slope = values
            .windows(2)
            .map(|p| (p[1] - p[0]) / grid.dt())
            .fold(0.0, f64::max);
        Self::new(grid, values, slope)
    }

    /// Projects raw values onto the admissible set: starts at 0 and each
    /// increment is clamped into `[0, lipschitz_bound * dt]`.
    pub fn clamped(grid: TimeGrid, raw: &[f64], lipschitz_bound: f64) -> Result<Self> {
        if raw.len() != grid.len() {
            return Err(Error::InvalidBoundary(format!(
                "{} values for a grid of {} points",
                raw.len(),
                grid.len()
            )));
        }
        let values = clamp_increments(0.0, raw.iter().skip(1).copied(), lipschitz_bound * grid.dt());
        let mut all = Vec::with_capacity(grid.len());
        all.push(0.0);
        all.extend(values);
        Self::new(grid, all, lipschitz_bound)
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn values(&self) -> &[f64] {
        &self.values
    }

    pub fn into_values(self) -> Vec<f64> {
        self.values
    }

    pub fn lipschitz_bound(&self) -> f64 {
        self.lipschitz_bound
    }

    pub fn at(&self, k: usize) -> f64 {
        self.values[k]
    }

    pub fn last(&self) -> f64 {
        *self.values.last().expect("paths are never empty")
    }

    /// Piecewise-constant derivative on step `k -> k + 1`.
    pub fn slope(&self, k: usize) -> f64 {
        (self.values[k + 1] - self.values[k]) / self.grid.dt()
    }

    pub fn max_slope(&self) -> f64 {
        (0..self.grid.n_steps()).map(|k| self.slope(k)).fold(0.0, f64::max)
    }

    pub fn sup_distance(&self, other: &BoundaryPath) -> Result<f64> {
        if self.grid != other.grid {
            return Err(Error::GridMismatch(
                "boundaries live on different time grids".into(),
            ));
        }
        Ok(self
            .values
            .iter()
            .zip(&other.values)
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max))
    }

    /// `self <= other` at every grid point.
    pub fn is_below(&self, other: &BoundaryPath) -> bool {
        self.grid == other.grid && self.values.iter().zip(&other.values).all(|(a, b)| a <= b)
    }

    /// Linear interpolation onto a grid with `factor` times as many steps.
    pub fn refined(&self, factor: usize) -> Self {
        let factor = factor.max(1);
        let grid = self.grid.refined(factor);
        let mut values = Vec::with_capacity(grid.len());
        for pair in self.values.windows(2) {
            for j in 0..factor {
                let s = j as f64 / factor as f64;
                values.push(pair[0] + s * (pair[1] - pair[0]));
            }
        }
        values.push(self.last());
        Self {
            grid,
            values,
            lipschitz_bound: self.lipschitz_bound,
        }
    }
}

/// Running clamp of a sequence against its predecessor: each output lies in
/// `[prev, prev + max_step]`.
pub(crate) fn clamp_increments(
    start: f64,
    raw: impl IntoIterator<Item = f64>,
    max_step: f64,
) -> Vec<f64> {
    let mut prev = start;
    raw.into_iter()
        .map(|v| {
            let next = v.max(prev).min(prev + max_step);
            prev = next;
            next
        })
        .collect()
}
