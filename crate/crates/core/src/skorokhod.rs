//! The one-sided Skorokhod map at zero and its regulator.
//!
//! For a path `y` the regulator is `ℓ(t) = max(0, -min_{s<=t} y(s))` and the
//! reflected path is `y + ℓ >= 0`. Throughout the crate the local time of
//! the reflected process at zero *is* this regulator; there is no other
//! convention and no other implementation of it.
//!
//! The streaming pieces ([`RegulatorTracker`], [`step_minimum_reaching`]) are
//! what the Monte Carlo engines use per particle; the path-level functions
//! are thin loops over them.

use crate::grid::TimeGrid;

/// Smallest value a bridge uniform produced by
/// [`unit_open_closed`](crate::montecarlo::unit_open_closed) can take.
pub const MIN_BRIDGE_UNIFORM: f64 = 1.0 / (1u64 << 53) as f64;

/// Above this, `exp(-E) < 2^-53 <= w`, so a step minimum cannot reach the level.
const BRIDGE_EXPONENT_CUTOFF: f64 = 40.0;

#[derive(Debug, Clone, PartialEq)]
pub struct DiscretePath {
    pub grid: TimeGrid,
    pub values: Vec<f64>,
}

impl DiscretePath {
    /// # Panics
    /// If `values.len() != grid.len()`.
    pub fn new(grid: TimeGrid, values: Vec<f64>) -> Self {
        assert_eq!(values.len(), grid.len(), "one value per grid point");
        Self { grid, values }
    }
}

#[derive(Debug, Clone, PartialEq)]
pub struct ReflectedPath {
    pub reflected: DiscretePath,
    pub regulator: DiscretePath,
}

/// Running state of `max(0, -min y)`: tracks `min(0, y(t_0), ..., )`.
#[derive(Debug, Clone, Copy, PartialEq)]
pub struct RegulatorTracker {
    floor: f64,
}

impl RegulatorTracker {
    pub fn new(y0: f64) -> Self {
        Self {
            floor: y0.min(0.0),
        }
    }

    /// Folds in a grid value; returns whether the regulator grew.
    #[inline]
    pub fn observe(&mut self, y: f64) -> bool {
        let moved = y < self.floor;
        if moved {
            self.floor = y;
        }
        moved
    }

    /// Folds in the bridge minimum over one step from `a` to `b`.
    /// Requires `w >= MIN_BRIDGE_UNIFORM`.
    #[inline]
    pub fn observe_bridge(&mut self, a: f64, b: f64, dt: f64, w: f64) -> bool {
        match step_minimum_reaching(a, b, dt, w, self.floor) {
            Some(m) => {
                let moved = m < self.floor;
                self.floor = self.floor.min(m);
                moved
            }
            None => false,
        }
    }

    #[inline]
    pub fn value(&self) -> f64 {
        0.0 - self.floor
    }
}

/// Sampled minimum of a Brownian bridge from `a` to `b` over a step of
/// length `dt`, given a uniform `w` in `(0, 1]`:
/// `((a + b) - sqrt((b - a)² - 2 dt ln w)) / 2`. `w = 1` gives `min(a, b)`.
#[inline]
pub fn step_minimum(a: f64, b: f64, dt: f64, w: f64) -> f64 {
    let lo = a.min(b);
    if w >= 1.0 {
        return lo;
    }
    let d = b - a;
    let m = 0.5 * ((a + b) - (d * d - 2.0 * dt * w.ln()).sqrt());
    m.min(lo)
}

/// `Some(step_minimum(a, b, dt, w))` if that minimum is `<= level`, else
/// `None`; skips the transcendental work when the bridge provably stays
/// above `level`. Requires `w >= MIN_BRIDGE_UNIFORM`.
#[inline]
pub fn step_minimum_reaching(a: f64, b: f64, dt: f64, w: f64, level: f64) -> Option<f64> {
    debug_assert!(w >= MIN_BRIDGE_UNIFORM);
    if a.min(b) > level {
        // The minimum reaches `level` iff w <= exp(-2 (a - level)(b - level) / dt).
        let exponent = 2.0 * (a - level) * (b - level) / dt;
        if exponent > BRIDGE_EXPONENT_CUTOFF {
            return None;
        }
    }
    let m = step_minimum(a, b, dt, w);
    (m <= level).then_some(m)
}

/// `ℓ(t_k) = max(0, -min_{j<=k} y(t_j))`, one forward pass.
pub fn regulator(y: &DiscretePath) -> DiscretePath {
    let mut tracker = RegulatorTracker::new(y.values[0]);
    let values = y
        .values
        .iter()
        .map(|&v| {
            tracker.observe(v);
            tracker.value()
        })
        .collect();
    DiscretePath::new(y.grid, values)
}

/// The Skorokhod decomposition `(y + ℓ, ℓ)`.
pub fn reflect(y: &DiscretePath) -> ReflectedPath {
    let reg = regulator(y);
    let reflected = y
        .values
        .iter()
        .zip(&reg.values)
        .map(|(a, l)| a + l)
        .collect();
    ReflectedPath {
        reflected: DiscretePath::new(y.grid, reflected),
        regulator: reg,
    }
}

/// Regulator of the path completed by per-step Brownian-bridge minima.
/// `w[k]` drives the bridge on step `k -> k + 1`; any `w` in `(0, 1]` is accepted.
///
/// Within a step the drift is taken as linear, so for a path built as
/// `x0 + B - Λ` with piecewise-linear `Λ` the bridge is exact.
pub fn bridge_refined_regulator(y: &DiscretePath, w: &[f64]) -> DiscretePath {
    assert_eq!(w.len(), y.grid.n_steps(), "one bridge uniform per step");
    let dt = y.grid.dt();
    let mut tracker = RegulatorTracker::new(y.values[0]);
    let mut values = Vec::with_capacity(y.values.len());
    values.push(tracker.value());
    for (pair, &wk) in y.values.windows(2).zip(w) {
        tracker.observe(step_minimum(pair[0], pair[1], dt, wk));
        values.push(tracker.value());
    }
    DiscretePath::new(y.grid, values)
}
