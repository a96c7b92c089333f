//! Particle ensembles for the local time of `X_0 + B - Λ` at zero.
//!
//! Every particle owns a ChaCha8 stream selected by `(seed, particle index)`
//! and consumes it in a fixed order: two uniforms for the initial position,
//! then per step one normal increment and, with bridge refinement, one
//! uniform in `(0, 1]`. Nothing drawn depends on `Λ` or `ε`, so two runs with
//! the same seed are driven by the same Brownian motion (common random
//! numbers) and the pathwise comparison principle carries over to the
//! estimates.
//!
//! Sums over particles are formed per fixed-size chunk and the chunk results
//! are combined in chunk order, which makes every estimate bitwise
//! independent of the number of worker threads.

use rand::{Rng, RngCore, SeedableRng};
use rand_chacha::ChaCha8Rng;
use rand_distr::StandardNormal;
use rayon::prelude::*;
use serde::{Deserialize, Serialize};

use crate::density::{sample_coupled_initial, DensitySpec};
use crate::error::{Error, Result};
use crate::grid::{BoundaryPath, TimeGrid};
use crate::model::ModelParams;
use crate::skorokhod::{step_minimum_reaching, RegulatorTracker, MIN_BRIDGE_UNIFORM};

/// Two-sided 99% normal quantile.
pub const Z99: f64 = 2.576;

/// Particles per reduction chunk.
pub(crate) const CHUNK: usize = 2048;

/// Bridge refinement switches on automatically at or below this `ε`.
pub const AUTO_BRIDGE_EPSILON: f64 = 0.1;

#[derive(Debug, Clone, Copy, PartialEq, Serialize, Deserialize)]
#[serde(deny_unknown_fields)]
pub struct EnsembleConfig {
    pub n_particles: usize,
    pub seed: u64,
    /// `None` chooses by `ε` (see [`EnsembleConfig::bridge_for`]).
    #[serde(default)]
    pub bridge_refinement: Option<bool>,
    #[serde(default)]
    pub antithetic: bool,
    /// Keep each particle's initial uniforms in the ensemble record.
    #[serde(default)]
    pub retain_uniforms: bool,
}

impl EnsembleConfig {
    pub fn new(n_particles: usize, seed: u64) -> Self {
        Self {
            n_particles,
            seed,
            bridge_refinement: None,
            antithetic: false,
            retain_uniforms: false,
        }
    }

    pub fn with_bridge(mut self, on: bool) -> Self {
        self.bridge_refinement = Some(on);
        self
    }

    pub fn with_antithetic(mut self, on: bool) -> Self {
        self.antithetic = on;
        self
    }

    /// Whether steps are completed by bridge minima at this `ε`. The
    /// automatic choice is on for `ε <= 0.1`, including the limit `ε = 0`.
    pub fn bridge_for(&self, epsilon: f64) -> bool {
        self.bridge_refinement
            .unwrap_or(epsilon <= AUTO_BRIDGE_EPSILON)
    }

    pub fn validate(&self) -> Result<()> {
        if self.n_particles == 0 {
            return Err(Error::InvalidParameter {
                name: "n_particles",
                value: 0.0,
                constraint: "must be at least 1",
            });
        }
        if self.antithetic && self.n_particles % 2 == 1 {
            return Err(Error::InvalidParameter {
                name: "n_particles",
                value: self.n_particles as f64,
                constraint: "must be even with antithetic pairing",
            });
        }
        Ok(())
    }
}

/// A uniform variate in `(0, 1]` on the 2^-53 lattice, never below
/// [`MIN_BRIDGE_UNIFORM`].
#[inline]
pub fn unit_open_closed<R: RngCore + ?Sized>(rng: &mut R) -> f64 {
    1.0 - (rng.next_u64() >> 11) as f64 * MIN_BRIDGE_UNIFORM
}

/// `exp(-α L / ε)`, the Feynman-Kac weight of a local time `L`.
#[inline]
pub fn fk_weight(local_time: f64, alpha: f64, epsilon: f64) -> f64 {
    (-alpha * local_time / epsilon).exp()
}

fn check_epsilon(epsilon: f64) -> Result<()> {
    if epsilon.is_finite() && epsilon >= 0.0 {
        Ok(())
    } else {
        Err(Error::InvalidParameter {
            name: "epsilon",
            value: epsilon,
            constraint: "must be finite and non-negative",
        })
    }
}

/// The random stream of particle `index`: antithetic pairs `(2j, 2j + 1)`
/// share stream `j`, and the odd member negates its increments.
pub(crate) fn particle_stream(seed: u64, index: usize, antithetic: bool) -> (ChaCha8Rng, f64) {
    let mut rng = ChaCha8Rng::seed_from_u64(seed);
    if antithetic {
        rng.set_stream((index / 2) as u64);
        (rng, if index % 2 == 1 { -1.0 } else { 1.0 })
    } else {
        rng.set_stream(index as u64);
        (rng, 1.0)
    }
}

/// Dynamic part of a particle: `free = X_0 + B(t_k)`, `y = free - Λ(t_k)`.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Motion {
    free: f64,
    y: f64,
    tracker: RegulatorTracker,
}

impl Motion {
    fn start(x0: f64) -> Self {
        Self {
            free: x0,
            y: x0,
            tracker: RegulatorTracker::new(x0),
        }
    }

    #[inline]
    pub(crate) fn local_time(&self) -> f64 {
        self.tracker.value()
    }
}

#[derive(Debug, Clone)]
pub(crate) struct Particle {
    rng: ChaCha8Rng,
    sign: f64,
    motion: Motion,
}

/// Per-run constants of the time stepping.
#[derive(Debug, Clone, Copy)]
pub(crate) struct Stepper {
    sqrt_dt: f64,
    dt: f64,
    bridge: bool,
}

impl Stepper {
    pub(crate) fn new(grid: &TimeGrid, bridge: bool) -> Self {
        Self {
            sqrt_dt: grid.dt().sqrt(),
            dt: grid.dt(),
            bridge,
        }
    }
}

impl Particle {
    pub(crate) fn spawn(
        f: &DensitySpec,
        epsilon: f64,
        seed: u64,
        index: usize,
        antithetic: bool,
    ) -> (Self, [f64; 2]) {
        let (mut rng, sign) = particle_stream(seed, index, antithetic);
        let u: f64 = rng.random();
        let v: f64 = rng.random();
        let x0 = sample_coupled_initial(f, epsilon, u, v);
        (
            Self {
                rng,
                sign,
                motion: Motion::start(x0),
            },
            [u, v],
        )
    }

    #[inline]
    fn draw(&mut self, bridge: bool) -> (f64, f64) {
        let z: f64 = self.rng.sample(StandardNormal);
        let w = if bridge {
            unit_open_closed(&mut self.rng)
        } else {
            1.0
        };
        (self.sign * z, w)
    }

    /// Advances `motion` by one step to boundary value `lambda_next`;
    /// returns whether the local time grew.
    #[inline]
    fn step(&mut self, motion: &mut Motion, lambda_next: f64, s: Stepper) -> bool {
        let (z, w) = self.draw(s.bridge);
        motion.free += s.sqrt_dt * z;
        let next = motion.free - lambda_next;
        let moved = if s.bridge {
            motion.tracker.observe_bridge(motion.y, next, s.dt, w)
        } else {
            motion.tracker.observe(next)
        };
        motion.y = next;
        moved
    }

    /// One step of the hitting problem: whether the path reaches zero.
    #[inline]
    fn step_hits(&mut self, motion: &mut Motion, lambda_next: f64, s: Stepper) -> bool {
        let (z, w) = self.draw(s.bridge);
        motion.free += s.sqrt_dt * z;
        let next = motion.free - lambda_next;
        let hit = if s.bridge {
            step_minimum_reaching(motion.y, next, s.dt, w, 0.0).is_some()
        } else {
            next <= 0.0
        };
        motion.y = next;
        hit
    }

    /// Consumes the draws of `steps` steps without moving.
    fn skip(&mut self, steps: usize, bridge: bool) {
        for _ in 0..steps {
            self.draw(bridge);
        }
    }
}

fn spawn_all(
    f: &DensitySpec,
    epsilon: f64,
    cfg: &EnsembleConfig,
) -> (Vec<Particle>, Option<Vec<[f64; 2]>>) {
    let spawned: Vec<(Particle, [f64; 2])> = (0..cfg.n_particles)
        .into_par_iter()
        .with_min_len(256)
        .map(|i| Particle::spawn(f, epsilon, cfg.seed, i, cfg.antithetic))
        .collect();
    let uniforms = cfg
        .retain_uniforms
        .then(|| spawned.iter().map(|(_, uv)| *uv).collect());
    (spawned.into_iter().map(|(p, _)| p).collect(), uniforms)
}

/// How an ensemble's randomness was produced.
#[derive(Debug, Clone, PartialEq)]
pub struct Coupling {
    pub seed: u64,
    pub antithetic: bool,
    pub bridge_refinement: bool,
    /// `(u, v)` per particle when retained.
    pub uniforms: Option<Vec<[f64; 2]>>,
}

/// Local times `L^i(t_k)` of an ensemble, stored at a chosen set of grid
/// indices (all of them by default).
#[derive(Debug, Clone)]
pub struct LocalTimeEnsemble {
    grid: TimeGrid,
    epsilon: f64,
    slices: Vec<usize>,
    local_times: Vec<f64>,
    n_particles: usize,
    coupling: Coupling,
}

impl LocalTimeEnsemble {
    /// Wraps given local-time rows (one per particle, one value per grid
    /// point), e.g. from an external simulation.
    pub fn from_local_times(grid: TimeGrid, epsilon: f64, rows: &[Vec<f64>]) -> Result<Self> {
        check_epsilon(epsilon)?;
        if rows.is_empty() {
            return Err(Error::InvalidParameter {
                name: "n_particles",
                value: 0.0,
                constraint: "must be at least 1",
            });
        }
        let mut local_times = Vec::with_capacity(rows.len() * grid.len());
        for row in rows {
            if row.len() != grid.len() {
                return Err(Error::GridMismatch(format!(
                    "local-time row of length {} on a grid of {} points",
                    row.len(),
                    grid.len()
                )));
            }
            if !(row[0] >= 0.0) || row.windows(2).any(|w| !(w[1] >= w[0])) {
                return Err(Error::PreconditionFailed(
                    "local times must be non-negative and non-decreasing".into(),
                ));
            }
            local_times.extend_from_slice(row);
        }
        Ok(Self {
            grid,
            epsilon,
            slices: (0..grid.len()).collect(),
            local_times,
            n_particles: rows.len(),
            coupling: Coupling {
                seed: 0,
                antithetic: false,
                bridge_refinement: false,
                uniforms: None,
            },
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn n_particles(&self) -> usize {
        self.n_particles
    }

    pub fn coupling(&self) -> &Coupling {
        &self.coupling
    }

    /// Grid indices at which local times are stored.
    pub fn slices(&self) -> &[usize] {
        &self.slices
    }

    pub fn is_full(&self) -> bool {
        self.slices.len() == self.grid.len()
    }

    /// Stored local times of one particle, one per slice.
    pub fn particle(&self, i: usize) -> &[f64] {
        let m = self.slices.len();
        &self.local_times[i * m..(i + 1) * m]
    }

    fn slice_position(&self, k: usize) -> Option<usize> {
        self.slices.binary_search(&k).ok()
    }

    /// All particles' local times at grid index `k`, if stored.
    pub fn at_index(&self, k: usize) -> Option<Vec<f64>> {
        let j = self.slice_position(k)?;
        Some((0..self.n_particles).map(|i| self.particle(i)[j]).collect())
    }

    /// Sample mean and standard deviation of the weight at slice `j`.
    fn weight_moments(&self, j: usize, alpha: f64) -> (f64, f64) {
        let m = self.slices.len();
        let partial: Vec<(f64, f64)> = self
            .local_times
            .par_chunks(CHUNK * m)
            .map(|rows| {
                rows.chunks(m).fold((0.0, 0.0), |(s, q), row| {
                    let e = fk_weight(row[j], alpha, self.epsilon);
                    (s + e, q + e * e)
                })
            })
            .collect();
        let (s, q) = partial
            .into_iter()
            .fold((0.0, 0.0), |(s, q), (a, b)| (s + a, q + b));
        mean_and_sd(s, q, self.n_particles)
    }
}

fn mean_and_sd(sum: f64, sum_sq: f64, n: usize) -> (f64, f64) {
    let nf = n as f64;
    let mean = sum / nf;
    if n < 2 {
        return (mean, 0.0);
    }
    let var = ((sum_sq - sum * mean) / (nf - 1.0)).max(0.0);
    (mean, var.sqrt())
}

fn check_lambda_grid(lambda: &BoundaryPath) -> Result<()> {
    if lambda.values().len() != lambda.grid().len() {
        return Err(Error::GridMismatch("boundary length differs from its grid".into()));
    }
    Ok(())
}

/// Simulates the ensemble on the grid of `lambda` and stores every local time.
///
/// ```
/// use stefan_core::montecarlo::{simulate_ensemble, EnsembleConfig};
/// use stefan_core::{BoundaryPath, DensitySpec, TimeGrid};
///
/// let f = DensitySpec::uniform(0.0, 1.0).unwrap();
/// let lambda = BoundaryPath::zero(TimeGrid::new(1.0, 64).unwrap());
/// let ens = simulate_ensemble(&f, 0.5, &lambda, &EnsembleConfig::new(100, 7)).unwrap();
/// assert_eq!(ens.particle(0).len(), 65);
/// assert!(ens.particle(3).windows(2).all(|w| w[0] <= w[1]));
/// ```
pub fn simulate_ensemble(
    f: &DensitySpec,
    epsilon: f64,
    lambda: &BoundaryPath,
    cfg: &EnsembleConfig,
) -> Result<LocalTimeEnsemble> {
    let all: Vec<usize> = (0..lambda.grid().len()).collect();
    simulate_ensemble_at(f, epsilon, lambda, cfg, &all)
}

/// Like [`simulate_ensemble`] but keeps only the grid indices in `slices`
/// (strictly increasing), which bounds memory by `n_particles * slices.len()`.
pub fn simulate_ensemble_at(
    f: &DensitySpec,
    epsilon: f64,
    lambda: &BoundaryPath,
    cfg: &EnsembleConfig,
    slices: &[usize],
) -> Result<LocalTimeEnsemble> {
    cfg.validate()?;
    check_epsilon(epsilon)?;
    check_lambda_grid(lambda)?;
    let grid = *lambda.grid();
    if slices.is_empty()
        || slices.windows(2).any(|w| w[0] >= w[1])
        || *slices.last().unwrap() > grid.n_steps()
    {
        return Err(Error::GridMismatch(
            "slices must be strictly increasing grid indices".into(),
        ));
    }
    let bridge = cfg.bridge_for(epsilon);
    let stepper = Stepper::new(&grid, bridge);
    let (mut particles, uniforms) = spawn_all(f, epsilon, cfg);
    let m = slices.len();
    let last = *slices.last().unwrap();
    let lam = lambda.values();
    let mut local_times = vec![0.0; cfg.n_particles * m];
    local_times
        .par_chunks_mut(m)
        .zip(particles.par_iter_mut())
        .with_min_len(64)
        .for_each(|(row, p)| {
            let mut motion = p.motion;
            let mut next_slice = 0;
            if slices[0] == 0 {
                row[0] = motion.local_time();
                next_slice = 1;
            }
            for k in 0..last {
                p.step(&mut motion, lam[k + 1], stepper);
                if next_slice < m && slices[next_slice] == k + 1 {
                    row[next_slice] = motion.local_time();
                    next_slice += 1;
                }
            }
        });
    Ok(LocalTimeEnsemble {
        grid,
        epsilon,
        slices: slices.to_vec(),
        local_times,
        n_particles: cfg.n_particles,
        coupling: Coupling {
            seed: cfg.seed,
            antithetic: cfg.antithetic,
            bridge_refinement: bridge,
            uniforms,
        },
    })
}

fn fk_params(ens: &LocalTimeEnsemble, params: &ModelParams) -> Result<()> {
    if !(params.epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(params.epsilon));
    }
    if params.epsilon != ens.epsilon {
        return Err(Error::PreconditionFailed(format!(
            "ensemble was simulated for epsilon = {}, not {}",
            ens.epsilon, params.epsilon
        )));
    }
    Ok(())
}

/// `F(Λ)(t_k) = (2/α)(1 - mean_i exp(-α L^i(t_k) / ε))` on every grid point.
/// Needs an ensemble with full storage.
#[allow(non_snake_case)]
pub fn evaluate_F_mc(ens: &LocalTimeEnsemble, params: &ModelParams) -> Result<BoundaryPath> {
    fk_params(ens, params)?;
    if !ens.is_full() {
        return Err(Error::GridMismatch(
            "evaluating F on the grid needs local times at every grid point".into(),
        ));
    }
    let cap = params.boundary_cap();
    let values = (0..ens.grid.len())
        .map(|j| cap * (1.0 - ens.weight_moments(j, params.alpha).0))
        .collect();
    BoundaryPath::from_monotone(ens.grid, values)
}

/// Half-width of the 99% confidence interval of `F(Λ)(t)`;
/// `t` must be a stored grid time.
pub fn ci_halfwidth(ens: &LocalTimeEnsemble, params: &ModelParams, t: f64) -> Result<f64> {
    fk_params(ens, params)?;
    let j = ens
        .grid
        .index_of(t)
        .and_then(|k| ens.slice_position(k))
        .ok_or_else(|| Error::GridMismatch(format!("t = {t} is not a stored grid time")))?;
    let (_, sd) = ens.weight_moments(j, params.alpha);
    Ok(Z99 * params.boundary_cap() * sd / (ens.n_particles as f64).sqrt())
}

/// An estimate of a boundary map with its pointwise 99% half-widths.
#[derive(Debug, Clone, PartialEq)]
pub struct Estimate {
    pub boundary: BoundaryPath,
    pub ci: Vec<f64>,
}

impl Estimate {
    pub fn max_ci(&self) -> f64 {
        self.ci.iter().copied().fold(0.0, f64::max)
    }
}

/// Per-grid-point sums of `e` and `e²` of particles `[start, end)` of a chunk.
struct WeightSums {
    sum: Vec<f64>,
    sum_sq: Vec<f64>,
}

impl WeightSums {
    fn zeros(len: usize) -> Self {
        Self {
            sum: vec![0.0; len],
            sum_sq: vec![0.0; len],
        }
    }

    #[inline]
    fn add(&mut self, j: usize, e: f64) {
        self.sum[j] += e;
        self.sum_sq[j] += e * e;
    }

    fn reduce(parts: Vec<WeightSums>, len: usize) -> WeightSums {
        let mut total = WeightSums::zeros(len);
        for p in parts {
            for j in 0..len {
                total.sum[j] += p.sum[j];
                total.sum_sq[j] += p.sum_sq[j];
            }
        }
        total
    }
}

/// Streaming Feynman-Kac estimate of `F(Λ)` with 99% half-widths; memory
/// does not grow with the number of particles. Bitwise equal to
/// [`evaluate_F_mc`] on the fully stored ensemble with the same seed.
pub fn fk_estimate(
    f: &DensitySpec,
    lambda: &BoundaryPath,
    params: &ModelParams,
    cfg: &EnsembleConfig,
) -> Result<Estimate> {
    cfg.validate()?;
    check_lambda_grid(lambda)?;
    let epsilon = params.epsilon;
    if !(epsilon > 0.0) {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    let grid = *lambda.grid();
    let stepper = Stepper::new(&grid, cfg.bridge_for(epsilon));
    let (particles, _) = spawn_all(f, epsilon, cfg);
    let len = grid.len();
    let lam = lambda.values();
    let alpha = params.alpha;
    let parts: Vec<WeightSums> = particles
        .into_par_iter()
        .chunks(CHUNK)
        .map(|chunk| {
            let mut acc = WeightSums::zeros(len);
            for mut p in chunk {
                let mut motion = p.motion;
                let mut e = fk_weight(motion.local_time(), alpha, epsilon);
                acc.add(0, e);
                for k in 0..grid.n_steps() {
                    if p.step(&mut motion, lam[k + 1], stepper) {
                        e = fk_weight(motion.local_time(), alpha, epsilon);
                    }
                    acc.add(k + 1, e);
                }
            }
            acc
        })
        .collect();
    let total = WeightSums::reduce(parts, len);
    Ok(weights_to_estimate(&grid, &total, cfg.n_particles, params))
}

fn weights_to_estimate(
    grid: &TimeGrid,
    sums: &WeightSums,
    n: usize,
    params: &ModelParams,
) -> Estimate {
    let cap = params.boundary_cap();
    let scale = Z99 * cap / (n as f64).sqrt();
    let (values, ci) = sums
        .sum
        .iter()
        .zip(&sums.sum_sq)
        .map(|(&s, &q)| {
            let (mean, sd) = mean_and_sd(s, q, n);
            (cap * (1.0 - mean), scale * sd)
        })
        .unzip();
    Estimate {
        boundary: BoundaryPath::from_monotone(*grid, values)
            .expect("weights are non-increasing in time"),
        ci,
    }
}

/// Hitting-time map of the limit problem: `(2/α) P(τ <= t)` with
/// `τ = inf{t : X_0 + B_t - Λ_t <= 0}` and `X_0 ~ f` unmollified, plus the
/// binomial 99% half-widths.
pub fn hitting_estimate(
    f: &DensitySpec,
    lambda: &BoundaryPath,
    params: &ModelParams,
    cfg: &EnsembleConfig,
) -> Result<Estimate> {
    cfg.validate()?;
    check_lambda_grid(lambda)?;
    let grid = *lambda.grid();
    let stepper = Stepper::new(&grid, cfg.bridge_for(0.0));
    let (particles, _) = spawn_all(f, 0.0, cfg);
    let len = grid.len();
    let lam = lambda.values();
    let parts: Vec<Vec<u64>> = particles
        .into_par_iter()
        .chunks(CHUNK)
        .map(|chunk| {
            let mut first_hit = vec![0u64; len];
            for mut p in chunk {
                let mut motion = p.motion;
                if motion.y <= 0.0 {
                    first_hit[0] += 1;
                    continue;
                }
                for k in 0..grid.n_steps() {
                    if p.step_hits(&mut motion, lam[k + 1], stepper) {
                        first_hit[k + 1] += 1;
                        break;
                    }
                }
            }
            first_hit
        })
        .collect();
    let mut hits = vec![0u64; len];
    for part in parts {
        for (h, c) in hits.iter_mut().zip(part) {
            *h += c;
        }
    }
    let n = cfg.n_particles as f64;
    let cap = params.boundary_cap();
    let mut cumulative = 0u64;
    let (values, ci) = hits
        .iter()
        .map(|&h| {
            cumulative += h;
            let p = cumulative as f64 / n;
            (cap * p, Z99 * cap * (p * (1.0 - p) / n).sqrt())
        })
        .unzip();
    Ok(Estimate {
        boundary: BoundaryPath::from_monotone(grid, values)?,
        ci,
    })
}

pub fn evaluate_hitting_map(
    f: &DensitySpec,
    lambda: &BoundaryPath,
    params: &ModelParams,
    cfg: &EnsembleConfig,
) -> Result<BoundaryPath> {
    Ok(hitting_estimate(f, lambda, params, cfg)?.boundary)
}

/// Particle ensemble that evaluates `F(Λ)` window by window.
///
/// The ensemble state is checkpointed at the start of the current window;
/// [`evaluate`](Self::evaluate) restarts from the checkpoint for every trial
/// boundary, [`commit`](Self::commit) moves the checkpoint to the end of the
/// last evaluated trial. The committed values agree bitwise with
/// [`fk_estimate`] on the assembled boundary.
pub struct FkWindowEngine {
    grid: TimeGrid,
    params: ModelParams,
    stepper: Stepper,
    particles: Vec<Particle>,
    committed: usize,
    sums: WeightSums,
    pending: Option<Pending>,
    n: usize,
}

struct Pending {
    end: usize,
    motions: Vec<Motion>,
    sums: WeightSums,
}

impl FkWindowEngine {
    pub fn new(
        f: &DensitySpec,
        params: &ModelParams,
        grid: TimeGrid,
        cfg: &EnsembleConfig,
    ) -> Result<Self> {
        cfg.validate()?;
        if !(params.epsilon > 0.0) {
            return Err(Error::NonPositiveEpsilon(params.epsilon));
        }
        let (particles, _) = spawn_all(f, params.epsilon, cfg);
        let mut sums = WeightSums::zeros(grid.len());
        // Same association as the streaming estimator: per particle, then per chunk.
        let parts: Vec<WeightSums> = particles
            .par_chunks(CHUNK)
            .map(|c| {
                let mut acc = WeightSums::zeros(1);
                for p in c {
                    acc.add(0, fk_weight(p.motion.local_time(), params.alpha, params.epsilon));
                }
                acc
            })
            .collect();
        let first = WeightSums::reduce(parts, 1);
        sums.sum[0] = first.sum[0];
        sums.sum_sq[0] = first.sum_sq[0];
        Ok(Self {
            grid,
            params: *params,
            stepper: Stepper::new(&grid, cfg.bridge_for(params.epsilon)),
            particles,
            committed: 0,
            sums,
            pending: None,
            n: cfg.n_particles,
        })
    }

    pub fn grid(&self) -> &TimeGrid {
        &self.grid
    }

    /// Grid index of the checkpoint.
    pub fn committed(&self) -> usize {
        self.committed
    }

    fn value_at(&self, sums: &WeightSums, j: usize) -> f64 {
        self.params.boundary_cap() * (1.0 - sums.sum[j] / self.n as f64)
    }

    /// `F(Λ)` at grid indices `committed..=end` for a trial boundary; only
    /// `lambda[committed..=end]` is read.
    pub fn evaluate(&mut self, lambda: &[f64], end: usize) -> Vec<f64> {
        assert!(end > self.committed && end <= self.grid.n_steps());
        assert_eq!(lambda.len(), self.grid.len());
        let k0 = self.committed;
        let width = end - k0;
        let (alpha, epsilon) = (self.params.alpha, self.params.epsilon);
        let stepper = self.stepper;
        let mut motions = vec![self.particles[0].motion; self.particles.len()];
        let parts: Vec<WeightSums> = self
            .particles
            .par_chunks(CHUNK)
            .zip(motions.par_chunks_mut(CHUNK))
            .map(|(chunk, out)| {
                let mut acc = WeightSums::zeros(width);
                for (p, slot) in chunk.iter().zip(out) {
                    let mut p = p.clone();
                    let mut motion = p.motion;
                    let mut e = fk_weight(motion.local_time(), alpha, epsilon);
                    for j in 0..width {
                        if p.step(&mut motion, lambda[k0 + j + 1], stepper) {
                            e = fk_weight(motion.local_time(), alpha, epsilon);
                        }
                        acc.add(j, e);
                    }
                    *slot = motion;
                }
                acc
            })
            .collect();
        let sums = WeightSums::reduce(parts, width);
        let mut values = Vec::with_capacity(width + 1);
        values.push(self.value_at(&self.sums, k0));
        values.extend((0..width).map(|j| self.value_at(&sums, j)));
        self.pending = Some(Pending { end, motions, sums });
        values
    }

    /// Accepts the last evaluated trial and moves the checkpoint to its end.
    ///
    /// # Panics
    /// If nothing has been evaluated since the last commit.
    pub fn commit(&mut self) {
        let pending = self.pending.take().expect("commit without a pending evaluation");
        let width = pending.end - self.committed;
        let bridge = self.stepper.bridge;
        self.particles
            .par_iter_mut()
            .zip(pending.motions.into_par_iter())
            .with_min_len(256)
            .for_each(|(p, m)| {
                p.skip(width, bridge);
                p.motion = m;
            });
        for j in 0..width {
            self.sums.sum[self.committed + 1 + j] = pending.sums.sum[j];
            self.sums.sum_sq[self.committed + 1 + j] = pending.sums.sum_sq[j];
        }
        self.committed = pending.end;
    }

    /// Drops an uncommitted evaluation (the next one restarts from the checkpoint anyway).
    pub fn discard(&mut self) {
        self.pending = None;
    }

    /// Committed estimate on `0..=committed`; once the whole horizon is
    /// committed this is the final `F(Λ)` with its half-widths.
    pub fn estimate(&self) -> Estimate {
        let len = self.committed + 1;
        let sums = WeightSums {
            sum: self.sums.sum[..len].to_vec(),
            sum_sq: self.sums.sum_sq[..len].to_vec(),
        };
        let grid = if len == self.grid.len() {
            self.grid
        } else {
            TimeGrid::new(self.grid.time(self.committed), self.committed)
                .expect("at least one committed step")
        };
        weights_to_estimate(&grid, &sums, self.n, &self.params)
    }
}

#[cfg(test)]
mod tests {
    use super::*;

    fn uniform() -> DensitySpec {
        DensitySpec::uniform(0.0, 1.0).unwrap()
    }

    #[test]
    fn open_closed_uniform_range() {
        struct Fixed(u64);
        impl RngCore for Fixed {
            fn next_u32(&mut self) -> u32 {
                self.0 as u32
            }
            fn next_u64(&mut self) -> u64 {
                self.0
            }
            fn fill_bytes(&mut self, _: &mut [u8]) {}
        }
        assert_eq!(unit_open_closed(&mut Fixed(0)), 1.0);
        assert_eq!(unit_open_closed(&mut Fixed(u64::MAX)), MIN_BRIDGE_UNIFORM);
    }

    #[test]
    fn antithetic_partners_share_uniforms_and_mirror_increments() {
        let (mut a, sa) = particle_stream(9, 4, true);
        let (mut b, sb) = particle_stream(9, 5, true);
        assert_eq!((sa, sb), (1.0, -1.0));
        assert_eq!(a.next_u64(), b.next_u64());
        let (mut c, _) = particle_stream(9, 6, true);
        let (mut d, _) = particle_stream(9, 4, false);
        assert_ne!(c.next_u64(), d.next_u64());
    }

    #[test]
    fn window_engine_matches_streaming_estimate() {
        let f = uniform();
        let params = ModelParams::new(3.0, 0.3).unwrap();
        let grid = TimeGrid::new(0.5, 40).unwrap();
        let values: Vec<f64> = grid.times().map(|t| 0.2 * t).collect();
        let lambda = BoundaryPath::new(grid, values.clone(), 0.2).unwrap();
        for bridge in [false, true] {
            let cfg = EnsembleConfig::new(3000, 11).with_bridge(bridge);
            let direct = fk_estimate(&f, &lambda, &params, &cfg).unwrap();
            let mut engine = FkWindowEngine::new(&f, &params, grid, &cfg).unwrap();
            let mut trial = values.clone();
            for end in [7, 19, 20, 40] {
                // A wrong trial first, then the right one.
                for v in &mut trial[engine.committed() + 1..] {
                    *v += 0.05;
                }
                engine.evaluate(&trial, end);
                trial.copy_from_slice(&values);
                engine.evaluate(&trial, end);
                engine.commit();
            }
            assert_eq!(engine.estimate(), direct);
        }
    }

    #[test]
    fn matrix_and_streaming_estimates_agree_bitwise() {
        let f = uniform();
        let params = ModelParams::new(3.0, 0.25).unwrap();
        let grid = TimeGrid::new(1.0, 32).unwrap();
        let lambda = BoundaryPath::zero(grid);
        let cfg = EnsembleConfig::new(5000, 3).with_antithetic(true);
        let ens = simulate_ensemble(&f, 0.25, &lambda, &cfg).unwrap();
        let direct = fk_estimate(&f, &lambda, &params, &cfg).unwrap();
        assert_eq!(evaluate_F_mc(&ens, &params).unwrap(), direct.boundary);
        let ci = ci_halfwidth(&ens, &params, 1.0).unwrap();
        assert!((ci - direct.ci[32]).abs() <= 1e-15);
    }

    #[test]
    fn slices_reproduce_the_full_matrix() {
        let f = uniform();
        let grid = TimeGrid::new(1.0, 16).unwrap();
        let lambda = BoundaryPath::new(grid, grid.times().map(|t| 0.5 * t).collect(), 0.5).unwrap();
        let cfg = EnsembleConfig::new(50, 1).with_bridge(true);
        let full = simulate_ensemble(&f, 0.1, &lambda, &cfg).unwrap();
        let part = simulate_ensemble_at(&f, 0.1, &lambda, &cfg, &[3, 8, 16]).unwrap();
        assert_eq!(part.at_index(8), full.at_index(8));
        assert_eq!(part.at_index(16), full.at_index(16));
        assert_eq!(part.at_index(4), None);
        assert!(simulate_ensemble_at(&f, 0.1, &lambda, &cfg, &[3, 3]).is_err());
    }

    #[test]
    fn explicit_local_times() {
        let grid = TimeGrid::new(1.0, 4).unwrap();
        let params = ModelParams::new(2.0, 1.0).unwrap();
        let ens = LocalTimeEnsemble::from_local_times(grid, 1.0, &[grid.times().collect()]).unwrap();
        let f = evaluate_F_mc(&ens, &params).unwrap();
        for (k, t) in grid.times().enumerate() {
            assert!((f.at(k) - (1.0 - (-2.0 * t).exp())).abs() < 1e-15);
        }
        let zeros = LocalTimeEnsemble::from_local_times(grid, 1.0, &vec![vec![0.0; 5]; 3]).unwrap();
        assert!(evaluate_F_mc(&zeros, &params).unwrap().values().iter().all(|&v| v == 0.0));
        let same = LocalTimeEnsemble::from_local_times(grid, 1.0, &vec![vec![0.0, 0.1, 0.2, 0.3, 0.4]; 4]).unwrap();
        assert!(ci_halfwidth(&same, &params, 0.5).unwrap() < 1e-14);
        assert!(LocalTimeEnsemble::from_local_times(grid, 1.0, &[vec![0.0, 0.2, 0.1, 0.3, 0.4]]).is_err());
    }

    #[test]
    fn fk_requires_positive_epsilon() {
        let f = uniform();
        let lambda = BoundaryPath::zero(TimeGrid::new(1.0, 4).unwrap());
        let params = ModelParams::new(3.0, 0.0).unwrap();
        let cfg = EnsembleConfig::new(10, 0);
        assert_eq!(
            fk_estimate(&f, &lambda, &params, &cfg),
            Err(Error::NonPositiveEpsilon(0.0))
        );
    }

    #[test]
    fn retained_uniforms_reproduce_initial_positions() {
        let f = DensitySpec::uniform(0.5, 2.5).unwrap();
        let lambda = BoundaryPath::zero(TimeGrid::new(1.0, 2).unwrap());
        let mut cfg = EnsembleConfig::new(8, 5);
        cfg.retain_uniforms = true;
        let ens = simulate_ensemble(&f, 0.2, &lambda, &cfg).unwrap();
        let uv = ens.coupling().uniforms.as_ref().unwrap();
        assert_eq!(uv.len(), 8);
        assert!(uv.iter().all(|[u, v]| (0.0..1.0).contains(u) && (0.0..1.0).contains(v)));
    }
}
