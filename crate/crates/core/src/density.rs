//! Initial temperature profiles, their mollifications `f_ε = f * ρ_ε`, and
//! the coupled sampler `X_0^ε = X_0 + εY`.
//!
//! Every supported profile is piecewise linear with finitely many knots, so it
//! can be written as a sum of steps and ramps anchored at the knots `x_j`:
//!
//! ```text
//! f(x) = Σ_j J_j H(x - x_j) + S_j (x - x_j)_+
//! ```
//!
//! Convolving a step with `ρ_ε` gives `F((x - x_j)/ε)` and a ramp gives
//! `ε G((x - x_j)/ε)`, where `F, G, K` are the kernel antiderivatives from
//! [`BumpKernel`]. The mollified density and its CDF are therefore available
//! in closed form.

use serde::{Deserialize, Serialize};

use crate::error::{Error, Result};
use crate::kernel::BumpKernel;

/// Width of the reference kernel's support, `ρ_ε` lives in `(0, ε S)`.
pub const KERNEL_SUPPORT: f64 = 1.0;

const CDF_TABLE_POINTS: usize = 4096;
const SUP_SAMPLES: usize = 1 << 14;

/// Closed interval clamping applied to uniform variates before inversion.
pub const UNIFORM_CLAMP: f64 = 1e-15;

#[derive(Debug, Clone, PartialEq, Serialize, Deserialize)]
#[serde(tag = "kind", rename_all = "kebab-case", deny_unknown_fields)]
pub enum DensityKind {
    Uniform { a: f64, b: f64 },
    PiecewiseConstant { breakpoints: Vec<f64>, heights: Vec<f64> },
    /// Linear interpolation of `(x_k, f_k)` on `[x_0, x_n]`, zero elsewhere.
    Tabulated { x: Vec<f64>, f: Vec<f64> },
}

#[derive(Debug, Clone, PartialEq)]
struct Segment {
    x0: f64,
    x1: f64,
    f0: f64,
    slope: f64,
    mass_before: f64,
}

impl Segment {
    fn mass(&self) -> f64 {
        let w = self.x1 - self.x0;
        w * (self.f0 + 0.5 * self.slope * w)
    }

    fn value(&self, x: f64) -> f64 {
        self.f0 + self.slope * (x - self.x0)
    }

    fn cdf(&self, x: f64) -> f64 {
        let d = x - self.x0;
        self.mass_before + d * (self.f0 + 0.5 * self.slope * d)
    }

    /// Offset `d` with `f0 d + slope d²/2 = r`, `0 <= r <= mass`.
    fn invert(&self, r: f64) -> f64 {
        let w = self.x1 - self.x0;
        let d = if self.slope == 0.0 {
            r / self.f0
        } else {
            let disc = (self.f0 * self.f0 + 2.0 * self.slope * r).max(0.0);
            2.0 * r / (self.f0 + disc.sqrt())
        };
        d.clamp(0.0, w)
    }
}

/// An initial density `f` on `[0, ∞)` with compact support.
///
/// Construction only checks that the description is well formed; the
/// physical admissibility conditions are checked by
/// [`validate_model`](crate::model::validate_model).
#[derive(Debug, Clone, PartialEq)]
pub struct DensitySpec {
    kind: DensityKind,
    sup_norm: f64,
    support_lower: f64,
    support_upper: f64,
    mass: f64,
    min_value: (f64, f64),
    segments: Vec<Segment>,
    knots: Vec<f64>,
    jumps: Vec<f64>,
    kinks: Vec<f64>,
}

fn check_sorted(name: &str, xs: &[f64]) -> Result<()> {
    if xs.iter().any(|x| !x.is_finite()) {
        return Err(Error::InvalidDensity(format!("{name} must be finite")));
    }
    if xs.windows(2).any(|w| w[1] <= w[0]) {
        return Err(Error::InvalidDensity(format!(
            "{name} must be strictly increasing"
        )));
    }
    Ok(())
}

impl DensitySpec {
    pub fn new(kind: DensityKind) -> Result<Self> {
        let (xs, left, right): (Vec<f64>, Vec<f64>, Vec<f64>) = match &kind {
            DensityKind::Uniform { a, b } => {
                check_sorted("uniform bounds", &[*a, *b])?;
                let h = 1.0 / (b - a);
                (vec![*a, *b], vec![h], vec![h])
            }
            DensityKind::PiecewiseConstant {
                breakpoints,
                heights,
            } => {
                if breakpoints.len() < 2 || heights.len() + 1 != breakpoints.len() {
                    return Err(Error::InvalidDensity(format!(
                        "{} breakpoints need {} heights, got {}",
                        breakpoints.len(),
                        breakpoints.len().saturating_sub(1),
                        heights.len()
                    )));
                }
                check_sorted("breakpoints", breakpoints)?;
                (breakpoints.clone(), heights.clone(), heights.clone())
            }
            DensityKind::Tabulated { x, f } => {
                if x.len() < 2 || x.len() != f.len() {
                    return Err(Error::InvalidDensity(
                        "a tabulated density needs at least two (x, f) pairs of equal length".into(),
                    ));
                }
                check_sorted("tabulated abscissae", x)?;
                (x.clone(), f[..f.len() - 1].to_vec(), f[1..].to_vec())
            }
        };
        if left.iter().chain(&right).any(|v| !v.is_finite()) {
            return Err(Error::InvalidDensity("density values must be finite".into()));
        }
        if xs[0] < 0.0 {
            return Err(Error::InvalidDensity(format!(
                "support must lie in [0, inf), starts at {}",
                xs[0]
            )));
        }

        let mut segments = Vec::with_capacity(xs.len() - 1);
        let mut mass = 0.0;
        for j in 0..xs.len() - 1 {
            let w = xs[j + 1] - xs[j];
            let seg = Segment {
                x0: xs[j],
                x1: xs[j + 1],
                f0: left[j],
                slope: (right[j] - left[j]) / w,
                mass_before: mass,
            };
            mass += seg.mass();
            segments.push(seg);
        }

        // Step and ramp coefficients at every knot.
        let n = xs.len();
        let mut jumps = vec![0.0; n];
        let mut kinks = vec![0.0; n];
        for j in 0..n {
            let (f_left, s_left) = if j == 0 {
                (0.0, 0.0)
            } else {
                let s = &segments[j - 1];
                (s.value(s.x1), s.slope)
            };
            let (f_right, s_right) = if j + 1 == n {
                (0.0, 0.0)
            } else {
                (segments[j].f0, segments[j].slope)
            };
            jumps[j] = f_right - f_left;
            kinks[j] = s_right - s_left;
        }

        let values = left.iter().zip(&xs).chain(right.iter().zip(&xs[1..]));
        let sup_norm = left.iter().chain(&right).copied().fold(f64::MIN, f64::max);
        let min_value = values
            .map(|(v, x)| (*x, *v))
            .fold((xs[0], f64::MAX), |acc, cur| if cur.1 < acc.1 { cur } else { acc });

        Ok(Self {
            kind,
            sup_norm,
            support_lower: xs[0],
            support_upper: xs[n - 1],
            mass,
            min_value,
            segments,
            knots: xs,
            jumps,
            kinks,
        })
    }

    pub fn uniform(a: f64, b: f64) -> Result<Self> {
        Self::new(DensityKind::Uniform { a, b })
    }

    pub fn piecewise_constant(breakpoints: Vec<f64>, heights: Vec<f64>) -> Result<Self> {
        Self::new(DensityKind::PiecewiseConstant {
            breakpoints,
            heights,
        })
    }

    pub fn tabulated(x: Vec<f64>, f: Vec<f64>) -> Result<Self> {
        Self::new(DensityKind::Tabulated { x, f })
    }

    pub fn kind(&self) -> &DensityKind {
        &self.kind
    }

    /// Exact essential supremum.
    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn support_lower(&self) -> f64 {
        self.support_lower
    }

    pub fn support_upper(&self) -> f64 {
        self.support_upper
    }

    /// Total mass `∫f`.
    pub fn mass(&self) -> f64 {
        self.mass
    }

    /// Smallest value taken on the support, with its location.
    pub fn min_value(&self) -> (f64, f64) {
        self.min_value
    }

    fn segment_at(&self, x: f64) -> Option<&Segment> {
        if x < self.support_lower || x >= self.support_upper {
            return None;
        }
        let i = self.segments.partition_point(|s| s.x1 <= x);
        self.segments.get(i)
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        self.segment_at(x).map_or(0.0, |s| s.value(x))
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.support_lower {
            0.0
        } else if x >= self.support_upper {
            self.mass
        } else {
            self.segment_at(x).map_or(self.mass, |s| s.cdf(x))
        }
    }

    /// Generalized inverse `inf { x : F(x) >= u }`.
    pub fn quantile(&self, u: f64) -> f64 {
        if u <= 0.0 {
            return self.support_lower;
        }
        for s in &self.segments {
            let m = s.mass();
            if m > 0.0 && s.mass_before + m >= u {
                return s.x0 + s.invert(u - s.mass_before);
            }
        }
        self.support_upper
    }

    /// Step and ramp decomposition `(x_j, J_j, S_j)`.
    pub(crate) fn atoms(&self) -> impl Iterator<Item = (f64, f64, f64)> + '_ {
        self.knots
            .iter()
            .zip(&self.jumps)
            .zip(&self.kinks)
            .map(|((x, j), s)| (*x, *j, *s))
    }

    fn is_piecewise_constant(&self) -> bool {
        self.kinks.iter().all(|s| *s == 0.0)
    }
}

/// `f_ε = f * ρ_ε` for the reference bump kernel.
#[derive(Debug, Clone)]
pub struct MollifiedDensity {
    base: DensitySpec,
    epsilon: f64,
    sup_norm: f64,
    table_x: Vec<f64>,
    table_cdf: Vec<f64>,
}

/// Mollifies `f` with the bump kernel scaled to `(0, ε)`.
pub fn mollify(f: &DensitySpec, epsilon: f64) -> Result<MollifiedDensity> {
    if !(epsilon > 0.0) || !epsilon.is_finite() {
        return Err(Error::NonPositiveEpsilon(epsilon));
    }
    let mut m = MollifiedDensity {
        base: f.clone(),
        epsilon,
        sup_norm: 0.0,
        table_x: Vec::new(),
        table_cdf: Vec::new(),
    };
    let (lo, hi) = (m.support_lower(), m.support_upper());

    let h = (hi - lo) / (CDF_TABLE_POINTS - 1) as f64;
    m.table_x = (0..CDF_TABLE_POINTS).map(|i| lo + i as f64 * h).collect();
    *m.table_x.last_mut().unwrap() = hi;
    m.table_cdf = m.table_x.iter().map(|&x| m.cdf(x)).collect();
    for i in 1..m.table_cdf.len() {
        m.table_cdf[i] = m.table_cdf[i].max(m.table_cdf[i - 1]);
    }

    m.sup_norm = m.locate_sup().min(f.sup_norm().max(0.0));
    Ok(m)
}

impl MollifiedDensity {
    pub fn base(&self) -> &DensitySpec {
        &self.base
    }

    pub fn epsilon(&self) -> f64 {
        self.epsilon
    }

    pub fn kernel_support(&self) -> f64 {
        KERNEL_SUPPORT
    }

    pub fn sup_norm(&self) -> f64 {
        self.sup_norm
    }

    pub fn support_lower(&self) -> f64 {
        self.base.support_lower()
    }

    pub fn support_upper(&self) -> f64 {
        self.base.support_upper() + self.epsilon * KERNEL_SUPPORT
    }

    pub fn evaluate(&self, x: f64) -> f64 {
        if x <= self.support_lower() || x >= self.support_upper() {
            return 0.0;
        }
        let k = BumpKernel::get();
        let eps = self.epsilon;
        if self.base.is_piecewise_constant() {
            self.base
                .atoms()
                .map(|(xj, jump, _)| jump * k.cdf((x - xj) / eps))
                .sum()
        } else {
            self.base
                .atoms()
                .map(|(xj, jump, kink)| {
                    let (fz, gz, _) = k.antiderivatives((x - xj) / eps);
                    jump * fz + kink * eps * gz
                })
                .sum()
        }
    }

    pub fn cdf(&self, x: f64) -> f64 {
        if x <= self.support_lower() {
            return 0.0;
        }
        if x >= self.support_upper() {
            return self.base.mass();
        }
        let k = BumpKernel::get();
        let eps = self.epsilon;
        let v: f64 = self
            .base
            .atoms()
            .map(|(xj, jump, kink)| {
                let (_, gz, kz) = k.antiderivatives((x - xj) / eps);
                jump * eps * gz + kink * eps * eps * kz
            })
            .sum();
        v.clamp(0.0, self.base.mass())
    }

    /// Generalized inverse of [`cdf`](Self::cdf): the lookup table brackets
    /// the root, safeguarded Newton on the closed-form CDF polishes it.
    pub fn inverse_cdf(&self, p: f64) -> f64 {
        let total = self.base.mass();
        if p <= 0.0 {
            return self.support_lower();
        }
        if p >= total {
            return self.support_upper();
        }
        let i = self.table_cdf.partition_point(|&c| c < p).clamp(1, self.table_x.len() - 1);
        let (mut lo, mut hi) = (self.table_x[i - 1], self.table_x[i]);
        let mut x = lo + (hi - lo) * 0.5;
        for _ in 0..200 {
            let r = self.cdf(x) - p;
            if r >= 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            if r.abs() <= 1e-14 || hi - lo <= 1e-15 * hi.abs().max(1.0) {
                break;
            }
            let d = self.evaluate(x);
            let newton = x - r / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
        }
        x
    }

    /// Maximum over a dense sample, refined by golden-section search around
    /// the best sample.
    fn locate_sup(&self) -> f64 {
        let (lo, hi) = (self.support_lower(), self.support_upper());
        let h = (hi - lo) / SUP_SAMPLES as f64;
        let (mut best_i, mut best) = (0, 0.0);
        for i in 0..=SUP_SAMPLES {
            let v = self.evaluate(lo + i as f64 * h);
            if v > best {
                best = v;
                best_i = i;
            }
        }
        let (mut a, mut b) = (
            lo + best_i.saturating_sub(1) as f64 * h,
            lo + (best_i + 1).min(SUP_SAMPLES) as f64 * h,
        );
        let phi = 0.5 * (5f64.sqrt() - 1.0);
        for _ in 0..60 {
            let c = b - phi * (b - a);
            let d = a + phi * (b - a);
            let (fc, fd) = (self.evaluate(c), self.evaluate(d));
            best = best.max(fc).max(fd);
            if fc > fd {
                b = d;
            } else {
                a = c;
            }
        }
        best
    }
}

/// `F_f^{-1}(u) + ε F_ρ^{-1}(v)`: a draw from `f_ε` that is non-decreasing in
/// `ε` for fixed `(u, v)`. Variates are clamped into `[1e-15, 1 - 1e-15]`.
pub fn sample_coupled_initial(f: &DensitySpec, epsilon: f64, u: f64, v: f64) -> f64 {
    let u = u.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    let x = f.quantile(u * f.mass());
    if epsilon == 0.0 {
        return x;
    }
    let v = v.clamp(UNIFORM_CLAMP, 1.0 - UNIFORM_CLAMP);
    x + epsilon * KERNEL_SUPPORT * BumpKernel::get().quantile(v)
}
