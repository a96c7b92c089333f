//! Independent reference values: closed forms from the reflection principle
//! and the Robin Green's function, evaluated by adaptive quadrature. Nothing
//! here calls into the crate's kernel or mollifier.
#![allow(dead_code)]

use std::f64::consts::{PI, SQRT_2};
use std::sync::OnceLock;

use libm::erfc;

/// Frozen reference values (uniform(0, 1), α = 3, Λ ≡ 0), recomputed in `tests/oracles.rs`.
pub mod frozen {
    pub const FK_EPS_050_T1: f64 = 2.572_484_541_552_174e-1;
    pub const FK_EPS_025_T1: f64 = 3.321_039_000_307_693e-1;
    pub const TRACE_EPS_050_T1: f64 = 7.096_104_627_719_178e-2;
    pub const MEAN_LOCAL_TIME_EPS_050_T1: f64 = 2.887_041_939_353_884e-1;
    pub const MEAN_REGULATOR_FROM_ONE_T1: f64 = 1.666_309_411_753_726e-1;
}

pub fn norm_cdf(x: f64) -> f64 {
    0.5 * erfc(-x / SQRT_2)
}

pub fn norm_pdf(x: f64) -> f64 {
    (-0.5 * x * x).exp() / (2.0 * PI).sqrt()
}

/// Double-exponential quadrature over consecutive pieces `[b_i, b_{i+1}]`.
pub fn quad(f: impl Fn(f64) -> f64, breaks: &[f64], tol: f64) -> f64 {
    breaks
        .windows(2)
        .map(|w| quadrature::integrate(&f, w[0], w[1], tol).integral)
        .sum()
}

/// Splits `[a, b]` into `n` equal pieces.
pub fn pieces(a: f64, b: f64, n: usize) -> Vec<f64> {
    (0..=n).map(|i| a + (b - a) * i as f64 / n as f64).collect()
}

fn bump(u: f64) -> f64 {
    if u <= 0.0 || u >= 1.0 {
        0.0
    } else {
        (-1.0 / (u * (1.0 - u))).exp()
    }
}

pub fn bump_normalization() -> f64 {
    static C: OnceLock<f64> = OnceLock::new();
    *C.get_or_init(|| 1.0 / quad(bump, &pieces(0.0, 1.0, 8), 1e-15))
}

pub fn kernel_cdf(z: f64) -> f64 {
    let z = z.clamp(0.0, 1.0);
    if z == 0.0 {
        return 0.0;
    }
    bump_normalization() * quad(bump, &pieces(0.0, z, 8), 1e-15)
}

/// Median of the bump kernel by bisection on its CDF.
pub fn kernel_median() -> f64 {
    let (mut lo, mut hi) = (0.0, 1.0);
    while hi - lo > 1e-14 {
        let mid = 0.5 * (lo + hi);
        if kernel_cdf(mid) < 0.5 {
            lo = mid;
        } else {
            hi = mid;
        }
    }
    0.5 * (lo + hi)
}

/// `(uniform(a, b) * ρ_ε)(x) = P(x - b <= ε Y <= x - a)` for `Y ~ ρ`.
pub fn mollified_uniform(a: f64, b: f64, eps: f64, x: f64) -> f64 {
    let lo = ((x - b) / eps).clamp(0.0, 1.0);
    let hi = ((x - a) / eps).clamp(0.0, 1.0);
    if hi <= lo {
        return 0.0;
    }
    bump_normalization() * quad(bump, &pieces(lo, hi, 4), 1e-14) / (b - a)
}

/// `∫ f_ε(x) g(x) dx` for `f = uniform(a, b)`.
pub fn against_mollified_uniform(a: f64, b: f64, eps: f64, g: impl Fn(f64) -> f64) -> f64 {
    let mut breaks = vec![a, a + eps, b, b + eps];
    breaks.sort_by(f64::total_cmp);
    breaks.dedup();
    let fine: Vec<f64> = breaks
        .windows(2)
        .flat_map(|w| pieces(w[0], w[1], 8).into_iter().skip(1))
        .collect();
    let mut all = vec![breaks[0]];
    all.extend(fine);
    quad(|x| mollified_uniform(a, b, eps, x) * g(x), &all, 1e-13)
}

/// `E[exp(-c L_t)]` for Brownian motion started at `x >= 0`, reflected at 0
/// with no boundary drift.
pub fn laplace_local_time(x: f64, t: f64, c: f64) -> f64 {
    let s = t.sqrt();
    let tail = (c * x + 0.5 * c * c * t).exp() * norm_cdf(-(x + c * t) / s);
    1.0 - 2.0 * norm_cdf(-x / s) + 2.0 * tail
}

/// `E[L_t]` from `x`: `∫_x^∞ 2Φ(-m/√t) dm`.
pub fn mean_local_time(x: f64, t: f64) -> f64 {
    let s = t.sqrt();
    2.0 * (s * norm_pdf(x / s) - x * norm_cdf(-x / s))
}

/// `P(x + B hits 0 before t)`.
pub fn hit_probability(x: f64, t: f64) -> f64 {
    2.0 * norm_cdf(-x / t.sqrt())
}

/// Green's function at the wall of `p_t = ½ p_xx`, `p_x(0) = κ p(0)`.
pub fn robin_green_at_wall(y: f64, t: f64, kappa: f64) -> f64 {
    let s = t.sqrt();
    let tail = (kappa * y + 0.5 * kappa * kappa * t).exp() * norm_cdf(-(y + kappa * t) / s);
    2.0 * norm_pdf(y / s) / s - 2.0 * kappa * tail
}

/// `F(0)(t) = (2/α)(1 - E[exp(-α L_t / ε)])` with `X_0 ~ uniform(a, b)_ε`.
pub fn fk_zero_boundary(a: f64, b: f64, alpha: f64, eps: f64, t: f64) -> f64 {
    let c = alpha / eps;
    2.0 / alpha * (1.0 - against_mollified_uniform(a, b, eps, |x| laplace_local_time(x, t, c)))
}

/// `p(t, 0)` of the Robin problem with `Λ ≡ 0`, `κ = α/ε`.
pub fn robin_trace_zero_boundary(a: f64, b: f64, alpha: f64, eps: f64, t: f64) -> f64 {
    against_mollified_uniform(a, b, eps, |y| robin_green_at_wall(y, t, alpha / eps))
}

/// `(2/α) ∫ f(x) 2Φ(-x/√t) dx` for `f = uniform(a, b)`.
pub fn first_limit_iterate(a: f64, b: f64, alpha: f64, t: f64) -> f64 {
    2.0 / alpha * quad(|x| hit_probability(x, t), &pieces(a, b, 8), 1e-14) / (b - a)
}
