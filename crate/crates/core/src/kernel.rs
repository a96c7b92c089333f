//! The reference smoothing kernel `ρ(x) = C exp(-1/(x(1-x)))` on `(0, 1)`.
//!
//! Besides the density itself the mollification formulas need three
//! antiderivatives: the CDF `F(z) = ∫_0^z ρ`, `G(z) = ∫_0^z F` and
//! `K(z) = ∫_0^z G`. They are tabulated at cell nodes once and completed
//! inside a cell by Gauss-Legendre quadrature of the moments of `ρ`, so no
//! interpolation error enters.

use std::sync::OnceLock;

const CELLS: usize = 1024;

/// 8-point Gauss-Legendre rule on `[-1, 1]`.
const GL_NODES: [f64; 4] = [
    0.183_434_642_495_649_8,
    0.525_532_409_916_329,
    0.796_666_477_413_626_7,
    0.960_289_856_497_536_3,
];
const GL_WEIGHTS: [f64; 4] = [
    0.362_683_783_378_362,
    0.313_706_645_877_887_3,
    0.222_381_034_453_374_5,
    0.101_228_536_290_376_3,
];

pub(crate) fn gauss_legendre(a: f64, b: f64, f: impl Fn(f64) -> f64) -> f64 {
    let mid = 0.5 * (a + b);
    let half = 0.5 * (b - a);
    let mut acc = 0.0;
    for (x, w) in GL_NODES.iter().zip(GL_WEIGHTS) {
        acc += w * (f(mid - half * x) + f(mid + half * x));
    }
    acc * half
}

fn unnormalized(x: f64) -> f64 {
    if x <= 0.0 || x >= 1.0 {
        0.0
    } else {
        (-1.0 / (x * (1.0 - x))).exp()
    }
}

/// Moments `∫ρ`, `∫uρ`, `∫u²ρ` of the unnormalized bump over `[a, b]`.
fn moments(a: f64, b: f64) -> [f64; 3] {
    let sub = 4;
    let h = (b - a) / sub as f64;
    let mut m = [0.0; 3];
    for j in 0..sub {
        let lo = a + j as f64 * h;
        let hi = if j + 1 == sub { b } else { lo + h };
        m[0] += gauss_legendre(lo, hi, unnormalized);
        m[1] += gauss_legendre(lo, hi, |u| u * unnormalized(u));
        m[2] += gauss_legendre(lo, hi, |u| u * u * unnormalized(u));
    }
    m
}

/// Tabulated bump kernel. Obtain the shared instance with [`BumpKernel::get`].
#[derive(Debug)]
pub struct BumpKernel {
    norm: f64,
    cdf: Vec<f64>,
    g: Vec<f64>,
    k: Vec<f64>,
}

impl BumpKernel {
    pub fn get() -> &'static BumpKernel {
        static KERNEL: OnceLock<BumpKernel> = OnceLock::new();
        KERNEL.get_or_init(BumpKernel::build)
    }

    fn build() -> Self {
        let h = 1.0 / CELLS as f64;
        let cells: Vec<[f64; 3]> = (0..CELLS)
            .map(|j| moments(j as f64 * h, (j + 1) as f64 * h))
            .collect();
        let total: f64 = cells.iter().map(|m| m[0]).sum();
        let norm = 1.0 / total;
        let mut cdf = vec![0.0; CELLS + 1];
        let mut g = vec![0.0; CELLS + 1];
        let mut k = vec![0.0; CELLS + 1];
        for j in 0..CELLS {
            let (a, b) = (j as f64 * h, (j + 1) as f64 * h);
            let [m0, m1, m2] = cells[j].map(|m| m * norm);
            cdf[j + 1] = cdf[j] + m0;
            g[j + 1] = g[j] + b * cdf[j + 1] - a * cdf[j] - m1;
            let int_u_f = 0.5 * (b * b * cdf[j + 1] - a * a * cdf[j] - m2);
            k[j + 1] = k[j] + b * g[j + 1] - a * g[j] - int_u_f;
        }
        // Pin the exact total so that F(1) = 1 holds to the last bit.
        cdf[CELLS] = 1.0;
        Self { norm, cdf, g, k }
    }

    /// Normalizing constant `C`.
    pub fn normalization(&self) -> f64 {
        self.norm
    }

    pub fn density(&self, z: f64) -> f64 {
        self.norm * unnormalized(z)
    }

    fn cell(z: f64) -> (usize, f64) {
        let j = ((z * CELLS as f64) as usize).min(CELLS - 1);
        (j, j as f64 / CELLS as f64)
    }

    /// `(F, G, K)` at `z`.
    pub fn antiderivatives(&self, z: f64) -> (f64, f64, f64) {
        if z <= 0.0 {
            return (0.0, 0.0, 0.0);
        }
        if z >= 1.0 {
            let s = z - 1.0;
            let g1 = self.g[CELLS];
            return (1.0, g1 + s, self.k[CELLS] + g1 * s + 0.5 * s * s);
        }
        let (j, a) = Self::cell(z);
        let [m0, m1, m2] = moments(a, z).map(|m| m * self.norm);
        let f = self.cdf[j] + m0;
        let g = self.g[j] + z * f - a * self.cdf[j] - m1;
        let int_u_f = 0.5 * (z * z * f - a * a * self.cdf[j] - m2);
        let k = self.k[j] + z * g - a * self.g[j] - int_u_f;
        (f, g, k)
    }

    pub fn cdf(&self, z: f64) -> f64 {
        if z <= 0.0 {
            return 0.0;
        }
        if z >= 1.0 {
            return 1.0;
        }
        let (j, a) = Self::cell(z);
        let mut m0 = 0.0;
        let sub = 4;
        let h = (z - a) / sub as f64;
        for i in 0..sub {
            let lo = a + i as f64 * h;
            m0 += gauss_legendre(lo, lo + h, unnormalized);
        }
        (self.cdf[j] + self.norm * m0).min(1.0)
    }

    /// Generalized inverse of the CDF, accurate to about `1e-14` in probability.
    pub fn quantile(&self, v: f64) -> f64 {
        if v <= 0.0 {
            return 0.0;
        }
        if v >= 1.0 {
            return 1.0;
        }
        // First node with cdf >= v brackets the root.
        let hi_idx = self.cdf.partition_point(|&c| c < v).clamp(1, CELLS);
        let mut lo = (hi_idx - 1) as f64 / CELLS as f64;
        let mut hi = hi_idx as f64 / CELLS as f64;
        let (c0, c1) = (self.cdf[hi_idx - 1], self.cdf[hi_idx]);
        let mut x = if c1 > c0 {
            lo + (hi - lo) * ((v - c0) / (c1 - c0)).clamp(0.0, 1.0)
        } else {
            0.5 * (lo + hi)
        };
        for _ in 0..100 {
            let r = self.cdf(x) - v;
            if r.abs() <= 1e-15 {
                break;
            }
            if r > 0.0 {
                hi = x;
            } else {
                lo = x;
            }
            let d = self.density(x);
            let newton = x - r / d;
            x = if d > 0.0 && newton > lo && newton < hi {
                newton
            } else {
                0.5 * (lo + hi)
            };
            if hi - lo <= 1e-16 {
                break;
            }
        }
        x
    }

    /// `G(1) = 1 - E[Y]` for `Y ~ ρ`.
    pub fn g_at_one(&self) -> f64 {
        self.g[CELLS]
    }
}
