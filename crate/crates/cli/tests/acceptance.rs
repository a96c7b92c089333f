//! Acceptance run on the reference scenario: uniform(0, 1), α = 3,
//! t_max = 1, dt = 2^-12, dx = 2^-10, x_max = 8, 2·10^5 particles,
//! Picard tolerance 1e-4. One line per criterion; exits non-zero if any fails.

use std::panic::{self, AssertUnwindSafe};
use std::process::{Command, ExitCode};
use std::time::Instant;

use rand::{Rng, SeedableRng};
use rand_chacha::ChaCha8Rng;
use stefan_core::montecarlo::{fk_estimate, hitting_estimate, EnsembleConfig, Z99};
use stefan_core::pde::{mass_identity_residual, solve_robin_pde};
use stefan_core::skorokhod::{reflect, regulator, DiscretePath};
use stefan_core::{
    epsilon_sweep, fk_cross_validate, mollify, solve_limit, solve_regularized, BoundaryPath,
    DensitySpec, Evaluator, LimitConfig, ModelParams, PdeOptions, PicardConfig, SweepConfig,
    SweepReport, TimeGrid,
};

const ALPHA: f64 = 3.0;
const SEED: u64 = 20240611;
const N_PARTICLES: usize = 200_000;
const PICARD_TOL: f64 = 1e-4;
const SWEEP: [f64; 5] = [0.8, 0.4, 0.2, 0.1, 0.05];

fn grid() -> TimeGrid {
    TimeGrid::new(1.0, 1 << 12).unwrap()
}

fn pde() -> PdeOptions {
    PdeOptions::new(1.0 / 1024.0).with_x_max(8.0)
}

fn unit() -> DensitySpec {
    DensitySpec::uniform(0.0, 1.0).unwrap()
}

fn ensemble() -> EnsembleConfig {
    EnsembleConfig::new(N_PARTICLES, SEED)
}

fn mc_picard() -> PicardConfig {
    PicardConfig {
        tol: PICARD_TOL,
        ..PicardConfig::new(Evaluator::MonteCarlo(ensemble()))
    }
}

fn limit_cfg() -> LimitConfig {
    LimitConfig::new(EnsembleConfig::new(500_000, SEED), 5e-4)
}

struct Outcome {
    pass: bool,
    detail: String,
}

fn outcome(pass: bool, detail: String) -> Outcome {
    Outcome { pass, detail }
}

fn norm_cdf(x: f64) -> f64 {
    0.5 * libm::erfc(-x / std::f64::consts::SQRT_2)
}

/// `(2/α) ∫_0^1 2Φ(-x/√t) dx`.
fn first_iterate_exact(t: f64) -> f64 {
    let hit = |x: f64| 2.0 * norm_cdf(-x / t.sqrt());
    2.0 / ALPHA * quadrature::integrate(hit, 0.0, 1.0, 1e-14).integral
}

fn path(values: &[f64]) -> DiscretePath {
    DiscretePath::new(TimeGrid::new(1.0, values.len() - 1).unwrap(), values.to_vec())
}

fn skorokhod_exactness() -> Outcome {
    let start = Instant::now();
    let examples = regulator(&path(&[0.0, 1.0, 2.0, 3.0])).values == [0.0; 4]
        && regulator(&path(&[1.0, 0.5, 0.0, -0.5, -1.0])).values == [0.0, 0.0, 0.0, 0.5, 1.0]
        && reflect(&path(&[1.0, -1.0, 0.0, -2.0])).reflected.values == [1.0, 0.0, 1.0, 0.0];
    let mut rng = ChaCha8Rng::seed_from_u64(SEED);
    let mut violations = 0usize;
    for _ in 0..10_000 {
        let n = rng.random_range(2..128);
        let low: Vec<f64> = (0..n).map(|_| rng.random_range(-3.0..3.0)).collect();
        let high: Vec<f64> = low.iter().map(|y| y + rng.random_range(0.0..1.0)).collect();
        let (lh, ll) = (regulator(&path(&high)), regulator(&path(&low)));
        violations += lh.values.iter().zip(&ll.values).filter(|(a, b)| a > b).count();
    }
    let secs = start.elapsed().as_secs_f64();
    outcome(
        examples && violations == 0 && secs < 1.0,
        format!("examples bitwise: {examples}, violations on 10^4 pairs: {violations}, {secs:.3} s"),
    )
}

fn fk_equivalence() -> Outcome {
    let zero = BoundaryPath::zero(grid());
    let mut pass = true;
    let mut detail = Vec::new();
    for eps in [0.5, 0.25] {
        let params = ModelParams::new(ALPHA, eps).unwrap();
        let v = fk_cross_validate(&unit(), &params, &zero, &pde(), &ensemble()).unwrap();
        pass &= v.pass;
        detail.push(format!(
            "eps {eps}: gap {:.2e} <= 3({:.2e} + {:.2e}) = {:.2e}",
            v.gap, v.ci_max, v.scheme_error, v.bound
        ));
    }
    outcome(pass, detail.join("; "))
}

/// A piecewise-constant density with sup-norm below α/2.
fn random_density(rng: &mut ChaCha8Rng) -> DensitySpec {
    loop {
        let cells = rng.random_range(1..6);
        let mut breakpoints = vec![rng.random_range(0.0..1.0)];
        let mut heights = Vec::new();
        for _ in 0..cells {
            breakpoints.push(breakpoints.last().unwrap() + rng.random_range(0.2..1.0));
            heights.push(rng.random_range(0.0..1.0));
        }
        let mass: f64 = heights.iter().zip(breakpoints.windows(2)).map(|(h, w)| h * (w[1] - w[0])).sum();
        if mass <= 0.0 {
            continue;
        }
        let heights: Vec<f64> = heights.iter().map(|h| h / mass).collect();
        if heights.iter().all(|&h| h < 0.5 * ALPHA) {
            return DensitySpec::piecewise_constant(breakpoints, heights).unwrap();
        }
    }
}

fn maximum_principle() -> Outcome {
    let mut rng = ChaCha8Rng::seed_from_u64(SEED ^ 3);
    let grid = grid();
    let (mut worst_low, mut worst_high) = (0.0f64, f64::NEG_INFINITY);
    let mut failures = 0;
    for _ in 0..50 {
        let f = random_density(&mut rng);
        let eps = rng.random_range(0.05..1.0);
        let f_eps = mollify(&f, eps).unwrap();
        let lipschitz = f_eps.sup_norm() / eps;
        // Admissible boundary: monotone with slopes in [0, sup f_ε / ε], in random regimes.
        let mut values = vec![0.0];
        let mut rate = 0.0;
        for k in 0..grid.n_steps() {
            if k % 256 == 0 {
                rate = rng.random_range(0.0..1.0);
            }
            let step = lipschitz * grid.dt() * rate * rng.random_range(0.0..1.0);
            values.push(values.last().unwrap() + step);
        }
        let lambda = BoundaryPath::new(grid, values, lipschitz).unwrap();
        let params = ModelParams::new(ALPHA, eps).unwrap();
        let field = solve_robin_pde(&f_eps, &lambda, &params, &pde()).unwrap();
        let sup = f_eps.sup_norm();
        worst_low = worst_low.min(field.min_value);
        worst_high = worst_high.max(field.max_value - sup);
        if field.min_value < -1e-12 || field.max_value > sup + 1e-10 {
            failures += 1;
        }
    }
    outcome(
        failures == 0,
        format!("50 inputs, {failures} failures; min p = {worst_low:.2e}, max(p - sup f_eps) = {worst_high:.2e}"),
    )
}

fn mass_identity() -> Outcome {
    let mut pass = true;
    let mut detail = Vec::new();
    for eps in [0.5, 0.2] {
        let params = ModelParams::new(ALPHA, eps).unwrap();
        let cfg = PicardConfig::new(Evaluator::Pde(pde()));
        let lambda = solve_regularized(&unit(), &params, grid(), &cfg).unwrap().boundary;
        let f_eps = mollify(&unit(), eps).unwrap();
        let residual = |lambda: &BoundaryPath, opts: &PdeOptions| {
            let field = solve_robin_pde(&f_eps, lambda, &params, opts).unwrap();
            let out = field.boundary_map(eps).unwrap();
            mass_identity_residual(&field, &out, &params).unwrap().into_iter().fold(0.0, f64::max)
        };
        let coarse = residual(&lambda, &pde());
        let fine = residual(&lambda.refined(2), &PdeOptions::new(1.0 / 2048.0).with_x_max(8.0));
        pass &= coarse <= 1e-3 && fine < coarse;
        detail.push(format!("eps {eps}: {coarse:.2e} -> {fine:.2e} when halved"));
    }
    outcome(pass, detail.join("; "))
}

fn fixed_point_residual(sweep: &SweepReport) -> Outcome {
    let pool = rayon::ThreadPoolBuilder::new().num_threads(3).build().unwrap();
    let mut pass = true;
    let mut detail = Vec::new();
    for s in sweep.solutions.iter().filter(|s| s.epsilon >= 0.2) {
        let params = ModelParams::new(ALPHA, s.epsilon).unwrap();
        let rerun = pool.install(|| solve_regularized(&unit(), &params, grid(), &mc_picard()).unwrap());
        let fresh = fk_estimate(&unit(), &s.boundary, &params, &ensemble()).unwrap();
        let fresh_residual = fresh
            .boundary
            .values()
            .iter()
            .zip(s.boundary.values())
            .map(|(a, b)| (a - b).abs())
            .fold(0.0, f64::max);
        let bitwise = rerun.boundary == s.boundary;
        pass &= s.residual <= PICARD_TOL && fresh_residual <= PICARD_TOL && bitwise;
        detail.push(format!(
            "eps {}: residual {:.2e} (fresh {:.2e}), 3-thread rerun bitwise: {bitwise}",
            s.epsilon, s.residual, fresh_residual
        ));
    }
    outcome(pass, detail.join("; "))
}

fn monotonicity(sweep: &SweepReport) -> Outcome {
    let v = &sweep.monotonicity_violations;
    let expected = 2.0 * (PICARD_TOL + sweep.max_error_indicator);
    outcome(
        v.is_empty() && sweep.tol_mono == expected,
        format!(
            "{} violations above tol_mono = {:.2e}; Lambda(1) = {}",
            v.len(),
            sweep.tol_mono,
            sweep.boundaries().map(|b| format!("{:.4}", b.last())).collect::<Vec<_>>().join(", ")
        ),
    )
}

fn convergence(sweep: &SweepReport) -> Outcome {
    let ci = sweep.max_error_indicator.max(sweep.limit.max_ci);
    let slack = 2.0 * (PICARD_TOL + ci);
    let d = &sweep.sup_distances;
    let non_increasing = d.windows(2).all(|w| w[1] <= w[0] + slack);
    let halved = d[d.len() - 1] <= 0.5 * d[0];
    outcome(
        non_increasing && halved,
        format!(
            "sup distances {} (slack {slack:.2e}); Lambda_limit(1) = {:.4} after {} sweeps",
            d.iter().map(|x| format!("{x:.4}")).collect::<Vec<_>>().join(", "),
            sweep.limit.boundary.last(),
            sweep.limit.sweeps
        ),
    )
}

fn limit_oracles(sweep: &SweepReport) -> Outcome {
    let grid = grid();
    let params = ModelParams::new(ALPHA, 0.0).unwrap();
    let cfg = limit_cfg();
    let first = hitting_estimate(&unit(), &BoundaryPath::zero(grid), &params, &cfg.ensemble).unwrap();
    let consistent = first.boundary.sup_distance(&BoundaryPath::zero(grid)).unwrap() == sweep.limit.changes[0];
    let mut pass = consistent;
    let mut detail = Vec::new();
    for t in [0.25, 0.5, 1.0] {
        let k = grid.index_of(t).unwrap();
        let exact = first_iterate_exact(t);
        let se = first.ci[k] / Z99;
        let z = (first.boundary.at(k) - exact) / se;
        pass &= z.abs() <= 3.0;
        detail.push(format!("t {t}: {:.3} SE", z));
    }
    let far = DensitySpec::uniform(10.0, 11.0).unwrap();
    let far_end = solve_limit(&far, &params, grid, &cfg).unwrap().boundary.last();
    pass &= far_end <= 1e-6;
    detail.push(format!("far support Lambda(1) = {far_end:.1e}"));
    outcome(pass, detail.join("; "))
}

fn validation_gate() -> Outcome {
    let dir = tempfile::tempdir().unwrap();
    let cfg = dir.path().join("hypercooled.toml");
    std::fs::write(
        &cfg,
        "mode = \"solve_regularized\"\nepsilons = [0.5]\n[model]\nalpha = 1.0\n\
         [model.density]\nkind = \"uniform\"\na = 0.0\nb = 2.0\n[time]\nt_max = 1.0\nn_steps = 64\n",
    )
    .unwrap();
    let out = Command::new(env!("CARGO_BIN_EXE_stefan"))
        .arg("--config")
        .arg(&cfg)
        .arg("--output")
        .arg(dir.path().join("out"))
        .output()
        .unwrap();
    let stderr = String::from_utf8_lossy(&out.stderr);
    outcome(
        out.status.code() == Some(1) && stderr.contains("SupercriticalSupNorm"),
        format!("exit {:?}: {}", out.status.code(), stderr.trim()),
    )
}

fn run_sweep() -> SweepReport {
    let cfg = SweepConfig {
        epsilons: SWEEP.to_vec(),
        picard: mc_picard(),
        pde: pde(),
        ensemble: ensemble(),
        limit: limit_cfg(),
    };
    epsilon_sweep(&unit(), ALPHA, grid(), &cfg).unwrap()
}

fn report(number: usize, name: &str, check: impl FnOnce() -> Outcome) -> bool {
    let start = Instant::now();
    let result = panic::catch_unwind(AssertUnwindSafe(check));
    let secs = start.elapsed().as_secs_f64();
    let (pass, detail) = match result {
        Ok(o) => (o.pass, o.detail),
        Err(e) => {
            let msg = e
                .downcast_ref::<String>()
                .cloned()
                .or_else(|| e.downcast_ref::<&str>().map(|s| s.to_string()))
                .unwrap_or_default();
            (false, format!("panicked: {msg}"))
        }
    };
    let tag = if pass { "PASS" } else { "FAIL" };
    println!("criterion {number} [{tag}] {name}: {detail} ({secs:.1} s)");
    pass
}

fn main() -> ExitCode {
    let mut all = true;
    all &= report(1, "Skorokhod exactness", skorokhod_exactness);
    all &= report(2, "Feynman-Kac equivalence", fk_equivalence);
    all &= report(3, "maximum principle", maximum_principle);
    all &= report(4, "mass identity", mass_identity);

    let start = Instant::now();
    let sweep = panic::catch_unwind(run_sweep);
    println!("(sweep over eps = {SWEEP:?} and limit solve: {:.1} s)", start.elapsed().as_secs_f64());
    match &sweep {
        Ok(sweep) => {
            all &= report(5, "fixed point residual", || fixed_point_residual(sweep));
            all &= report(6, "monotonicity in eps", || monotonicity(sweep));
            all &= report(7, "convergence to the limit", || convergence(sweep));
            all &= report(8, "limit-problem oracles", || limit_oracles(sweep));
        }
        Err(_) => {
            for (n, name) in [(5, "fixed point residual"), (6, "monotonicity in eps"), (7, "convergence to the limit"), (8, "limit-problem oracles")] {
                println!("criterion {n} [FAIL] {name}: the sweep failed");
            }
            all = false;
        }
    }
    all &= report(9, "validation gate", validation_gate);
    if all {
        ExitCode::SUCCESS
    } else {
        ExitCode::FAILURE
    }
}
