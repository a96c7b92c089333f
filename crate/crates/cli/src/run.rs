use std::fs;
use std::path::{Path, PathBuf};
use std::time::{SystemTime, UNIX_EPOCH};

use serde::Serialize;
use stefan_core::experiments::FkCrossValidation;
use stefan_core::fixedpoint::{LimitReport, SolveReport};
use stefan_core::{
    epsilon_sweep, fk_cross_validate, solve_limit, solve_regularized, BoundaryPath, SweepReport,
};

use crate::config::{Mode, RunConfig};
use crate::error::CliError;
use crate::output::{emit_csv, sha256_hex, write_json, Manifest};

/// Command-line overrides of the configuration.
#[derive(Debug, Clone, Default)]
pub struct Overrides {
    pub output_dir: Option<PathBuf>,
    pub seed: Option<u64>,
    pub threads: Option<usize>,
}

#[derive(Debug, Clone)]
pub struct RunOutcome {
    pub output_dir: PathBuf,
    pub files: Vec<PathBuf>,
    /// One human-readable line per headline number.
    pub summary: Vec<String>,
}

#[derive(Serialize)]
#[serde(tag = "mode", rename_all = "snake_case")]
enum Report<'a> {
    SolveRegularized { solutions: &'a [SolveReport] },
    SolveLimit { limit: &'a LimitReport },
    Sweep { sweep: &'a SweepReport },
    FkValidate { checks: &'a [FkCrossValidation] },
}

/// Reads, validates and executes the configuration at `config_path`.
pub fn run_file(config_path: &Path, overrides: &Overrides) -> Result<RunOutcome, CliError> {
    let bytes = fs::read(config_path).map_err(|e| CliError::io(config_path, e))?;
    let text = String::from_utf8(bytes.clone())
        .map_err(|_| CliError::Config("configuration is not valid UTF-8".into()))?;
    let mut cfg = RunConfig::parse(&text)?;
    if let Some(dir) = &overrides.output_dir {
        cfg.output_dir = dir.clone();
    }
    if let Some(seed) = overrides.seed {
        cfg.seed = seed;
    }
    let pool = rayon::ThreadPoolBuilder::new()
        .num_threads(overrides.threads.unwrap_or(0))
        .build()
        .map_err(|e| CliError::Config(format!("cannot start {:?} threads: {e}", overrides.threads)))?;
    let threads = pool.current_num_threads();
    pool.install(|| run(&cfg, &sha256_hex(&bytes), threads))
}

/// Executes a parsed configuration on the current rayon pool.
pub fn run(cfg: &RunConfig, config_sha256: &str, threads: usize) -> Result<RunOutcome, CliError> {
    cfg.check()?;
    let f = cfg.density()?;
    let grid = cfg.grid()?;
    let dir = &cfg.output_dir;
    let mut files = Vec::new();
    let mut summary = Vec::new();
    let mut table = |name: &str, headers: Vec<String>, columns: &[&[f64]]| -> Result<(), CliError> {
        let path = dir.join(name);
        emit_csv(&path, &headers, columns)?;
        files.push(path);
        Ok(())
    };

    // Solve before touching the disk so that a failed run leaves nothing behind.
    let report_path = dir.join("report.json");
    let times: Vec<f64> = grid.times().collect();
    let t_header = || vec!["t".to_string()];
    let create_dir = || fs::create_dir_all(dir).map_err(|e| CliError::io(dir, e));
    match cfg.mode {
        Mode::SolveRegularized => {
            let solutions = cfg
                .epsilons
                .iter()
                .map(|&eps| Ok(solve_regularized(&f, &cfg.params(eps)?, grid, &cfg.picard())?))
                .collect::<Result<Vec<_>, CliError>>()?;
            create_dir()?;
            write_json(&report_path, &Report::SolveRegularized { solutions: &solutions })?;
            let mut headers = t_header();
            let mut columns = vec![times.as_slice()];
            for s in &solutions {
                headers.push(lambda_header(s.epsilon));
                columns.push(s.boundary.values());
                summary.push(format!(
                    "eps = {}: Lambda(t_max) = {:.6}, residual {:.2e}",
                    s.epsilon,
                    s.boundary.last(),
                    s.residual
                ));
            }
            table("boundary.csv", headers, &columns)?;
        }
        Mode::SolveLimit => {
            let limit = solve_limit(&f, &cfg.params(0.0)?, grid, &cfg.limit())?;
            create_dir()?;
            write_json(&report_path, &Report::SolveLimit { limit: &limit })?;
            let mut headers = t_header();
            headers.push("lambda_limit".into());
            table("boundary.csv", headers, &[&times, limit.boundary.values()])?;
            summary.push(format!(
                "limit: Lambda(t_max) = {:.6} after {} sweeps",
                limit.boundary.last(),
                limit.sweeps
            ));
        }
        Mode::Sweep => {
            let sweep = epsilon_sweep(&f, cfg.model.alpha, grid, &cfg.sweep())?;
            create_dir()?;
            write_json(&report_path, &Report::Sweep { sweep: &sweep })?;
            let mut headers = t_header();
            let mut columns = vec![times.as_slice()];
            for s in &sweep.solutions {
                headers.push(lambda_header(s.epsilon));
                columns.push(s.boundary.values());
            }
            headers.push("lambda_limit".into());
            columns.push(sweep.limit.boundary.values());
            table("boundary.csv", headers, &columns)?;
            let eps_header = |second: &str| vec!["epsilon".to_string(), second.to_string()];
            table("distances.csv", eps_header("sup_distance"), &[&sweep.epsilons, &sweep.sup_distances])?;
            table("fk_gaps.csv", eps_header("fk_gap"), &[&sweep.epsilons, &sweep.fk_gaps])?;
            for (eps, d) in sweep.epsilons.iter().zip(&sweep.sup_distances) {
                summary.push(format!("eps = {eps}: sup |Lambda_eps - Lambda| = {d:.6}"));
            }
            summary.push(format!(
                "{} monotonicity violations above tol_mono = {:.2e}",
                sweep.monotonicity_violations.len(),
                sweep.tol_mono
            ));
        }
        Mode::FkValidate => {
            let zero = BoundaryPath::zero(grid);
            let checks = cfg
                .epsilons
                .iter()
                .map(|&eps| {
                    Ok(fk_cross_validate(&f, &cfg.params(eps)?, &zero, &cfg.pde(), &cfg.ensemble())?)
                })
                .collect::<Result<Vec<_>, CliError>>()?;
            create_dir()?;
            write_json(&report_path, &Report::FkValidate { checks: &checks })?;
            let mut headers = t_header();
            let mut columns = vec![times.as_slice()];
            for c in &checks {
                headers.push(format!("f_pde_eps={}", c.epsilon));
                headers.push(format!("f_mc_eps={}", c.epsilon));
                headers.push(format!("ci_eps={}", c.epsilon));
                columns.extend([c.f_pde.as_slice(), c.f_mc.as_slice(), c.ci.as_slice()]);
                summary.push(format!(
                    "eps = {}: gap {:.3e} vs bound {:.3e}: {}",
                    c.epsilon,
                    c.gap,
                    c.bound,
                    if c.pass { "pass" } else { "FAIL" }
                ));
            }
            table("fk_validate.csv", headers, &columns)?;
            let eps: Vec<f64> = checks.iter().map(|c| c.epsilon).collect();
            let gaps: Vec<f64> = checks.iter().map(|c| c.gap).collect();
            let bounds: Vec<f64> = checks.iter().map(|c| c.bound).collect();
            let pass: Vec<f64> = checks.iter().map(|c| f64::from(u8::from(c.pass))).collect();
            let headers = ["epsilon", "fk_gap", "bound", "pass"].map(String::from).to_vec();
            table("fk_gaps.csv", headers, &[&eps, &gaps, &bounds, &pass])?;
        }
    }
    files.insert(0, report_path);

    let manifest_path = dir.join("manifest.json");
    let manifest = Manifest {
        tool: env!("CARGO_PKG_NAME"),
        version: env!("CARGO_PKG_VERSION"),
        config_sha256: config_sha256.to_string(),
        seed: cfg.seed,
        mode: format!("{:?}", cfg.mode),
        threads,
        files: files
            .iter()
            .filter_map(|p| p.file_name().map(|n| n.to_string_lossy().into_owned()))
            .collect(),
        created_unix: SystemTime::now()
            .duration_since(UNIX_EPOCH)
            .map_or(0, |d| d.as_secs()),
    };
    write_json(&manifest_path, &manifest)?;
    files.push(manifest_path);
    Ok(RunOutcome {
        output_dir: dir.clone(),
        files,
        summary,
    })
}

fn lambda_header(eps: f64) -> String {
    format!("lambda_eps={eps}")
}

