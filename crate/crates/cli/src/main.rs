use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;
use stefan_cli::{run_file, Overrides};

/// Solve supercooled Stefan free boundaries from a TOML run configuration.
#[derive(Debug, Parser)]
#[command(name = "stefan", version)]
struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Output directory; overrides `output_dir` in the configuration.
    #[arg(long)]
    output: Option<PathBuf>,
    /// Overrides `seed` in the configuration.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads (default: all cores). Never changes the results.
    #[arg(long)]
    threads: Option<usize>,
}

fn main() -> ExitCode {
    let args = Args::parse();
    let overrides = Overrides {
        output_dir: args.output,
        seed: args.seed,
        threads: args.threads,
    };
    match run_file(&args.config, &overrides) {
        Ok(outcome) => {
            for line in &outcome.summary {
                println!("{line}");
            }
            println!("wrote {} files to {}", outcome.files.len(), outcome.output_dir.display());
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
