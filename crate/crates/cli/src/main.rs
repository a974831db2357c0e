//! `levy-xva --config run.toml [--job NAME] [--out PATH] [--seed N] [--threads N]`
//!
//! Exit codes: 0 success, 2 configuration error (nothing is computed),
//! 3 numerical failure, 4 validation failure (the table is still written).

mod config;
mod jobs;
mod table;

use std::fs;
use std::io::Write;
use std::path::PathBuf;
use std::process::ExitCode;

use clap::Parser;

use crate::config::{Job, Overrides};

const EXIT_CONFIG: u8 = 2;
const EXIT_NUMERICAL: u8 = 3;
const EXIT_VALIDATION: u8 = 4;

/// Bermudan XVA and CVA pricing under local Levy models.
#[derive(Debug, Parser)]
#[command(name = "levy-xva", version)]
struct Args {
    /// Run configuration (TOML).
    #[arg(long)]
    config: PathBuf,
    /// Job to run; overrides `job` in the file.
    #[arg(long, value_enum)]
    job: Option<Job>,
    /// CSV destination; standard output when absent.
    #[arg(long)]
    out: Option<PathBuf>,
    /// Monte Carlo seed; overrides `seed` in the file.
    #[arg(long)]
    seed: Option<u64>,
    /// Worker threads of the compute pool.
    #[arg(long)]
    threads: Option<usize>,
}

struct Failure {
    code: u8,
    message: String,
}

impl Failure {
    fn config(message: String) -> Self {
        Self { code: EXIT_CONFIG, message }
    }
}

fn main() -> ExitCode {
    let args = Args::parse();
    match run(&args) {
        Ok(()) => ExitCode::SUCCESS,
        Err(f) => {
            eprintln!("levy-xva: {}", f.message);
            ExitCode::from(f.code)
        }
    }
}

fn run(args: &Args) -> Result<(), Failure> {
    let path = args.config.display();
    let text = fs::read_to_string(&args.config).map_err(|e| Failure::config(format!("cannot read {path}: {e}")))?;
    let overrides = Overrides {
        job: args.job,
        seed: args.seed,
        out: args.out.clone(),
    };
    let resolved = config::resolve(&text, &overrides).map_err(|e| Failure::config(format!("config error in {path}, {e}")))?;
    if let Some(n) = args.threads {
        if n == 0 {
            return Err(Failure::config("--threads must be >= 1".into()));
        }
        rayon::ThreadPoolBuilder::new()
            .num_threads(n)
            .build_global()
            .map_err(|e| Failure::config(format!("cannot start {n} threads: {e}")))?;
    }

    let output = jobs::run(&resolved.task, resolved.seed).map_err(|e| Failure {
        code: EXIT_NUMERICAL,
        message: format!("numerical failure in {}: {e}", resolved.job),
    })?;
    if let Some((row, column)) = output.table.non_finite() {
        return Err(Failure {
            code: EXIT_NUMERICAL,
            message: format!("numerical failure in {}: non-finite {column} in row {}", resolved.job, row + 1),
        });
    }

    let csv = table::emit(resolved.job.name(), &resolved.hash, &resolved.echo, &output.table);
    match &resolved.out {
        Some(out) => fs::write(out, &csv).map_err(|e| Failure::config(format!("cannot write {}: {e}", out.display())))?,
        None => std::io::stdout()
            .lock()
            .write_all(csv.as_bytes())
            .map_err(|e| Failure::config(format!("cannot write to standard output: {e}")))?,
    }

    if output.rejected > 0 {
        return Err(Failure {
            code: EXIT_VALIDATION,
            message: format!(
                "validation failed: {} of {} rows fall outside the widened MC interval",
                output.rejected,
                output.table.rows.len()
            ),
        });
    }
    Ok(())
}
