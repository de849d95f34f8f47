use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use edslab::models::PRESETS;
use edslab_cli::{certify, run, CliError, ExperimentConfig};

#[derive(Parser)]
#[command(
    name = "edslab",
    version,
    about = "Sensitivity-decay experiments for dynamic optimization"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Solve, certify, perturb, fit, and write all artifacts.
    Run {
        #[arg(long)]
        config: PathBuf,
        /// Overrides `output_dir` from the config.
        #[arg(long)]
        out: Option<PathBuf>,
        /// Overrides `seed` from the config.
        #[arg(long)]
        seed: Option<u64>,
    },
    /// Print the regularity certificate of each base solution.
    Certify {
        #[arg(long)]
        config: PathBuf,
    },
    /// List model presets.
    Models,
}

/// Worker pool capped by `EDSLAB_THREADS` when set.
fn thread_pool() -> Result<rayon::ThreadPool, CliError> {
    let mut builder = rayon::ThreadPoolBuilder::new();
    if let Ok(v) = std::env::var("EDSLAB_THREADS") {
        let n: usize = v.parse().ok().filter(|&n| n > 0).ok_or_else(|| {
            CliError::Config(format!(
                "EDSLAB_THREADS must be a positive integer, got {v:?}"
            ))
        })?;
        builder = builder.num_threads(n);
    }
    builder
        .build()
        .map_err(|e| CliError::Config(format!("cannot build worker pool: {e}")))
}

fn execute(cli: Cli) -> Result<(), CliError> {
    match cli.command {
        Command::Models => {
            for (name, about) in PRESETS {
                println!("{name:<18} {about}");
            }
            Ok(())
        }
        Command::Run { config, out, seed } => {
            let cfg = ExperimentConfig::load(&config)?;
            let outcome = thread_pool()?.install(|| run(&cfg, out.as_deref(), seed))?;
            for case in &outcome.cases {
                if let Some(f) = &case.fit {
                    println!("{}: rho = {:.4}, r2 = {:.3}", case.label, f.rho, f.r2);
                }
            }
            println!(
                "wrote {} files to {}",
                outcome.files.len(),
                outcome.output_dir.display()
            );
            Ok(())
        }
        Command::Certify { config } => {
            let cfg = ExperimentConfig::load(&config)?;
            print!("{}", thread_pool()?.install(|| certify(&cfg))?);
            Ok(())
        }
    }
}

fn main() -> ExitCode {
    match execute(Cli::parse()) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("edslab: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
