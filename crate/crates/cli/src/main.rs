use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::Result;
use clap::{Parser, Subcommand};

use coordnorm_cli::run::FORCED_BANDS;
use coordnorm_cli::{exit_code, run_grid, run_ntk_analysis, run_training, ExperimentConfig, RunOverrides};

#[derive(Parser)]
#[command(name = "coordnorm", version, about = "NTK analyses and training runs for normalized coordinate networks")]
struct Cli {
    #[command(subcommand)]
    command: Command,
    /// Experiment config file.
    #[arg(long, global = true)]
    config: Option<PathBuf>,
    /// Output directory, overriding `[output] dir`.
    #[arg(long, global = true)]
    out: Option<PathBuf>,
    /// Maximum concurrent kernels or grid cells.
    #[arg(long, global = true, default_value_t = 1)]
    jobs: usize,
    /// Use this seed everywhere in place of the configured ones.
    #[arg(long = "seed-override", global = true)]
    seed_override: Option<u64>,
}

#[derive(Subcommand, Clone, Copy)]
enum Command {
    /// Eigenvalue statistics of the kernel at initialization.
    Ntk,
    /// Train one network.
    Train,
    /// Train every method × seed combination.
    Grid,
    /// Train with frequency-band tracking forced on.
    Freq,
}

fn execute(cli: &Cli) -> Result<()> {
    let mut cfg = match &cli.config {
        Some(path) => ExperimentConfig::from_file(path)?,
        None => ExperimentConfig::parse("", std::path::Path::new("."))?,
    };
    if let Some(seed) = cli.seed_override {
        cfg.override_seed(seed);
    }
    let out = cli.out.clone().unwrap_or_else(|| cfg.output_dir.clone());
    match cli.command {
        Command::Ntk => {
            let r = run_ntk_analysis(&cfg, &out, cli.jobs)?;
            eprintln!("{} spectra written to {}", r.records.len(), out.display());
        }
        Command::Train | Command::Freq => {
            let bands = matches!(cli.command, Command::Freq).then_some(FORCED_BANDS);
            let r = run_training(&cfg, &out, RunOverrides { bands, ..Default::default() })?;
            let psnr = r.metrics.get("psnr").unwrap_or(f64::NAN);
            eprintln!("final PSNR {psnr:.2} dB, outputs in {}", out.display());
        }
        Command::Grid => {
            let r = run_grid(&cfg, &out, cli.jobs)?;
            let failed = r.cells.iter().filter(|c| c.result.is_err()).count();
            eprintln!("{} cells ({failed} failed), table in {}", r.cells.len(), out.join("grid.csv").display());
        }
    }
    Ok(())
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    match execute(&cli) {
        Ok(()) => ExitCode::SUCCESS,
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(exit_code(&e) as u8)
        }
    }
}
