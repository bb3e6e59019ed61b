//! `cyclescope` command-line front end.

mod commands;
mod output;
mod sweep;

use std::path::PathBuf;
use std::process::ExitCode;

use anyhow::{bail, Context};
use clap::{Parser, Subcommand, ValueEnum};

/// Exit code for a model that fails the single-excitation structure check.
pub const EXIT_STRUCTURE: u8 = 2;

#[derive(Parser, Debug)]
#[command(name = "cyclescope", version, about = "Cycle statistics of quantum thermal machines")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Check the single-excitation block structure of a model.
    Check { model: PathBuf },
    /// Exact cycle statistics and density grids.
    Stats {
        model: PathBuf,
        #[arg(long, value_enum, default_value_t = Oracle::Analytic)]
        oracle: Oracle,
        /// `t_max=40,n=2048` or `40,2048`; defaults to 12 slowest decay times.
        #[arg(long)]
        tau_grid: Option<String>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Monte Carlo quantum-jump trajectories compared with the exact statistics.
    Simulate {
        model: PathBuf,
        /// Total number of cycles, split evenly over the trajectories.
        #[arg(long)]
        cycles: usize,
        /// Number of independent trajectories (ChaCha streams of one seed).
        #[arg(long, default_value_t = 1)]
        seeds: usize,
        #[arg(long, default_value_t = 0)]
        seed: u64,
        #[arg(long)]
        out: PathBuf,
    },
    /// Estimate cycle statistics from recorded JSONL trajectories.
    Analyze {
        model: PathBuf,
        #[arg(required = true)]
        records: Vec<PathBuf>,
        #[arg(long)]
        out: PathBuf,
    },
    /// Sweep one parameter and tabulate cycle quantities.
    Sweep {
        model: PathBuf,
        spec: PathBuf,
        #[arg(long)]
        out: PathBuf,
    },
    /// Write a built-in model as JSON.
    Model {
        #[arg(value_enum)]
        kind: ModelKind,
        #[command(flatten)]
        maser: commands::MaserArgs,
        #[arg(long)]
        out: Option<PathBuf>,
    },
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum Oracle {
    Analytic,
    #[value(name = "closed_form", alias = "closed-form")]
    ClosedForm,
}

#[derive(Copy, Clone, Debug, PartialEq, Eq, ValueEnum)]
pub enum ModelKind {
    Maser,
    Forbidden,
    Allowed,
}

fn configure_threads() -> anyhow::Result<()> {
    let Ok(raw) = std::env::var("CYCLESCOPE_THREADS") else {
        return Ok(());
    };
    let threads: usize = raw
        .trim()
        .parse()
        .with_context(|| format!("CYCLESCOPE_THREADS={raw:?} is not a thread count"))?;
    if threads == 0 {
        bail!("CYCLESCOPE_THREADS must be at least 1");
    }
    rayon::ThreadPoolBuilder::new()
        .num_threads(threads)
        .build_global()
        .context("configuring the thread pool")?;
    Ok(())
}

fn run(cli: Cli) -> anyhow::Result<u8> {
    configure_threads()?;
    match cli.command {
        Command::Check { model } => commands::check(&model),
        Command::Stats {
            model,
            oracle,
            tau_grid,
            out,
        } => commands::stats(&model, oracle, tau_grid.as_deref(), &out),
        Command::Simulate {
            model,
            cycles,
            seeds,
            seed,
            out,
        } => commands::simulate(&model, cycles, seeds, seed, &out),
        Command::Analyze { model, records, out } => commands::analyze(&model, &records, &out),
        Command::Sweep { model, spec, out } => sweep::run(&model, &spec, &out),
        Command::Model { kind, maser, out } => commands::model(kind, &maser, out.as_deref()),
    }
}

fn main() -> ExitCode {
    env_logger::Builder::from_env(env_logger::Env::default().default_filter_or("warn")).init();
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    match run(cli) {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e:#}");
            ExitCode::from(1)
        }
    }
}
