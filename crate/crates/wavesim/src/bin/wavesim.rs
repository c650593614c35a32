//! Thin command-line front end; all logic lives in the library.

use clap::{Parser, Subcommand, ValueEnum};
use std::path::PathBuf;
use std::process::ExitCode;
use wavesim::cli;
use wavesim::train::TrainMode;

#[derive(Parser)]
#[command(
    name = "wavesim",
    about = "Frequency-domain scattered acoustic wavefield simulation",
    version
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Clone, Copy, ValueEnum)]
enum ModeArg {
    Gd,
    Lsgd,
}

#[derive(Subcommand)]
enum Command {
    /// Solve the scattered field with the finite-difference reference solver
    Fd {
        #[arg(long)]
        config: PathBuf,
    },
    /// Train a coordinate network on the wave-equation residual
    Train {
        #[arg(long)]
        config: PathBuf,
        #[arg(long, value_enum)]
        mode: ModeArg,
    },
    /// Print the interior relative L2 difference between two field files
    Compare {
        field_a: PathBuf,
        field_b: PathBuf,
        #[arg(long)]
        config: PathBuf,
    },
    /// Re-emit a metrics CSV as plot-ready columns
    ExportMetrics { csv: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::Fd { config } => cli::cmd_fd(&config),
        Command::Train { config, mode } => cli::cmd_train(
            &config,
            match mode {
                ModeArg::Gd => TrainMode::Gd,
                ModeArg::Lsgd => TrainMode::Lsgd,
            },
        ),
        Command::Compare {
            field_a,
            field_b,
            config,
        } => cli::cmd_compare(&field_a, &field_b, &config),
        Command::ExportMetrics { csv } => cli::cmd_export_metrics(&csv),
    };
    match result {
        Ok(()) => ExitCode::SUCCESS,
        Err(err) => {
            eprintln!("wavesim: {err}");
            ExitCode::from(err.exit_code() as u8)
        }
    }
}
