mod commands;
mod config;
mod output;

use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CalibrateArgs, EvalArgs, GenDataArgs, GradcheckArgs, SoftrankArgs, TrainArgs, WeightsArgs};
use config::resolve;

/// Selective classification and calibration toolkit.
#[derive(Debug, Parser)]
#[command(name = "selcal", version)]
struct Cli {
    /// JSON file with default values for the subcommand's flags.
    #[arg(long, global = true)]
    config: Option<PathBuf>,

    #[command(subcommand)]
    command: Command,
}

#[derive(Debug, Subcommand)]
enum Command {
    /// Sample a Gaussian-mixture dataset.
    GenData(GenDataArgs),
    /// Train an MLP classifier.
    Train(TrainArgs),
    /// Calibration and selective-classification metrics for a prediction dump.
    Eval(EvalArgs),
    /// Post-hoc calibration of a prediction dump.
    Calibrate(CalibrateArgs),
    /// Finite-difference check of a loss gradient.
    Gradcheck(GradcheckArgs),
    /// Soft ranks of a score vector.
    Softrank(SoftrankArgs),
    /// Focal, inverse focal and AURC weight curves.
    Weights(WeightsArgs),
}

fn main() -> ExitCode {
    let cli = match Cli::try_parse() {
        Ok(cli) => cli,
        Err(e) => {
            let _ = e.print();
            return if e.use_stderr() { ExitCode::from(1) } else { ExitCode::SUCCESS };
        }
    };
    let cfg = cli.config.as_deref();
    let result = match cli.command {
        Command::GenData(a) => resolve(a, cfg).and_then(commands::gen_data),
        Command::Train(a) => resolve(a, cfg).and_then(commands::train),
        Command::Eval(a) => resolve(a, cfg).and_then(commands::eval),
        Command::Calibrate(a) => resolve(a, cfg).and_then(commands::calibrate),
        Command::Gradcheck(a) => resolve(a, cfg).and_then(commands::gradcheck),
        Command::Softrank(a) => resolve(a, cfg).and_then(commands::softrank),
        Command::Weights(a) => resolve(a, cfg).and_then(commands::weights),
    };
    match result {
        Ok(code) => ExitCode::from(code),
        Err(e) => {
            eprintln!("error: {e}");
            ExitCode::from(e.exit_code())
        }
    }
}
