//! `kbnet`: train, compress, add a global exit, export and simulate small
//! models for intermittently powered microcontrollers.

mod arch;
mod commands;
mod config;
mod data;
mod fail;
mod run;

use std::process::ExitCode;

use clap::{Parser, Subcommand};

use commands::{CompressArgs, ExportArgs, GnetArgs, ReportArgs, SimulateArgs, TrainArgs};

#[derive(Parser, Debug)]
#[command(name = "kbnet", version, about = "Kilobyte-scale model pipeline for intermittent devices")]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand, Debug)]
enum Command {
    /// Train a baseline model and save its bundle.
    Train(TrainArgs),
    /// Separate and prune the trained model to a size target.
    Compress(CompressArgs),
    /// Train the global exit classifier over the model's exit points.
    GnetTrain(GnetArgs),
    /// Emit C headers with CSR weights.
    Export(ExportArgs),
    /// Simulate inference under harvested power.
    Simulate(SimulateArgs),
    /// Summarize a run directory and verify its recorded hashes.
    Report(ReportArgs),
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::Train(a) => commands::train_cmd(a),
        Command::Compress(a) => commands::compress_cmd(a),
        Command::GnetTrain(a) => commands::gnet_cmd(a),
        Command::Export(a) => commands::export_cmd(a),
        Command::Simulate(a) => commands::simulate_cmd(a),
        Command::Report(a) => commands::report_cmd(a),
    };
    match result {
        Ok(out) => {
            print!("{out}");
            ExitCode::SUCCESS
        }
        Err(e) => {
            eprintln!("kbnet: {e}");
            ExitCode::from(e.exit_code() as u8)
        }
    }
}
