//! Command-line surface: dataset generation, training, evaluation,
//! localisation export, similarity-matrix export, and gradient checking.
//!
//! Exit codes: 0 success, 1 usage or config error, 2 data error,
//! 3 numerical failure (non-finite loss or failed gradient check).

mod commands;
mod ppm;

use clap::{Parser, Subcommand};

use commands::{eval, export_sim, gen_synth, gradcheck, localize, train};

#[derive(Parser)]
#[command(
    name = "lcc",
    version,
    about = "Contrastive concept-embedding sign recognition at desk scale"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Generate a synthetic keypoint dataset with known sign windows.
    GenSynth(gen_synth::Args),
    /// Train one model per requested input stream.
    Train(train::Args),
    /// Evaluate checkpoints and their ensemble on a dataset split.
    Eval(eval::Args),
    /// Export per-sample temporal localisation (CSV + heatmap).
    Localize(localize::Args),
    /// Export embedding and word similarity matrices.
    ExportSim(export_sim::Args),
    /// Verify gradients against central finite differences.
    Gradcheck(gradcheck::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match cli.command {
        Command::GenSynth(args) => gen_synth::run(args),
        Command::Train(args) => train::run(args),
        Command::Eval(args) => eval::run(args),
        Command::Localize(args) => localize::run(args),
        Command::ExportSim(args) => export_sim::run(args),
        Command::Gradcheck(args) => gradcheck::run(args),
    };
    if let Err(err) = result {
        eprintln!("error: {err}");
        std::process::exit(err.exit_code());
    }
}
