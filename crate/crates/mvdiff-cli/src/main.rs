//! Command-line front end for the mvdiff engine.
//!
//! Five subcommands cover the full workflow: `dataset-gen` renders a
//! procedural orbit dataset, `train` fits a denoiser on it, `render` turns a
//! trained checkpoint plus one source view into an orbit of novel views,
//! `eval` scores rendered frames, and `ablate` runs the six-mode
//! conditioning/consistency ladder.
//!
//! Every run resolves its settings from (defaults ← config file ← CLI flags)
//! and writes the resolved result next to its outputs as `resolved.kv`, so a
//! run can always be reproduced from its artifacts alone. Exit codes: 0 on
//! success, 1 on runtime failures (I/O, training aborts, metric errors), 2 on
//! usage and config errors (bad flags, unknown or malformed config keys).

mod artifacts;
mod commands;
mod config;

use clap::{Parser, Subcommand};

#[derive(Parser)]
#[command(
    name = "mvdiff",
    version,
    about = "Single-image novel view synthesis with a multi-view diffusion engine"
)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Render a procedural orbit dataset to disk.
    DatasetGen(commands::dataset_gen::Args),
    /// Train a denoiser: single-view conditioning stage or multi-view attention stage.
    Train(commands::train::Args),
    /// Render a camera orbit from one source view with a trained checkpoint.
    Render(commands::render::Args),
    /// Score frames: reference PSNR/SSIM/perceptual plus orbit consistency.
    Eval(commands::eval::Args),
    /// Run the six-mode conditioning/consistency ablation ladder.
    Ablate(commands::ablate::Args),
}

fn main() {
    let cli = Cli::parse();
    let result = match &cli.command {
        Command::DatasetGen(args) => commands::dataset_gen::run(args),
        Command::Train(args) => commands::train::run(args),
        Command::Render(args) => commands::render::run(args),
        Command::Eval(args) => commands::eval::run(args),
        Command::Ablate(args) => commands::ablate::run(args),
    };
    if let Err(e) = result {
        eprintln!("error: {e}");
        let code = match e {
            // Config problems are the user's to fix: same class as bad flags.
            mvdiff::Error::Config(_) => 2,
            _ => 1,
        };
        std::process::exit(code);
    }
}
