use clap::Parser;

use warpseg_cli::commands::{self, Command};
use warpseg_cli::CliError;

/// Warping-based video segmentation at desk scale: synthetic compressed
/// sequences, two-step training, evaluation, and benchmarking.
#[derive(Parser)]
#[command(name = "warpseg", version, about)]
struct Cli {
    #[command(subcommand)]
    command: Command,
}

fn run() -> Result<(), CliError> {
    let cli = Cli::try_parse().map_err(|e| {
        // help/version are not errors
        if e.use_stderr() {
            CliError::Usage(e.to_string())
        } else {
            e.print().ok();
            std::process::exit(0);
        }
    })?;
    match cli.command {
        Command::Generate(args) => {
            let spec = commands::resolve_generate(&args)?;
            commands::run_and_record(spec, None)
        }
        Command::Train(args) => {
            let spec = commands::resolve_train(&args)?;
            commands::run_and_record(spec, None)
        }
        Command::Eval(args) => {
            let spec = commands::resolve_eval(&args)?;
            commands::run_and_record(spec, None)
        }
        Command::Bench(args) => {
            let spec = commands::resolve_bench(&args)?;
            commands::run_and_record(spec, None)
        }
        Command::Replay(args) => commands::replay(&args.manifest),
    }
}

fn main() {
    match run() {
        Ok(()) => {}
        Err(e) => {
            eprintln!("{e}");
            std::process::exit(e.exit_code());
        }
    }
}
