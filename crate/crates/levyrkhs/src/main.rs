use std::path::PathBuf;
use std::process::ExitCode;

use clap::{Parser, Subcommand};
use levyrkhs::LoadedConfig;

#[derive(Parser)]
#[command(
    name = "levyrkhs",
    version,
    about = "Estimate Lévy jump densities from density data"
)]
struct Cli {
    /// More log output (repeat for debug).
    #[arg(short, long, action = clap::ArgAction::Count, global = true)]
    verbose: u8,
    #[command(subcommand)]
    command: Command,
}

#[derive(Subcommand)]
enum Command {
    /// Run the experiment described by a config file.
    Run { config: PathBuf },
    /// Parse and check a config file without running it.
    Validate { config: PathBuf },
}

fn main() -> ExitCode {
    let cli = Cli::parse();
    let level = match cli.verbose {
        0 => log::LevelFilter::Warn,
        1 => log::LevelFilter::Info,
        _ => log::LevelFilter::Debug,
    };
    env_logger::Builder::new()
        .filter_level(level)
        .format_timestamp(None)
        .init();

    let path = match &cli.command {
        Command::Run { config } | Command::Validate { config } => config,
    };
    let loaded = match LoadedConfig::load(path) {
        Ok(l) => l,
        Err(e) => {
            eprintln!("error: {e}");
            return ExitCode::from(2);
        }
    };
    match cli.command {
        Command::Validate { .. } => {
            println!(
                "{}: ok ({})",
                path.display(),
                loaded.config.experiment.name()
            );
            ExitCode::SUCCESS
        }
        Command::Run { .. } => match levyrkhs::run(&loaded) {
            Ok(out) => {
                println!("{}", out.dir.display());
                ExitCode::SUCCESS
            }
            Err(e) => {
                eprintln!("error: {e:#}");
                ExitCode::FAILURE
            }
        },
    }
}
